"""SVG rendering of Z^2 tilings and partition levels.

Cells are merged into horizontal runs so a 256 x 256 window stays small.
Output is deterministic text.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import PreconditionError
from .groups import FiniteSubset

PALETTE = ("#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2",
           "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac")
MAX_PIXELS = 1024

_HATCH = ('<pattern id="hatch" patternUnits="userSpaceOnUse" width="4" height="4">'
          '<path d="M0,4 l4,-4" stroke="#333" stroke-width="0.7"/></pattern>')


def _require_plane(S: FiniteSubset) -> None:
    if S.model.name != "Z2":
        raise PreconditionError("SVG rendering is only available for Z2")


def runs(coords: np.ndarray) -> np.ndarray:
    """Maximal horizontal runs ``(y, x_start, length)`` covering the cells."""
    if coords.shape[0] == 0:
        return np.empty((0, 3), dtype=np.int64)
    c = np.unique(coords, axis=0)
    order = np.lexsort((c[:, 0], c[:, 1]))
    x, y = c[order, 0], c[order, 1]
    brk = np.ones(x.size, dtype=bool)
    brk[1:] = (y[1:] != y[:-1]) | (x[1:] != x[:-1] + 1)
    starts = np.nonzero(brk)[0]
    ends = np.append(starts[1:], x.size)
    return np.stack([y[starts], x[starts], ends - starts], axis=1)


class _Canvas:
    def __init__(self, frame: np.ndarray, title: str):
        self.x0, self.y0 = int(frame[:, 0].min()), int(frame[:, 1].min())
        self.w = int(frame[:, 0].max()) - self.x0 + 1
        self.h = int(frame[:, 1].max()) - self.y0 + 1
        self.cell = max(1, MAX_PIXELS // max(self.w, self.h))
        self.title = title
        self.body: list[str] = []

    def cells(self, coords: np.ndarray, fill: str, opacity: float = 1.0, stroke: str | None = None) -> None:
        c = self.cell
        attrs = f'fill="{fill}"' + (f' fill-opacity="{opacity:g}"' if opacity < 1 else "")
        if stroke:
            attrs += f' stroke="{stroke}" stroke-width="0.3"'
        parts = []
        for y, x, n in runs(coords):
            # Flip y so larger y is drawn higher.
            py = (self.h - 1 - (int(y) - self.y0)) * c
            parts.append(f'<rect x="{(int(x) - self.x0) * c}" y="{py}" width="{int(n) * c}" height="{c}"/>')
        if parts:
            self.body.append(f"<g {attrs}>" + "".join(parts) + "</g>")

    def legend(self, items: Sequence[tuple[str, str]]) -> None:
        y = self.h * self.cell + 14
        for i, (fill, label) in enumerate(items):
            x = 4 + 150 * i
            self.body.append(f'<rect x="{x}" y="{y - 9}" width="10" height="10" fill="{fill}" stroke="#000" '
                             f'stroke-width="0.3"/><text x="{x + 14}" y="{y}" font-size="10">{label}</text>')

    def render(self) -> str:
        W, H = self.w * self.cell, self.h * self.cell + 22
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
                f'viewBox="0 0 {W} {H}"><title>{self.title}</title><defs>{_HATCH}</defs>'
                f'<rect width="{W}" height="{self.h * self.cell}" fill="#ffffff"/>')
        return head + "".join(self.body) + "</svg>\n"


def tiling_svg(tiling, D: FiniteSubset, title: str = "quasi-tiling") -> str:
    """Tiles colored by scale; cells of ``D`` left uncovered are hatched."""
    _require_plane(D)
    cv = _Canvas(D.coords(), title)
    cv.cells(D.coords(), "#f4f4f4")
    legend = []
    for i in reversed(range(len(tiling.shapes))):
        mat = tiling.tile_matrix(i)
        if not mat.shape[0]:
            continue
        fill = PALETTE[i % len(PALETTE)]
        for row in mat:
            cv.cells(D.model.unpack(row), fill, 0.85, stroke="#222")
        legend.append((fill, f"scale {i + 1}: |S|={len(tiling.shapes[i])}"))
    left = D - tiling.covered_all()
    cv.cells(left.coords(), "url(#hatch)")
    legend.append(("url(#hatch)", f"uncovered: {len(left)}"))
    cv.legend(legend)
    return cv.render()


def partition_svg(P, flags: np.ndarray | None = None, title: str = "partition",
                  frame: FiniteSubset | None = None) -> str:
    """Atoms in alternating colors; atoms with ``flags`` False are hatched gray."""
    model = P.model
    if model.name != "Z2":
        raise PreconditionError("SVG rendering is only available for Z2")
    coords = model.unpack(P.keys)
    cv = _Canvas(frame.coords() if frame is not None else coords, title)
    if frame is not None:
        cv.cells((frame - P.support).coords(), "url(#hatch)")
    ok = np.ones(P.n_atoms, dtype=bool) if flags is None else np.asarray(flags, dtype=bool)
    for i in range(P.n_atoms):
        ac = model.unpack(P.atom_keys(i))
        if ok[i]:
            cv.cells(ac, PALETTE[i % len(PALETTE)], 0.9, stroke="#222")
        else:
            cv.cells(ac, "#cccccc", 1.0, stroke="#222")
            cv.cells(ac, "url(#hatch)")
    cv.legend([(PALETTE[0], f"admissible atoms: {int(ok.sum())}"),
               ("#cccccc", f"other atoms: {int((~ok).sum())}")])
    return cv.render()


def filtration_svgs(seq) -> dict[str, str]:
    """One figure per level of a Z2 filtered sequence."""
    out = {}
    for k in seq.levels():
        P = seq.P[k]
        out[f"level_{k}.svg"] = partition_svg(P, seq.admissible_flags(k),
                                              f"level {k}: {P.n_atoms} atoms")
    return out
