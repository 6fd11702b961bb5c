"""Ornstein-Weiss style quasi-tilings of finite windows.

Centers are always chosen by a deterministic argmin over the candidate set
``{x : xK inside the residual}``; ties go to the smallest key.  Overlap
counts ``|xK & A|`` are maintained incrementally as tiles are placed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import DegenerateInputError, InsufficientInvarianceError, PreconditionError
from .geometry import (
    InvarianceReport,
    boundary_size,
    core,
    is_boundary_invariant,
    is_invariant,
    translate_counts,
)
from .groups import Element, FiniteSubset, GroupModel
from .rational import to_fraction

__all__ = [
    "DisjointnessReport",
    "eps_disjoint_check",
    "CenterChoice",
    "find_low_overlap_center",
    "GreedyResult",
    "greedy_centers",
    "QuasiTiling",
    "quasi_tile",
    "CoverageReport",
    "validate_quasi_tiling",
    "LemmaCheck",
    "union_invariance_bound",
    "difference_invariance_bound",
]


# ---------------------------------------------------------------------------
# epsilon-disjoint families


@dataclass
class DisjointnessReport:
    holds: bool
    given_order_ok: bool
    order: list[int] | None
    failures: list[int] = field(default_factory=list)
    new_mass: list[int] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.holds


def _index_sets(key_arrays: Sequence[np.ndarray]):
    universe = np.unique(np.concatenate(key_arrays)) if key_arrays else np.empty(0, np.int64)
    return universe, [np.searchsorted(universe, k) for k in key_arrays]


def _scan_order(idx, order, eps, size):
    covered = np.zeros(size, dtype=bool)
    failures, new_mass = [], []
    for i in order:
        ix = idx[i]
        fresh = int(np.count_nonzero(~covered[ix]))
        new_mass.append(fresh)
        if fresh < (1 - eps) * ix.size:
            failures.append(i)
        covered[ix] = True
    return failures, new_mass


def eps_disjoint_check(sets: Sequence, eps, *, reorder_limit: int = 2000) -> DisjointnessReport:
    """Check that each set keeps a ``1 - eps`` share of its mass beyond its predecessors.

    ``sets`` may hold :class:`FiniteSubset` objects or raw key arrays.  If the
    given order fails, a greedy reordering (largest fresh share first) is
    attempted for families of at most ``reorder_limit`` sets.
    """
    eps = to_fraction(eps)
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    arrays = [s.keys if isinstance(s, FiniteSubset) else np.asarray(s, np.int64) for s in sets]
    if not arrays:
        return DisjointnessReport(True, True, [], warnings=["empty family is trivially disjoint"])
    universe, idx = _index_sets(arrays)
    order = list(range(len(arrays)))
    failures, new_mass = _scan_order(idx, order, eps, universe.size)
    if not failures:
        return DisjointnessReport(True, True, order, [], new_mass)
    report = DisjointnessReport(False, False, None, failures, new_mass)
    if len(arrays) > reorder_limit:
        report.warnings.append(f"reordering skipped for {len(arrays)} sets")
        return report
    covered = np.zeros(universe.size, dtype=bool)
    remaining = set(order)
    found = []
    while remaining:
        best, best_share = None, None
        for i in sorted(remaining):
            ix = idx[i]
            share = Fraction(int(np.count_nonzero(~covered[ix])), max(ix.size, 1))
            if share >= 1 - eps and (best_share is None or share > best_share):
                best, best_share = i, share
        if best is None:
            return report
        found.append(best)
        covered[idx[best]] = True
        remaining.remove(best)
    report.holds = True
    report.order = found
    return report


# ---------------------------------------------------------------------------
# candidate scoring


def _key_of(model: GroupModel, element) -> int:
    return int(model.pack(model.to_coords([element]))[0])


class _OverlapTracker:
    """Overlap counts ``|xK & A|`` for candidate centers x as A grows."""

    def __init__(self, model: GroupModel, candidates: np.ndarray, K: FiniteSubset):
        self.model = model
        self.cand = candidates
        self.K = K
        self.counts = np.zeros(candidates.size, dtype=np.int64)
        self.alive = np.ones(candidates.size, dtype=bool)

    def add(self, new_keys: np.ndarray) -> None:
        if new_keys.size == 0 or self.cand.size == 0:
            return
        keys, cnt = translate_counts(FiniteSubset(self.model, new_keys, _sorted=True), self.K)
        pos = np.searchsorted(self.cand, keys)
        ok = pos < self.cand.size
        ok[ok] = self.cand[pos[ok]] == keys[ok]
        self.counts[pos[ok]] += cnt[ok]

    def best(self, allowed: int | None) -> int | None:
        valid = self.alive if allowed is None else self.alive & (self.counts <= allowed)
        if not valid.any():
            return None
        masked = np.where(valid, self.counts, np.iinfo(np.int64).max)
        return int(np.argmin(masked))


@dataclass
class CenterChoice:
    center: Element
    overlap: int
    bound: Fraction
    candidates: int
    precondition: InvarianceReport

    @property
    def within_bound(self) -> bool:
        return self.overlap <= self.bound


def find_low_overlap_center(D: FiniteSubset, K: FiniteSubset, A: FiniteSubset, eps) -> CenterChoice:
    """Center ``x`` with ``xK`` inside ``D`` minimising ``|xK & A|``.

    The boundary-invariance of ``D`` is measured and reported in
    ``precondition``; when it holds, the overlap is guaranteed to be at most
    ``|A| |K| / ((1 - eps)|D|)``.
    """
    eps = to_fraction(eps)
    if not A <= D:
        raise PreconditionError("A must be a subset of D")
    pre = is_boundary_invariant(D, eps, K)
    cand = core(K, D).keys
    if cand.size == 0:
        raise InsufficientInvarianceError("no translate of K fits inside D", pre.ratio)
    tracker = _OverlapTracker(D.model, cand, K)
    tracker.add(A.keys)
    i = tracker.best(None)
    bound = Fraction(len(A) * len(K)) / ((1 - eps) * len(D))
    center = D.model.from_coords(D.model.unpack(cand[i:i + 1]))[0]
    return CenterChoice(center, int(tracker.counts[i]), bound, int(cand.size), pre)


# ---------------------------------------------------------------------------
# greedy packing


@dataclass
class GreedyResult:
    model: GroupModel
    center_keys: np.ndarray
    covered: FiniteSubset
    overlaps: list[int]
    precondition: InvarianceReport | None
    stop_reason: str
    shape_size: int

    @property
    def centers(self) -> list[Element]:
        return self.model.from_coords(self.model.unpack(self.center_keys))

    @property
    def center_set(self) -> FiniteSubset:
        return FiniteSubset(self.model, self.center_keys)

    @property
    def steps(self) -> int:
        return int(self.center_keys.size)


def _tile_keys(model: GroupModel, center_key: int, shape_coords: np.ndarray) -> np.ndarray:
    xc = model.unpack(np.array([center_key], dtype=np.int64))[0]
    return np.sort(model.pack(model.mul_coords(xc, shape_coords)))


def _pack_greedily(
    model: GroupModel,
    region: np.ndarray,
    K: FiniteSubset,
    allowed: int,
    stop: callable,
    on_place: callable | None = None,
):
    """Shared greedy loop: place argmin-overlap translates of K inside ``region``."""
    region_set = FiniteSubset(model, region, _sorted=True)
    cand = core(K, region_set).keys
    tracker = _OverlapTracker(model, cand, K)
    kc = K.coords()
    mask = np.zeros(region.size, dtype=bool)
    n_cov = 0
    chosen, overlaps = [], []
    reason = "exhausted"
    while True:
        if stop(n_cov):
            reason = "target"
            break
        i = tracker.best(allowed)
        if i is None:
            reason = "no admissible candidate"
            break
        tile = _tile_keys(model, int(cand[i]), kc)
        pos = np.searchsorted(region, tile)
        fresh_pos = pos[~mask[pos]]
        mask[fresh_pos] = True
        n_cov += fresh_pos.size
        overlaps.append(int(tracker.counts[i]))
        chosen.append(int(cand[i]))
        tracker.alive[i] = False
        tracker.add(region[fresh_pos])
        if on_place is not None and on_place(fresh_pos.size):
            reason = "global target"
            break
    covered = region[mask]
    return np.array(chosen, dtype=np.int64), covered, overlaps, reason


def greedy_centers(
    D: FiniteSubset,
    K: FiniteSubset,
    eps,
    *,
    mode: str = "coverage",
    strict: bool = False,
) -> GreedyResult:
    """Greedily place ``2 eps``-disjoint translates ``xK`` inside ``D``.

    ``mode="coverage"`` stops as soon as ``|C K| >= eps |D|``; ``mode="saturate"``
    keeps going while some candidate respects the overlap budget.  The
    boundary-invariance precondition is measured; with ``strict=True`` a
    failure raises, otherwise only an inability to reach the coverage goal
    raises.
    """
    eps = to_fraction(eps)
    if not 0 < eps < Fraction(1, 2):
        raise ValueError("eps must lie in (0, 1/2)")
    if len(D) == 0 or len(K) == 0:
        raise DegenerateInputError("D and K must be nonempty")
    pre = is_boundary_invariant(D, eps, K)
    if strict and not pre.holds:
        raise InsufficientInvarianceError(
            f"D is not ({eps}, K)-boundary-invariant (ratio {pre.ratio})", pre.ratio
        )
    allowed = int(2 * eps * len(K))  # floor of 2 eps |K|
    goal = eps * len(D)
    if mode == "coverage":
        stop = lambda n: n >= goal  # noqa: E731
    elif mode == "saturate":
        stop = lambda n: n >= len(D)  # noqa: E731
    else:
        raise ValueError(f"unknown mode {mode!r}")
    keys, covered, overlaps, reason = _pack_greedily(D.model, D.keys, K, allowed, stop)
    if covered.size < goal:
        raise InsufficientInvarianceError(
            f"greedy packing stalled at {covered.size} < {goal} (boundary ratio {pre.ratio})",
            pre.ratio,
        )
    return GreedyResult(
        D.model, keys, FiniteSubset(D.model, covered, _sorted=True), overlaps, pre, reason, len(K)
    )


# ---------------------------------------------------------------------------
# lemma checks


@dataclass
class LemmaCheck:
    """Exact hypothesis/conclusion evaluation for one lemma instance."""

    name: str
    hypotheses: dict[str, bool]
    conclusion: bool | None
    lhs: Fraction | int | None = None
    rhs: Fraction | int | None = None
    details: dict = field(default_factory=dict)

    @property
    def hypotheses_hold(self) -> bool:
        return all(self.hypotheses.values())

    @property
    def ok(self) -> bool:
        """False only when the hypotheses hold and the conclusion fails."""
        return not self.hypotheses_hold or bool(self.conclusion)


def _bdry_ratio_ok(E: FiniteSubset, K: FiniteSubset, eps: Fraction, cache=None) -> bool:
    if len(E) == 0:
        return True
    if cache is not None:
        m = E.min_element()
        model = E.model
        shape = E.left_translate(model.inverse(m))
        key = shape.keys.tobytes()
        if key not in cache:
            cache[key] = boundary_size(K, shape)
        return cache[key] <= eps * len(E)
    return boundary_size(K, E) <= eps * len(E)


def union_invariance_bound(tiles: Sequence[FiniteSubset], eps, delta, K: FiniteSubset) -> LemmaCheck:
    """Union of eps-disjoint (delta, K)-boundary-invariant tiles is
    ``(delta / (1 - eps), K)``-boundary-invariant."""
    eps, delta = to_fraction(eps), to_fraction(delta)
    tiles = list(tiles)
    if not tiles:
        return LemmaCheck("union bound", {"nonempty": False}, None)
    model = tiles[0].model
    cache: dict = {}
    hyp = {
        "eps-disjoint": eps_disjoint_check(tiles, eps).given_order_ok if 0 < eps < 1 else False,
        "tiles boundary-invariant": all(_bdry_ratio_ok(T, K, delta, cache) for T in tiles),
    }
    union = FiniteSubset.union_all(model, tiles)
    b = boundary_size(K, union)
    rhs = delta / (1 - eps) * len(union)
    return LemmaCheck("union bound", hyp, b <= rhs, b, rhs, {"union": len(union)})


def difference_invariance_bound(A: FiniteSubset, B: FiniteSubset, eps, K: FiniteSubset) -> LemmaCheck:
    """``B - A`` is ``(2 eps, K)``-boundary-invariant when ``A`` is a subset of
    ``B`` with ``|A| <= (1 - eps)|B|`` and both are ``(eps^2, K)``-boundary-invariant."""
    eps = to_fraction(eps)
    hyp = {
        "A subset of B": A <= B,
        "|A| <= (1-eps)|B|": len(A) <= (1 - eps) * len(B),
        "A boundary-invariant": _bdry_ratio_ok(A, K, eps * eps),
        "B boundary-invariant": _bdry_ratio_ok(B, K, eps * eps),
    }
    R = B - A
    b = boundary_size(K, R)
    rhs = 2 * eps * len(R)
    return LemmaCheck("difference bound", hyp, b <= rhs, b, rhs, {"difference": len(R)})


# ---------------------------------------------------------------------------
# multi-scale quasi-tiling


@dataclass
class ScaleStep:
    scale: int
    shape_size: int
    centers: int
    new_cover: int
    residual_before: int
    uncovered_after: int
    geometric_bound: Fraction
    within_bound: bool
    stop_reason: str
    residual_ratio: Fraction | None = None
    union_check: LemmaCheck | None = None
    difference_check: LemmaCheck | None = None


@dataclass
class QuasiTiling:
    """Shapes ``S_1..S_N`` (small to large) with their ordered center arrays."""

    target: FiniteSubset
    shapes: list[FiniteSubset]
    centers: list[np.ndarray]
    epsilon: Fraction
    steps: list[ScaleStep] = field(default_factory=list)
    hypotheses: dict[str, bool] = field(default_factory=dict)
    parameters: dict[str, str] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    @property
    def model(self) -> GroupModel:
        return self.target.model

    @property
    def scales(self) -> list[tuple[FiniteSubset, FiniteSubset]]:
        return [(S, FiniteSubset(self.model, C)) for S, C in zip(self.shapes, self.centers)]

    def tile_matrix(self, i: int) -> np.ndarray:
        """Keys of every tile of scale ``i`` (0-based), one row per center, rows sorted."""
        C = self.centers[i]
        if C.size == 0:
            return np.empty((0, len(self.shapes[i])), dtype=np.int64)
        m = self.model
        prod = m.mul_coords(m.unpack(C)[:, None, :], self.shapes[i].coords()[None, :, :])
        return np.sort(m.pack(prod), axis=1)

    def tiles(self, i: int) -> list[FiniteSubset]:
        return [FiniteSubset(self.model, row, _sorted=True) for row in self.tile_matrix(i)]

    def covered(self, i: int) -> FiniteSubset:
        return FiniteSubset(self.model, self.tile_matrix(i).ravel())

    def covered_all(self) -> FiniteSubset:
        return FiniteSubset.union_all(self.model, [self.covered(i) for i in range(len(self.shapes))])

    def moved(self, i: int, j: int, new_center) -> "QuasiTiling":
        """Copy with center ``j`` of scale ``i`` replaced (for forced violations)."""
        centers = [c.copy() for c in self.centers]
        centers[i][j] = _key_of(self.model, new_center)
        return QuasiTiling(self.target, self.shapes, centers, self.epsilon)


def quasi_tile(
    D: FiniteSubset,
    scales: Sequence[FiniteSubset],
    eps,
    *,
    stop_at=None,
    disjointness=None,
    bookkeeping: bool = True,
) -> QuasiTiling:
    """Tile ``D`` with translates of ``scales`` (listed small to large).

    Scales are processed from the largest down.  Each scale is packed greedily
    into the residual left by the larger ones, so translates of different
    scales never meet.  Within a scale the overlap budget is
    ``disjointness * |S|`` (default ``2 eps``).  The run stops once the
    covered share reaches ``stop_at`` (default ``1 - 4 eps``).

    The covering hypotheses ``(1 - eps)^N <= eps`` and ``S_i`` being
    ``(eps^3, S_j)``-invariant for ``j < i`` are evaluated and reported;
    violations only produce warnings.
    """
    eps = to_fraction(eps)
    if not 0 < eps < Fraction(1, 2):
        raise ValueError("eps must lie in (0, 1/2)")
    shapes = list(scales)
    if not shapes:
        raise DegenerateInputError("at least one scale is required")
    model = D.model
    N = len(shapes)
    stop_at = to_fraction(stop_at) if stop_at is not None else 1 - 4 * eps
    disjointness = to_fraction(disjointness) if disjointness is not None else 2 * eps
    goal = stop_at * len(D)

    hyp = {"(1-eps)^N <= eps": (1 - eps) ** N <= eps}
    cube = eps ** 3
    nested_ok = True
    for i in range(N):
        for j in range(i):
            if not is_invariant(shapes[i], cube, shapes[j]).holds:
                nested_ok = False
    hyp["S_i (eps^3, S_j)-invariant for j < i"] = nested_ok
    tiling = QuasiTiling(D, shapes, [np.empty(0, np.int64)] * N, eps, hypotheses=hyp)
    tiling.parameters = {
        "eps": str(eps),
        "overlap budget per scale": str(disjointness),
        "stop share": str(stop_at),
        "validation parameter": str(4 * eps),
    }
    for name, ok in hyp.items():
        if not ok:
            tiling.warnings.append(f"hypothesis fails: {name}")

    residual = D.keys
    covered_total = 0
    done = covered_total >= goal
    for i in reversed(range(N)):
        S = shapes[i]
        before = residual.size
        if done:
            step_centers = np.empty(0, np.int64)
            cov = np.empty(0, np.int64)
            reason = "global target reached earlier"
        else:
            allowed = int(disjointness * len(S))
            counter = {"n": covered_total}

            def on_place(n_new, counter=counter):
                counter["n"] += n_new
                return counter["n"] >= goal

            step_centers, cov, _, reason = _pack_greedily(
                model, residual, S, allowed, lambda n: False, on_place
            )
            covered_total += cov.size
            done = covered_total >= goal
        tiling.centers[i] = step_centers
        new_residual = np.setdiff1d(residual, cov, assume_unique=True)
        bound = (1 - eps) ** (N - i) * len(D)
        uncovered = new_residual.size
        step = ScaleStep(
            scale=i + 1,
            shape_size=len(S),
            centers=int(step_centers.size),
            new_cover=int(cov.size),
            residual_before=int(before),
            uncovered_after=int(uncovered),
            geometric_bound=bound,
            within_bound=uncovered <= max(bound, 4 * eps * len(D)),
            stop_reason=reason,
        )
        if bookkeeping and i > 0 and uncovered and step_centers.size:
            nxt = shapes[i - 1]
            res_set = FiniteSubset(model, new_residual, _sorted=True)
            step.residual_ratio = Fraction(boundary_size(nxt, res_set), uncovered)
            delta = Fraction(boundary_size(nxt, S), len(S))
            step.union_check = union_invariance_bound(
                tiling.tiles(i), disjointness, delta, nxt
            ) if step_centers.size <= 4096 else None
            step.difference_check = difference_invariance_bound(
                FiniteSubset(model, cov, _sorted=True),
                FiniteSubset(model, residual, _sorted=True),
                eps,
                nxt,
            )
        tiling.steps.append(step)
        residual = new_residual
    if tiling.warnings:
        warnings.warn("; ".join(tiling.warnings), stacklevel=2)
    return tiling


@dataclass
class CoverageReport:
    covered: int
    total: int
    eps: Fraction
    clauses: dict[str, bool]
    per_scale: list[DisjointnessReport]
    details: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.clauses.values())

    @property
    def share(self) -> Fraction:
        return Fraction(self.covered, self.total) if self.total else Fraction(1)


def validate_quasi_tiling(t: QuasiTiling, D: FiniteSubset, eps) -> CoverageReport:
    """Check the four quasi-tiling clauses exactly.

    1. translates of each shape are ``eps``-disjoint (in construction order,
       or in a greedy reordering);
    2. the covered sets of different shapes are pairwise disjoint;
    3. every covered set lies in ``D``;
    4. the union covers at least ``(1 - eps)|D|``.
    """
    eps = to_fraction(eps)
    per_scale = []
    unions = []
    for i in range(len(t.shapes)):
        mat = t.tile_matrix(i)
        per_scale.append(eps_disjoint_check(list(mat), eps) if mat.shape[0] else
                         DisjointnessReport(True, True, []))
        unions.append(np.unique(mat.ravel()))
    allkeys = np.concatenate(unions) if unions else np.empty(0, np.int64)
    union = np.unique(allkeys)
    clause2 = union.size == allkeys.size
    inside = FiniteSubset(D.model, union, _sorted=True)
    clause3 = inside <= D
    covered = len(inside & D)
    clauses = {
        "1 eps-disjoint per scale": all(r.holds for r in per_scale),
        "2 scales pairwise disjoint": bool(clause2),
        "3 contained in D": bool(clause3),
        "4 coverage": covered >= (1 - eps) * len(D),
    }
    return CoverageReport(covered, len(D), eps, clauses, per_scale,
                          {"per scale cover": [int(u.size) for u in unions]})
