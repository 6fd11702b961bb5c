"""Run configuration: one TOML file per run, every rational parsed exactly.

Field errors name the dotted field and, when it can be located, the line of
the file that set it.
"""

from __future__ import annotations

import re
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any

from .errors import ConfigError
from .groups import FiniteSubset, GroupModel, Schedule, get_model, word_ball
from .rational import fmt, to_fraction

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

GROUPS = ("Z", "Z2", "heisenberg", "lamplighter")
SUITES = ("cuculescu", "cz", "cancellation", "local", "l2", "weak11", "maximal", "split")
ACTIONS = ("conjugation", "torus")
KNOWN_FIELDS = {
    "group": None, "seed": None, "output": None,
    "schedule": {"base", "lengths"},
    "filtration": {"eps", "c", "depth", "folner_lengths"},
    "cz": {"lambdas"},
    "function": {"file", "d", "support", "instances"},
    "verify": {"suites", "ceiling"},
    "tile": {"window", "scales", "eps", "validate_eps", "svg"},
    "partition": {"domain", "template", "eps", "invariance"},
    "ergodic": {"action", "d", "N", "depth", "threshold"},
}


@dataclass(frozen=True)
class RegionSpec:
    """A finite region: a box ``[0, size)^k`` or a word ball of radius ``size``."""

    size: int
    kind: str

    def build(self, model: GroupModel) -> FiniteSubset:
        if self.kind == "box":
            return FiniteSubset.from_coords(model, model.box_coords(self.size))
        return word_ball(model, self.size)

    def echo(self) -> dict:
        return {"size": self.size, "kind": self.kind}


@dataclass
class TileConfig:
    window: RegionSpec
    scales: list[RegionSpec]
    eps: Fraction
    validate_eps: Fraction
    svg: bool = True


@dataclass
class ClauseSpec:
    kind: str
    eps: Fraction
    K: RegionSpec


@dataclass
class PartitionConfig:
    domain: RegionSpec
    template: RegionSpec
    eps: Fraction
    invariance: list[ClauseSpec] = field(default_factory=list)


@dataclass
class FiltrationConfig:
    eps: Fraction
    c: Fraction
    depth: int
    folner_lengths: list[int] | None = None


@dataclass
class FunctionConfig:
    file: Path | None
    d: int
    support: int
    instances: int


@dataclass
class ErgodicConfig:
    action: str
    d: int
    N: int
    depth: int
    threshold: Fraction | None


@dataclass
class RunConfig:
    group: str
    seed: int | None
    output: Path
    schedule: Schedule
    filtration: FiltrationConfig
    lambdas: list[Fraction]
    function: FunctionConfig
    suites: list[str]
    ceiling: Fraction
    tile: TileConfig | None
    partition: PartitionConfig | None
    ergodic: ErgodicConfig
    source: Path | None = None

    @property
    def model(self) -> GroupModel:
        return get_model(self.group)

    @property
    def filtration_id(self) -> str:
        f = self.filtration
        sched = (f"lengths={list(self.schedule.lengths)}" if self.schedule.lengths is not None
                 else f"base={self.schedule.base}")
        return f"{self.group}/eps={fmt(f.eps)}/c={fmt(f.c)}/depth={f.depth}/{sched}"

    def require_seed(self, what: str) -> int:
        if self.seed is None:
            raise ConfigError(f"field 'seed': required because {what} is sampled")
        return self.seed

    def echo(self) -> dict:
        """Canonical, JSON-ready view of the configuration (fractions as strings)."""
        f = self.filtration
        out: dict[str, Any] = {
            "group": self.group,
            "seed": self.seed,
            "schedule": ({"lengths": list(self.schedule.lengths)} if self.schedule.lengths is not None
                         else {"base": self.schedule.base}),
            "filtration": {"eps": fmt(f.eps), "c": fmt(f.c), "depth": f.depth,
                           "folner_lengths": f.folner_lengths, "id": self.filtration_id},
            "lambdas": [fmt(x) for x in self.lambdas],
            "function": {"file": self.function.file.name if self.function.file else None,
                         "d": self.function.d, "support": self.function.support,
                         "instances": self.function.instances},
            "suites": list(self.suites),
            "ceiling": fmt(self.ceiling),
            "ergodic": {"action": self.ergodic.action, "d": self.ergodic.d, "N": self.ergodic.N,
                        "depth": self.ergodic.depth,
                        "threshold": fmt(self.ergodic.threshold) if self.ergodic.threshold is not None else None},
        }
        if self.tile is not None:
            t = self.tile
            out["tile"] = {"window": t.window.echo(), "scales": [s.echo() for s in t.scales],
                           "eps": fmt(t.eps), "validate_eps": fmt(t.validate_eps), "svg": t.svg}
        if self.partition is not None:
            p = self.partition
            out["partition"] = {"domain": p.domain.echo(), "template": p.template.echo(), "eps": fmt(p.eps),
                                "invariance": [{"kind": c.kind, "eps": fmt(c.eps), "K": c.K.echo()}
                                               for c in p.invariance]}
        return out


# ---- parsing helpers -----------------------------------------------------------------


class _Reader:
    """Typed access to a parsed TOML document with field-level diagnostics."""

    def __init__(self, data: dict, text: str, source: str):
        self.data = data
        self.text = text
        self.source = source

    def _line_of(self, path: str) -> int | None:
        *sections, key = re.sub(r"\[.*$", "", path).split(".")
        header = None
        for i, line in enumerate(self.text.splitlines(), 1):
            s = line.strip()
            m = re.match(r"^\[\s*([^\]]+?)\s*\]$", s)
            if m:
                header = m.group(1)
                if header == path:
                    return i
                continue
            if re.match(rf"^{re.escape(key)}\s*=", s) and (header or "") == ".".join(sections):
                return i
        return None

    def fail(self, path: str, message: str):
        line = self._line_of(path)
        where = f"{self.source}:{line}: " if line else f"{self.source}: "
        raise ConfigError(f"{where}field '{path}': {message}")

    def get(self, path: str, default: Any = ..., value: Any = ...) -> Any:
        if value is not ...:
            return value
        node: Any = self.data
        for part in path.split("."):
            if not isinstance(node, dict) or part not in node:
                if default is ...:
                    self.fail(path, "missing")
                return default
            node = node[part]
        return node

    def integer(self, path: str, default: Any = ..., lo: int | None = None) -> int:
        v = self.get(path, default)
        if v is None:
            return v
        if isinstance(v, bool) or not isinstance(v, int):
            self.fail(path, f"expected an integer, got {v!r}")
        if lo is not None and v < lo:
            self.fail(path, f"must be >= {lo}, got {v}")
        return v

    def rational(self, path: str, default: Any = ..., lo=None, hi=None, strict: bool = True,
                 value: Any = ...) -> Fraction:
        v = self.get(path, default, value)
        if v is None:
            return v
        try:
            q = to_fraction(v)
        except (TypeError, ValueError, ZeroDivisionError):
            self.fail(path, f"expected an exact rational such as \"1/4\", got {v!r}")
        if lo is not None and (q <= lo if strict else q < lo):
            self.fail(path, f"must be {'>' if strict else '>='} {lo}, got {fmt(q)}")
        if hi is not None and (q >= hi if strict else q > hi):
            self.fail(path, f"must be {'<' if strict else '<='} {hi}, got {fmt(q)}")
        return q

    def choice(self, path: str, options, default: Any = ..., value: Any = ...) -> str:
        v = self.get(path, default, value)
        if v not in options:
            self.fail(path, f"expected one of {list(options)}, got {v!r}")
        return v

    def boolean(self, path: str, default: bool) -> bool:
        v = self.get(path, default)
        if not isinstance(v, bool):
            self.fail(path, f"expected true or false, got {v!r}")
        return v

    def int_list(self, path: str, default: Any = ..., lo: int = 1) -> list[int]:
        v = self.get(path, default)
        if v is None:
            return v
        if not isinstance(v, list) or not all(isinstance(x, int) and not isinstance(x, bool) for x in v):
            self.fail(path, f"expected a list of integers, got {v!r}")
        if any(x < lo for x in v):
            self.fail(path, f"entries must be >= {lo}")
        return list(v)

    def region(self, path: str, default_kind: str, default: Any = ..., value: Any = ...) -> RegionSpec:
        v = self.get(path, default, value)
        if isinstance(v, int) and not isinstance(v, bool):
            size, kind = v, default_kind
        elif isinstance(v, dict):
            size = v.get("size")
            kind = v.get("kind", default_kind)
        else:
            self.fail(path, f"expected a size or {{size, kind}}, got {v!r}")
        if not isinstance(size, int) or isinstance(size, bool) or size < 1:
            self.fail(path, f"size must be a positive integer, got {size!r}")
        if kind not in ("box", "ball"):
            self.fail(path, f"kind must be 'box' or 'ball', got {kind!r}")
        return RegionSpec(size, kind)


def _schedule(r: _Reader) -> Schedule:
    lengths = r.get("schedule.lengths", None)
    if lengths is not None:
        lst = r.int_list("schedule.lengths")
        if not lst or any(b <= a for a, b in zip(lst, lst[1:])):
            r.fail("schedule.lengths", "must be a nonempty strictly increasing list")
        return Schedule(lengths=tuple(lst))
    base = r.integer("schedule.base", 4, lo=2)
    return Schedule(base=base)


def parse_config(text: str, source: str = "<config>", base_dir: Path | None = None) -> RunConfig:
    """Parse configuration text; raises :class:`ConfigError` with diagnostics."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: parse error: {exc}") from exc
    r = _Reader(data, text, source)
    for key, value in data.items():
        if key not in KNOWN_FIELDS:
            r.fail(key, "unknown field")
        sub = KNOWN_FIELDS[key]
        if sub is not None:
            if not isinstance(value, dict):
                r.fail(key, "expected a table")
            for k in value:
                if k not in sub:
                    r.fail(f"{key}.{k}", "unknown field")
    group = r.choice("group", GROUPS, "Z")
    kind = "box" if group in ("Z", "Z2") else "ball"
    seed = r.integer("seed", None, lo=0)
    output = Path(r.get("output", "out"))
    if not isinstance(r.get("output", "out"), str):
        r.fail("output", "expected a path string")
    schedule = _schedule(r)

    filt = FiltrationConfig(
        eps=r.rational("filtration.eps", "1/4", lo=0, hi=1),
        c=r.rational("filtration.c", "1/2", lo=0, hi=1),
        depth=r.integer("filtration.depth", 3, lo=0),
        folner_lengths=r.int_list("filtration.folner_lengths", None),
    )
    if filt.c >= 1 - filt.eps:
        r.fail("filtration.c", f"must be < 1 - eps = {fmt(1 - filt.eps)}")
    if filt.folner_lengths is not None and len(filt.folner_lengths) != filt.depth + 1:
        r.fail("filtration.folner_lengths", f"needs depth + 1 = {filt.depth + 1} entries")

    lam_raw = r.get("cz.lambdas", ["2"])
    if not isinstance(lam_raw, list) or not lam_raw:
        r.fail("cz.lambdas", "expected a nonempty list of positive rationals")
    lambdas = []
    for i, x in enumerate(lam_raw):
        try:
            q = to_fraction(x)
        except (TypeError, ValueError, ZeroDivisionError):
            r.fail("cz.lambdas", f"entry {i} is not an exact rational: {x!r}")
        if q <= 0:
            r.fail("cz.lambdas", f"entry {i} must be positive")
        lambdas.append(q)

    fpath = r.get("function.file", None)
    if fpath is not None:
        if not isinstance(fpath, str):
            r.fail("function.file", "expected a path string")
        fpath = Path(fpath)
        if not fpath.is_absolute() and base_dir is not None:
            fpath = base_dir / fpath
    function = FunctionConfig(
        file=fpath,
        d=r.integer("function.d", 2, lo=1),
        support=r.integer("function.support", 200, lo=1),
        instances=r.integer("function.instances", 1, lo=1),
    )
    if function.d > 16:
        r.fail("function.d", "matrix dimension is limited to 16")

    suites_raw = r.get("verify.suites", list(SUITES))
    if not isinstance(suites_raw, list) or any(s not in SUITES for s in suites_raw):
        r.fail("verify.suites", f"expected a list drawn from {list(SUITES)}, got {suites_raw!r}")
    ceiling = r.rational("verify.ceiling", 64, lo=0)

    tile = None
    if "tile" in data:
        eps_t = r.rational("tile.eps", "1/8", lo=0, hi=Fraction(1, 2))
        scales_raw = r.get("tile.scales")
        if not isinstance(scales_raw, list) or not scales_raw:
            r.fail("tile.scales", "expected a nonempty list of sizes")
        scales = []
        for i, s in enumerate(scales_raw):
            scales.append(r.region(f"tile.scales[{i}]", kind, value=s))
        sizes = [s.size for s in scales]
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            r.fail("tile.scales", "sizes must be strictly increasing (small to large)")
        validate_default = fmt(min(4 * eps_t, Fraction(99, 100)))
        tile = TileConfig(
            window=r.region("tile.window", kind),
            scales=scales,
            eps=eps_t,
            validate_eps=r.rational("tile.validate_eps", validate_default, lo=0, hi=1),
            svg=r.boolean("tile.svg", True),
        )

    partition = None
    if "partition" in data:
        clauses = []
        raw = r.get("partition.invariance", [])
        if not isinstance(raw, list):
            r.fail("partition.invariance", "expected an array of tables")
        for i, c in enumerate(raw):
            if not isinstance(c, dict):
                r.fail("partition.invariance", f"entry {i} must be a table")
            where = f"partition.invariance[{i}]"
            if "eps" not in c or "K" not in c:
                r.fail(where, "needs 'eps' and 'K'")
            ck = r.choice(where + ".kind", ("invariant", "boundary-invariant"), value=c.get("kind", "invariant"))
            clauses.append(ClauseSpec(ck, r.rational(where + ".eps", lo=0, value=c["eps"]),
                                      r.region(where + ".K", kind, value=c["K"])))
        partition = PartitionConfig(
            domain=r.region("partition.domain", kind),
            template=r.region("partition.template", kind),
            eps=r.rational("partition.eps", "1/4", lo=0, hi=1),
            invariance=clauses,
        )

    erg = ErgodicConfig(
        action=r.choice("ergodic.action", ACTIONS, "conjugation" if group == "Z" else "torus"),
        d=r.integer("ergodic.d", 3, lo=1),
        N=r.integer("ergodic.N", 16, lo=1),
        depth=r.integer("ergodic.depth", 6, lo=0),
        threshold=r.rational("ergodic.threshold", None, lo=0),
    )
    if "ergodic" in data:
        if erg.action == "conjugation" and group != "Z":
            r.fail("ergodic.action", "conjugation acts through Z; set group = \"Z\"")
        if erg.action == "torus" and group not in ("Z", "Z2"):
            r.fail("ergodic.action", "torus translation needs group Z or Z2")

    return RunConfig(group, seed, output, schedule, filt, lambdas, function, list(suites_raw), ceiling,
                     tile, partition, erg)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    cfg = parse_config(text, str(path), path.parent)
    cfg.source = path
    if not cfg.output.is_absolute():
        cfg.output = (path.parent / cfg.output).resolve()
    return cfg
