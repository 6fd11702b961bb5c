"""Quasi-partitions and regular filtered Folner sequences on a finite window.

A :class:`Partition` stores the window keys once together with an atom label
per key, so conditional expectations reduce to ``bincount`` over labels.

The builder follows the inductive construction: for each level ``n`` it
picks from the canonical Folner schedule

* ``D_n`` - the coverage witness, invariant under the earlier ``F_k`` and
  with a shell ``D_n - D_{n-1}`` that partitions well at level ``n-1``;
* ``B_n`` - a template containing ``D_n`` and the shape used for level-``n``
  atoms;
* ``F_n`` - the averaging set, boundary-invariant with respect to every
  ``B_k`` (``k <= n``) with margin ``2^(k-n)``.

Each shell is then partitioned by descending refinement.  Every choice is
the smallest schedule index that passes the exact checks.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import PreconditionError, WindowExhaustedError
from .geometry import (
    InvarianceClause,
    InvarianceCondition,
    boundary_size,
    check_condition,
    interior,
    is_boundary_invariant,
    is_invariant,
    product_set,
)
from .groups import (
    DEFAULT_SCHEDULE,
    Element,
    FiniteSubset,
    GroupModel,
    Schedule,
    folner_set,
    folner_size,
)
from .rational import to_fraction
from .tiling import eps_disjoint_check, quasi_tile

__all__ = [
    "Partition",
    "AdmissibilityTag",
    "DisjointifyResult",
    "disjointify_tiles",
    "QuasiPartitionResult",
    "build_quasi_partition",
    "BuildConfig",
    "FilteredSequence",
    "build_filtered_sequence",
    "is_admissible_atom",
    "admissible_region",
    "RegularityReport",
    "validate_regular",
    "with_folner_sets",
]


# ---------------------------------------------------------------------------
# partitions


class Partition:
    """Disjoint atoms over a sorted key array.

    ``labels[i]`` is the atom of ``keys[i]``.  Atoms are numbered by their
    smallest key, so two partitions with the same atoms compare equal.
    ``witnesses`` optionally holds, per atom, the key of a group element ``g``
    with ``g A`` inside the template; ``completion`` flags filler atoms.
    """

    def __init__(
        self,
        model: GroupModel,
        keys: np.ndarray,
        labels: np.ndarray,
        level: int = 0,
        witnesses: np.ndarray | None = None,
        completion: np.ndarray | None = None,
    ):
        keys = np.asarray(keys, dtype=np.int64)
        labels = np.asarray(labels, dtype=np.int64)
        order = np.argsort(keys, kind="stable")
        keys, labels = keys[order], labels[order]
        if keys.size and np.any(keys[1:] == keys[:-1]):
            raise ValueError("atoms of a partition must be disjoint")
        uniq, first = np.unique(labels, return_index=True)
        rank = np.empty(uniq.size, dtype=np.int64)
        rank[np.argsort(first, kind="stable")] = np.arange(uniq.size)
        remap = rank[np.searchsorted(uniq, labels)]
        self.model = model
        self.keys = keys
        self.labels = remap
        self.level = level
        n = uniq.size
        perm = np.empty(n, dtype=np.int64)
        perm[rank] = np.arange(n)  # perm[new] = old position in uniq
        self.witnesses = (np.asarray(witnesses, np.int64)[perm] if witnesses is not None
                          else np.full(n, -1, dtype=np.int64))
        self.completion = (np.asarray(completion, bool)[perm] if completion is not None
                           else np.zeros(n, dtype=bool))
        self.sizes = np.bincount(self.labels, minlength=n)
        self._order = np.argsort(self.labels, kind="stable")
        self._starts = np.concatenate([[0], np.cumsum(self.sizes)])

    @classmethod
    def from_atoms(cls, model: GroupModel, atoms: Sequence[FiniteSubset], level: int = 0,
                   witnesses=None, completion=None) -> "Partition":
        atoms = list(atoms)
        if not atoms:
            e = np.empty(0, np.int64)
            return cls(model, e, e, level, e if witnesses is not None else None)
        keys = np.concatenate([a.keys for a in atoms])
        labels = np.repeat(np.arange(len(atoms)), [len(a) for a in atoms])
        if any(len(a) == 0 for a in atoms):
            raise ValueError("atoms must be nonempty")
        return cls(model, keys, labels, level, witnesses, completion)

    @property
    def n_atoms(self) -> int:
        return int(self.sizes.size)

    def __len__(self) -> int:
        return self.n_atoms

    def atom_keys(self, i: int) -> np.ndarray:
        return self.keys[self._order[self._starts[i]:self._starts[i + 1]]]

    def atom(self, i: int) -> FiniteSubset:
        return FiniteSubset(self.model, self.atom_keys(i), _sorted=True)

    def atoms(self) -> list[FiniteSubset]:
        return [self.atom(i) for i in range(self.n_atoms)]

    @property
    def support(self) -> FiniteSubset:
        return FiniteSubset(self.model, self.keys, _sorted=True)

    def label_of(self, keys: np.ndarray) -> np.ndarray:
        """Atom label of each key, ``-1`` for keys outside the partition."""
        keys = np.asarray(keys, dtype=np.int64)
        if self.keys.size == 0:
            return np.full(keys.shape, -1, dtype=np.int64)
        pos = np.minimum(np.searchsorted(self.keys, keys), self.keys.size - 1)
        return np.where(self.keys[pos] == keys, self.labels[pos], -1)

    def witness(self, i: int) -> Element | None:
        w = self.witnesses[i]
        if w == _NO_WITNESS:
            return None
        return self.model.from_coords(self.model.unpack(np.array([w])))[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Partition):
            return NotImplemented
        return (self.model == other.model and np.array_equal(self.keys, other.keys)
                and np.array_equal(self.labels, other.labels))

    def __repr__(self) -> str:
        return f"Partition(level={self.level}, atoms={self.n_atoms}, |support|={self.keys.size})"

    def translated(self, g_coords: np.ndarray) -> "Partition":
        """The partition ``g P``; witnesses become ``w g^-1``."""
        m = self.model
        keys = m.pack(m.mul_coords(g_coords, m.unpack(self.keys)))
        wit = self.witnesses.copy()
        ok = wit != _NO_WITNESS
        if ok.any():
            ginv = m.inv_coords(g_coords)
            wit[ok] = m.pack(m.mul_coords(m.unpack(wit[ok]), ginv))
        return Partition(m, keys, self.labels, self.level, wit, self.completion)


_NO_WITNESS = np.iinfo(np.int64).min


def _normal_form(model: GroupModel, keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(coords of the smallest element m, sorted keys of m^-1 A)."""
    coords = model.unpack(keys)
    m = coords[0]
    shifted = np.sort(model.pack(model.mul_coords(model.inv_coords(m), coords)))
    return m, shifted


# ---------------------------------------------------------------------------
# disjointification of overlapping tiles


@dataclass
class DisjointifyResult:
    atoms: list[FiniteSubset]
    hypotheses: dict[str, bool]
    per_tile: list[dict[str, bool]]

    @property
    def hypotheses_hold(self) -> bool:
        return all(self.hypotheses.values())

    @property
    def conclusions_hold(self) -> bool:
        return all(all(d.values()) for d in self.per_tile)

    @property
    def ok(self) -> bool:
        return not self.hypotheses_hold or self.conclusions_hold


def disjointify_tiles(tiles: Sequence[FiniteSubset], K: FiniteSubset, eps, delta,
                      L: FiniteSubset) -> DisjointifyResult:
    """Shave each tile to its K-interior minus the interiors of earlier tiles.

    ``I_i = Int_K(E_i) - U_{m<i} Int_K(E_m)``.  Hypotheses (eps-disjoint in the
    given order, each tile ``(eps, K^-1 K)``-boundary-invariant and
    ``(delta, L)``-invariant, ``eps < delta < 1/4``) and the per-tile
    conclusions (``|I_i| >= (1 - 2 eps)|E_i|``, ``(4 eps, K)``-boundary
    invariance, ``(6 delta, L)``-invariance, disjointness) are evaluated exactly.
    """
    eps, delta = to_fraction(eps), to_fraction(delta)
    tiles = list(tiles)
    KinvK = product_set(K.inverse(), K)
    hyp = {
        "eps < delta < 1/4": eps < delta < Fraction(1, 4),
        "eps-disjoint": eps_disjoint_check(tiles, eps).given_order_ok if tiles else True,
        "tiles (eps, K^-1 K)-boundary-invariant": all(
            is_boundary_invariant(E, eps, KinvK).holds for E in tiles),
        "tiles (delta, L)-invariant": all(is_invariant(E, delta, L).holds for E in tiles),
    }
    interiors = [interior(K, E) for E in tiles]
    atoms, per_tile = [], []
    seen = FiniteSubset.empty(tiles[0].model) if tiles else None
    union_atoms = seen
    for E, I in zip(tiles, interiors):
        atom = I - seen
        seen = seen | I
        concl = {
            "size >= (1-2eps)|E|": len(atom) >= (1 - 2 * eps) * len(E),
            "disjoint from earlier": atom.isdisjoint(union_atoms),
        }
        if len(atom):
            concl["(4eps, K)-boundary-invariant"] = is_boundary_invariant(atom, 4 * eps, K).holds
            concl["(6delta, L)-invariant"] = is_invariant(atom, 6 * delta, L).holds
        else:
            concl["nonempty"] = False
        union_atoms = union_atoms | atom
        atoms.append(atom)
        per_tile.append(concl)
    return DisjointifyResult(atoms, hyp, per_tile)


# ---------------------------------------------------------------------------
# quasi-partitions


@dataclass
class QuasiPartitionResult:
    partition: Partition
    domain: FiniteSubset
    eps: Fraction
    clauses: dict[str, bool]
    diagnostics: list[str] = field(default_factory=list)
    shapes: list[int] = field(default_factory=list)

    @property
    def covered(self) -> int:
        return int(self.partition.keys.size)

    @property
    def coverage(self) -> Fraction:
        return Fraction(self.covered, len(self.domain)) if len(self.domain) else Fraction(1)

    @property
    def ok(self) -> bool:
        return all(self.clauses.values())


class _ShapeCache:
    """Memo of condition checks keyed by translation class."""

    def __init__(self):
        self.store: dict = {}

    def check(self, model, keys, condition: InvarianceCondition) -> bool:
        if not condition.clauses:
            return True
        _, shape = _normal_form(model, keys)
        k = (id(condition), shape.tobytes())
        if k not in self.store:
            self.store[k] = check_condition(FiniteSubset(model, shape, _sorted=True), condition).holds
        return self.store[k]


def _default_shapes(model, B, condition, schedule, cache):
    shapes = []
    m = 0
    while m < len(schedule):
        try:
            size = folner_size(model, m, schedule)
        except WindowExhaustedError:
            break
        if size > len(B):
            break
        S = folner_set(model, m, schedule)
        if S <= B and cache.check(model, S.keys, condition):
            shapes.append(S)
        m += 1
    if cache.check(model, B.keys, condition) and all(S != B for S in shapes):
        shapes.append(B)
    return shapes


def _verify_witnesses(part: Partition, B: FiniteSubset) -> bool:
    m = part.model
    for i in range(part.n_atoms):
        w = part.witnesses[i]
        if w == _NO_WITNESS:
            return False
        img = m.pack(m.mul_coords(m.unpack(np.array([w]))[0], m.unpack(part.atom_keys(i))))
        if not np.all(B.contains_keys(img)):
            return False
    return True


def build_quasi_partition(
    D: FiniteSubset,
    B: FiniteSubset,
    I: InvarianceCondition | None,
    eps,
    *,
    shapes: Sequence[FiniteSubset] | None = None,
    schedule: Schedule | None = None,
    level: int = 0,
    _cache: _ShapeCache | None = None,
) -> QuasiPartitionResult:
    """Partition most of ``D`` into atoms lying in translates of ``B`` and satisfying ``I``.

    Atoms come from a saturating multi-scale tiling of ``D`` by ``shapes``
    (default: the canonical Folner sets inside ``B`` that satisfy ``I``,
    plus ``B`` itself), made disjoint by removing earlier tiles.  Atoms
    failing ``I`` are dropped.  A coverage below ``(1 - eps)|D|`` is reported
    in ``clauses`` and ``diagnostics`` rather than raised.
    """
    eps = to_fraction(eps)
    I = I if I is not None else InvarianceCondition()
    model = D.model
    cache = _cache or _ShapeCache()
    schedule = schedule or DEFAULT_SCHEDULE
    diagnostics: list[str] = []
    if len(D) == 0:
        part = Partition(model, np.empty(0, np.int64), np.empty(0, np.int64), level,
                         np.empty(0, np.int64))
        return QuasiPartitionResult(part, D, eps, {"coverage": True})

    if len(B) == 1:
        # Singleton template: every atom is a point, witnessed by b d^-1.
        if not cache.check(model, D.keys[:1], I):
            diagnostics.append("singletons violate the invariance condition")
            part = Partition(model, np.empty(0, np.int64), np.empty(0, np.int64), level,
                             np.empty(0, np.int64))
        else:
            b = B.coords()[0]
            wit = model.pack(model.mul_coords(b, model.inv_coords(D.coords())))
            part = Partition(model, D.keys, np.arange(len(D)), level, wit)
        used = [1]
    else:
        if shapes is None:
            shapes = _default_shapes(model, B, I, schedule, cache)
        shapes = sorted(shapes, key=len)
        used = [len(S) for S in shapes]
        if not shapes:
            diagnostics.append("no shape inside B satisfies the invariance condition")
            part = Partition(model, np.empty(0, np.int64), np.empty(0, np.int64), level,
                             np.empty(0, np.int64))
        else:
            part = _partition_by_tiling(D, B, I, eps, shapes, level, cache, diagnostics)

    covered = part.keys.size
    clauses = {
        "atoms disjoint": True,  # enforced by Partition
        "atoms inside translates of B": _verify_witnesses(part, B),
        "atoms satisfy condition": all(
            cache.check(model, part.atom_keys(i), I) for i in range(part.n_atoms)),
        "coverage": covered >= (1 - eps) * len(D),
    }
    if not clauses["coverage"]:
        diagnostics.append(
            f"coverage {covered}/{len(D)} below 1 - {eps}; D may not be invariant enough for B")
    return QuasiPartitionResult(part, D, eps, clauses, diagnostics, used)


def _partition_by_tiling(D, B, I, eps, shapes, level, cache, diagnostics):
    model = D.model
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        tiling = quasi_tile(D, shapes, eps / 4, stop_at=1, bookkeeping=False)
    pos_mask = np.zeros(len(D), dtype=bool)
    keys_out, labels_out, wit = [], [], []
    label = 0
    dropped = 0
    for i in reversed(range(len(shapes))):
        S = shapes[i]
        inside_B = S <= B
        mat = tiling.tile_matrix(i)
        centers = tiling.centers[i]
        for row, c in zip(mat, centers):
            pos = np.searchsorted(D.keys, row)
            fresh = pos[~pos_mask[pos]]
            if fresh.size == 0:
                continue
            atom = D.keys[np.sort(fresh)]
            if not cache.check(model, atom, I):
                dropped += 1
                continue
            pos_mask[fresh] = True
            if inside_B:
                w = model.pack(model.inv_coords(model.unpack(np.array([c]))))[0]
            else:
                w = _find_witness(model, atom, B)
                w = _NO_WITNESS if w is None else w
            keys_out.append(atom)
            labels_out.append(np.full(atom.size, label))
            wit.append(w)
            label += 1
    if dropped:
        diagnostics.append(f"{dropped} disjointified tiles dropped for failing the condition")
    if not keys_out:
        e = np.empty(0, np.int64)
        return Partition(model, e, e, level, e)
    return Partition(model, np.concatenate(keys_out), np.concatenate(labels_out), level,
                     np.array(wit, dtype=np.int64))


def _find_witness(model: GroupModel, atom_keys: np.ndarray, B: FiniteSubset) -> int | None:
    """Smallest-key ``g`` with ``g A`` inside ``B``, scanning ``g`` in ``B a0^-1``."""
    A = model.unpack(atom_keys)
    a0inv = model.inv_coords(A[0])
    cand = np.unique(model.pack(model.mul_coords(B.coords(), a0inv)))
    if A.shape[0] == 1:
        return int(cand[0]) if cand.size else None
    chunk = max(1, 2_000_000 // A.shape[0])
    for s in range(0, cand.size, chunk):
        G = model.unpack(cand[s:s + chunk])
        img = model.pack(model.mul_coords(G[:, None, :], A[None, 1:, :]))
        ok = B.contains_keys(img).all(axis=1)
        if ok.any():
            return int(cand[s + int(np.argmax(ok))])
    return None


# ---------------------------------------------------------------------------
# admissibility


@dataclass(frozen=True)
class AdmissibilityTag:
    """Exact admissibility data for one atom of level ``k``.

    ``margins[n]`` is the larger of the two invariance ratios of the atom
    with respect to ``F_n``; it must not exceed ``bounds[n] = 2^(n-k)``.
    """

    witness: Element | None
    margins: tuple[Fraction, ...]
    bounds: tuple[Fraction, ...]
    completion: bool = False

    @property
    def exact_admissible(self) -> bool:
        return self.witness is not None and all(m <= b for m, b in zip(self.margins, self.bounds))

    @property
    def admissible(self) -> bool:
        return self.exact_admissible and not self.completion


def _tag_for_keys(model, keys, k, F, Bk, memo):
    m, shape = _normal_form(model, keys)
    token = (k, shape.tobytes())
    if token not in memo:
        S = FiniteSubset(model, shape, _sorted=True)
        margins, bounds = [], []
        for n in range(k):
            rep = is_invariant(S, Fraction(1, 2 ** (k - n)), F[n])
            margins.append(rep.ratio)
            bounds.append(rep.eps)
        w = _find_witness(model, shape, Bk)
        memo[token] = (w, tuple(margins), tuple(bounds))
    w, margins, bounds = memo[token]
    if w is None:
        return None, margins, bounds
    # w (m^-1 A) lies in B_k, so (w m^-1) A does too.
    wc = model.mul_coords(model.unpack(np.array([w]))[0], model.inv_coords(m))
    return model.from_coords(wc[None, :])[0], margins, bounds


def is_admissible_atom(A: FiniteSubset, k: int, seq: "FilteredSequence") -> AdmissibilityTag:
    """Exact admissibility of atom ``A`` at level ``k`` of ``seq``."""
    w, margins, bounds = _tag_for_keys(A.model, A.keys, k, seq.F, seq.B[k], {})
    return AdmissibilityTag(w, margins, bounds)


# ---------------------------------------------------------------------------
# filtered sequences


@dataclass
class BuildConfig:
    """Knobs of the filtered-sequence builder.

    ``shell_threshold`` and ``atom_threshold`` are the boundary-invariance
    levels demanded of shells and of level-n atom shapes with respect to the
    previous template (default: ``eps``).  ``max_elements`` caps the size of
    any set the builder will enumerate; ``max_pairs`` caps ``|E| |K|`` for
    products that cannot use the lattice route.
    """

    schedule: Schedule = DEFAULT_SCHEDULE
    shell_threshold: Fraction | None = None
    atom_threshold: Fraction | None = None
    max_index: int = 16
    max_elements: int = 1 << 22
    max_pairs: int = 1 << 27


@dataclass
class FilteredSequence:
    model: GroupModel
    eps: Fraction
    c: Fraction
    depth: int
    F: list[FiniteSubset]
    B: list[FiniteSubset]
    D: list[FiniteSubset]
    P: list[Partition]
    tags: list[list[AdmissibilityTag]]
    eps_levels: list[Fraction] = field(default_factory=list)
    indices: dict[str, list[int]] = field(default_factory=dict)
    conditions: list[InvarianceCondition] = field(default_factory=list)
    shell_coverage: dict = field(default_factory=dict)
    log: list[str] = field(default_factory=list)

    @property
    def window(self) -> FiniteSubset:
        return self.D[-1]

    def admissible_flags(self, k: int) -> np.ndarray:
        return np.array([t.admissible for t in self.tags[k]], dtype=bool)

    def levels(self) -> range:
        return range(self.depth + 1)


def _eps_schedule(eps: Fraction, depth: int) -> list[Fraction]:
    return [eps / 2 ** (n + 1) for n in range(depth + 1)]


def _condition_I(F: list[FiniteSubset], n: int) -> InvarianceCondition:
    clauses = [InvarianceClause("invariant", Fraction(1, 2 ** (n - k)), F[k])
               for k in range(n) if len(F[k]) > 1]
    return InvarianceCondition(tuple(clauses))


def build_filtered_sequence(model: GroupModel, eps, c, depth: int,
                            config: BuildConfig | None = None) -> FilteredSequence:
    """Construct a ``c``-regular filtered Folner sequence of the given depth.

    Raises :class:`WindowExhaustedError` when no schedule index within the
    element budget satisfies the requirements of some level.
    """
    eps, c = to_fraction(eps), to_fraction(c)
    if not (0 < eps < 1 and 0 < c < 1):
        raise ValueError("eps and c must lie in (0, 1)")
    if depth < 1:
        raise ValueError("depth must be at least 1")
    cfg = config or BuildConfig()
    sched = cfg.schedule
    shell_thr = to_fraction(cfg.shell_threshold) if cfg.shell_threshold is not None else eps
    atom_thr = to_fraction(cfg.atom_threshold) if cfg.atom_threshold is not None else eps
    eps_n = _eps_schedule(eps, depth)
    cache = _ShapeCache()
    e = FiniteSubset.singleton(model)
    F, B, D = [e], [e], [e]
    fidx, didx, sidx = [0], [0], [0]
    Iprime = [InvarianceCondition()]
    shell_parts: dict[int, QuasiPartitionResult] = {}
    log: list[str] = []

    def sized(m, invariant=(), bdry=()):
        # Schedule size of index m, or None when over budget.  A boundary
        # test multiplies twice, so its sparse cost is |E| |K|^2.
        try:
            size = folner_size(model, m, sched)
        except WindowExhaustedError:
            return None
        if size > cfg.max_elements:
            return None
        if not model.is_lattice:
            cost = [size * len(K) for K in invariant] + [size * len(K) ** 2 for K in bdry]
            if any(x > cfg.max_pairs for x in cost):
                return None
        return size

    for n in range(1, depth + 1):
        I_n = _condition_I(F, n)
        chosen = None
        for m in range(didx[-1] + 1, cfg.max_index + 1):
            if sized(m, F, [B[-1]]) is None:
                break
            Dc = folner_set(model, m, sched)
            if not D[-1] <= Dc or not check_condition(Dc, I_n).holds:
                continue
            shell = Dc - D[-1]
            if len(B[-1]) > 1 and not is_boundary_invariant(shell, shell_thr, B[-1]).holds:
                log.append(f"level {n}: D candidate {m} shell not boundary-invariant")
                continue
            qp = build_quasi_partition(shell, B[-1], Iprime[-1], eps_n[n - 1], schedule=sched,
                                       level=n - 1, _cache=cache)
            if not qp.ok:
                log.append(f"level {n}: D candidate {m} shell partition failed: {qp.diagnostics}")
                continue
            chosen = (m, Dc, qp)
            break
        if chosen is None:
            raise WindowExhaustedError(
                f"no coverage set D_{n} within the element/pair budget and schedule index "
                f"{cfg.max_index}; enlarge the budget or use a different schedule")
        m, Dn, qp = chosen
        didx.append(m)
        D.append(Dn)
        shell_parts[n] = qp
        Ip_n = I_n
        if len(B[-1]) > 1:
            Ip_n = I_n & InvarianceCondition.of(("boundary-invariant", atom_thr, B[-1]))
        Iprime.append(Ip_n)
        if n < depth:
            shape = None
            for ms in range(0, cfg.max_index + 1):
                if sized(ms, F, [B[-1]]) is None:
                    break
                S = folner_set(model, ms, sched)
                if check_condition(S, Ip_n).holds:
                    shape = (ms, S)
                    break
            if shape is None:
                raise WindowExhaustedError(f"no level-{n} atom shape within budget")
            sidx.append(shape[0])
            Bn = Dn | shape[1]
        else:
            sidx.append(m)
            Bn = Dn
        B.append(Bn)
        chosen_f = None
        for mf in range(fidx[-1], cfg.max_index + 1):
            if sized(mf, (), B) is None:
                break
            Fc = folner_set(model, mf, sched)
            if all(is_boundary_invariant(Fc, Fraction(1, 2 ** (n - k)), B[k]).holds
                   for k in range(n + 1)):
                chosen_f = (mf, Fc)
                break
        if chosen_f is None:
            raise WindowExhaustedError(
                f"no Folner set F_{n} within the element/pair budget is boundary-invariant "
                f"enough for B_0..B_{n}; enlarge the budget or use a different schedule")
        fidx.append(chosen_f[0])
        F.append(chosen_f[1])

    P, coverage = _assemble(model, D, B, Iprime, eps_n, shell_parts, sched, cache, depth)
    seq = FilteredSequence(
        model, eps, c, depth, F, B, D, P, [], eps_n,
        {"F": fidx, "D": didx, "shape": sidx}, Iprime, coverage, log)
    seq.tags = _compute_tags(seq)
    return seq


def _refine(part: Partition, B, I, eps, sched, level, cache, memo):
    """Partition every atom of ``part`` at the next level down (translation-cached)."""
    model = part.model
    keys_out, labels_out, wit_out, comp_out = [], [], [], []
    label = 0
    covered = 0
    for i in range(part.n_atoms):
        ak = part.atom_keys(i)
        if part.completion[i] or ak.size == 1:
            sub = Partition(model, ak, np.zeros(1, np.int64), level,
                            _singleton_witness(model, ak, B))
            comp = part.completion[i:i + 1].copy() if ak.size == 1 else np.ones(1, bool)
        else:
            m, shape = _normal_form(model, ak)
            token = shape.tobytes()
            if token not in memo:
                qp = build_quasi_partition(FiniteSubset(model, shape, _sorted=True), B, I, eps,
                                           schedule=sched, level=level, _cache=cache)
                memo[token] = qp.partition
            sub = memo[token].translated(m)
            comp = np.zeros(sub.n_atoms, dtype=bool)
        covered += sub.keys.size
        keys_out.append(sub.keys)
        labels_out.append(sub.labels + label)
        wit_out.append(sub.witnesses)
        comp_out.append(comp)
        label += sub.n_atoms
    e = np.empty(0, np.int64)
    if not keys_out:
        return Partition(model, e, e, level, e), 0
    return Partition(model, np.concatenate(keys_out), np.concatenate(labels_out), level,
                     np.concatenate(wit_out), np.concatenate(comp_out)), covered


def _singleton_witness(model, keys, B):
    b = B.coords()[0]
    return model.pack(model.mul_coords(b, model.inv_coords(model.unpack(keys))))


def _assemble(model, D, B, Iprime, eps_n, shell_parts, sched, cache, depth):
    window = D[-1]
    per_shell: dict[int, dict[int, Partition]] = {}
    coverage: dict = {}
    for k in range(1, depth + 1):
        levels = {k - 1: shell_parts[k].partition}
        shell_size = len(D[k]) - len(D[k - 1])
        coverage[k] = {k - 1: Fraction(shell_parts[k].covered, shell_size)}
        memo: dict = {}
        for i in range(k - 1, 0, -1):
            levels[i - 1], cov = _refine(levels[i], B[i - 1], Iprime[i - 1], eps_n[i - 1],
                                         sched, i - 1, cache, memo)
            coverage[k][i - 1] = Fraction(cov, shell_size)
        per_shell[k] = levels
    P = []
    wkeys = window.keys
    for n in range(depth + 1):
        labels = np.full(wkeys.size, -1, dtype=np.int64)
        wit, comp = [], []
        pos = np.searchsorted(wkeys, D[n].keys)
        labels[pos] = 0
        wit.append(_find_witness(model, D[n].keys, B[n]))
        comp.append(False)
        nxt = 1
        for k in range(n + 1, depth + 1):
            part = per_shell[k][n]
            pos = np.searchsorted(wkeys, part.keys)
            labels[pos] = part.labels + nxt
            wit.extend(int(w) for w in part.witnesses)
            comp.extend(bool(x) for x in part.completion)
            nxt += part.n_atoms
        rest = np.nonzero(labels < 0)[0]
        if rest.size:
            labels[rest] = nxt + np.arange(rest.size)
            wit.extend(int(w) for w in _singleton_witness(model, wkeys[rest], B[n]))
            comp.extend([True] * rest.size)
        wit_arr = np.array([_NO_WITNESS if w is None else w for w in wit], dtype=np.int64)
        P.append(Partition(model, wkeys, labels, n, wit_arr, np.array(comp, dtype=bool)))
    return P, coverage


def _compute_tags(seq: FilteredSequence) -> list[list[AdmissibilityTag]]:
    tags = []
    memo: dict = {}
    model = seq.model
    for k, part in enumerate(seq.P):
        level_tags = []
        for i in range(part.n_atoms):
            w, margins, bounds = _tag_for_keys(model, part.atom_keys(i), k, seq.F, seq.B[k], memo)
            level_tags.append(AdmissibilityTag(w, margins, bounds, bool(part.completion[i])))
        tags.append(level_tags)
    return tags


def with_folner_sets(seq: FilteredSequence, F: Sequence[FiniteSubset]) -> FilteredSequence:
    """Copy of ``seq`` with the averaging sets replaced and tags recomputed."""
    out = replace(seq, F=list(F))
    out.tags = _compute_tags(out)
    return out


def admissible_region(seq: FilteredSequence) -> FiniteSubset:
    """Window points lying in an admissible atom at every level."""
    keys = seq.window.keys
    mask = np.ones(keys.size, dtype=bool)
    for k, part in enumerate(seq.P):
        if not np.array_equal(part.keys, keys):
            raise PreconditionError(f"level {k} partition does not cover the window")
        mask &= seq.admissible_flags(k)[part.labels]
    return FiniteSubset(seq.model, keys[mask], _sorted=True)


@dataclass
class RegularityRow:
    name: str
    holds: bool
    value: str = ""
    bound: str = ""
    gating: bool = True


@dataclass
class RegularityReport:
    rows: list[RegularityRow]

    @property
    def ok(self) -> bool:
        return all(r.holds for r in self.rows if r.gating)

    def failing(self) -> list[RegularityRow]:
        return [r for r in self.rows if r.gating and not r.holds]


def _nesting_ok(fine: Partition, coarse: Partition) -> bool:
    if not np.array_equal(fine.keys, coarse.keys):
        return False
    pairs = np.unique(np.stack([fine.labels, coarse.labels], axis=1), axis=0)
    return pairs.shape[0] == fine.n_atoms


def validate_regular(seq: FilteredSequence, c=None) -> RegularityReport:
    """Exact regularity checks on every built level.

    Gating rows: nesting, stored admissibility tags, the averaging sets'
    boundary margins against ``B_k`` for ``k <= n``, and the admissible
    share of each ``D_n``.  The reading with ``B_n`` in place of ``B_k`` is
    reported as non-gating rows.
    """
    c = to_fraction(c) if c is not None else seq.c
    rows: list[RegularityRow] = []
    depth = seq.depth
    for n in range(depth + 1):
        for m in range(n + 1, depth + 1):
            rows.append(RegularityRow(f"nesting P{n} in P{m}", _nesting_ok(seq.P[n], seq.P[m])))
    for n in range(depth + 1):
        rows.append(RegularityRow(f"D{n} inside B{n}", seq.D[n] <= seq.B[n]))
    memo: dict = {}
    for k, part in enumerate(seq.P):
        bad = 0
        for i, tag in enumerate(seq.tags[k]):
            if not tag.admissible:
                continue
            w, margins, bounds = _tag_for_keys(seq.model, part.atom_keys(i), k, seq.F,
                                               seq.B[k], memo)
            fresh = AdmissibilityTag(w, margins, bounds)
            if not fresh.exact_admissible or margins != tag.margins:
                bad += 1
                continue
            A = part.atom(i)
            if not A.left_translate(tag.witness) <= seq.B[k]:
                bad += 1
        rows.append(RegularityRow(f"tags re-verified at level {k}", bad == 0, str(bad), "0"))
    for n in range(depth + 1):
        for k in range(n + 1):
            bound = Fraction(1, 2 ** (n - k))
            r = Fraction(boundary_size(seq.B[k], seq.F[n]), len(seq.F[n]))
            rows.append(RegularityRow(f"F{n} boundary margin vs B{k}", r <= bound, str(r), str(bound)))
            if k < n:
                rn = Fraction(boundary_size(seq.B[n], seq.F[n]), len(seq.F[n]))
                rows.append(RegularityRow(f"F{n} boundary margin vs B{n} at 2^({k}-{n})",
                                          rn <= bound, str(rn), str(bound), gating=False))
    adm = admissible_region(seq)
    for n in range(depth + 1):
        share = Fraction(len(seq.D[n] & adm), len(seq.D[n]))
        rows.append(RegularityRow(f"admissible share of D{n}", share >= c, str(share), str(c)))
    for k, cov in seq.shell_coverage.items():
        low = min(cov.values()) if cov else Fraction(1)
        rows.append(RegularityRow(f"shell {k} level-0 coverage", cov.get(0, Fraction(1)) >= 1 - seq.eps,
                                  str(cov.get(0)), str(1 - seq.eps)))
        delta = Fraction(1)
        ok = True
        for i in range(k - 1, -1, -1):
            delta *= 1 - seq.eps_levels[i]
            ok &= 1 - delta <= seq.eps
        rows.append(RegularityRow(f"shell {k} refinement losses", ok and low >= 1 - seq.eps,
                                  str(1 - delta), str(seq.eps)))
    return RegularityReport(rows)
