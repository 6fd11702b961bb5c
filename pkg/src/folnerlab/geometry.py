"""Set-level geometry: products, K-boundaries, interiors and invariance tests.

All counts are exact integers and every comparison against an epsilon is
done in :class:`fractions.Fraction`.

The workhorse is :func:`translate_counts`, which returns for every ``g`` in
``E K^-1`` the number ``|gK & E|``.  Boundary, interior and the tiling
candidate sets all derive from it.  On Z^d large instances switch to an FFT
correlation on a dense grid; the float result is rounded and the rounding
residual is checked, so the answer stays exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import DegenerateInputError, ModelMismatchError
from .groups import FiniteSubset, GroupModel
from .rational import to_fraction

# Products above this many pairs use the dense-grid route on lattices.
LATTICE_PAIR_THRESHOLD = 200_000
# Dense grids larger than this fall back to sparse enumeration.
LATTICE_MAX_CELLS = 60_000_000
# Pairs per chunk in sparse enumeration.
SPARSE_CHUNK = 4_000_000

_force_route: str | None = None  # "sparse" / "lattice", for tests


def set_route(route: str | None) -> None:
    """Force the product route (``"sparse"``, ``"lattice"`` or ``None`` for auto)."""
    global _force_route
    if route not in (None, "sparse", "lattice"):
        raise ValueError(route)
    _force_route = route


def _same_model(*sets: FiniteSubset) -> GroupModel:
    model = sets[0].model
    for s in sets[1:]:
        if s.model != model:
            raise ModelMismatchError(f"{model.name} vs {s.model.name}")
    return model


def _sparse_pair_counts(model, X, Y, with_counts):
    if X.shape[0] == 0 or Y.shape[0] == 0:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty
    rows = max(1, SPARSE_CHUNK // Y.shape[0])
    parts_k, parts_c = [], []
    for start in range(0, X.shape[0], rows):
        prod = model.mul_coords(X[start:start + rows, None, :], Y[None, :, :])
        keys = model.pack(prod).ravel()
        if with_counts:
            u, c = np.unique(keys, return_counts=True)
            parts_c.append(c)
        else:
            u = np.unique(keys)
        parts_k.append(u)
    if len(parts_k) == 1:
        keys = parts_k[0]
        counts = parts_c[0] if with_counts else None
    elif with_counts:
        allk = np.concatenate(parts_k)
        keys, inv = np.unique(allk, return_inverse=True)
        counts = np.bincount(inv, weights=np.concatenate(parts_c)).astype(np.int64)
    else:
        keys = np.unique(np.concatenate(parts_k))
        counts = None
    return keys, counts


def _grid(coords, lo, shape):
    g = np.zeros(shape, dtype=np.float64)
    g[tuple((coords - lo).T)] = 1.0
    return g


def _lattice_pair_counts(model, X, Y, with_counts):
    """Counts of x + y via FFT convolution of indicator grids, or None if unsuitable."""
    from scipy.signal import fftconvolve

    xlo, xhi = X.min(0), X.max(0)
    ylo, yhi = Y.min(0), Y.max(0)
    xs = tuple(int(v) for v in xhi - xlo + 1)
    ys = tuple(int(v) for v in yhi - ylo + 1)
    out_shape = tuple(a + b - 1 for a, b in zip(xs, ys))
    if max(np.prod(xs, dtype=float), np.prod(out_shape, dtype=float)) > LATTICE_MAX_CELLS:
        return None
    conv = fftconvolve(_grid(X, xlo, xs), _grid(Y, ylo, ys), mode="full")
    rounded = np.rint(conv)
    if np.abs(conv - rounded).max(initial=0.0) >= 0.25:
        return None
    nz = np.nonzero(rounded > 0.5)
    coords = np.stack(nz, axis=-1).astype(np.int64) + (xlo + ylo)
    keys = model.pack(coords)
    counts = rounded[nz].astype(np.int64) if with_counts else None
    # np.nonzero walks the grid in C order, which is the key order on Z^d.
    return keys, counts


def pair_counts(model: GroupModel, X: np.ndarray, Y: np.ndarray, with_counts: bool = True):
    """Keys of all products ``x*y`` (x in X, y in Y coordinates) and multiplicities."""
    route = _force_route
    if route is None:
        big = X.shape[0] * Y.shape[0] > LATTICE_PAIR_THRESHOLD
        route = "lattice" if (model.is_lattice and big) else "sparse"
    if route == "lattice" and model.is_lattice and X.shape[0] and Y.shape[0]:
        res = _lattice_pair_counts(model, X, Y, with_counts)
        if res is not None:
            return res
    return _sparse_pair_counts(model, X, Y, with_counts)


def product_set(E: FiniteSubset, K: FiniteSubset) -> FiniteSubset:
    """The product set ``E K = {e k}``."""
    model = _same_model(E, K)
    keys, _ = pair_counts(model, E.coords(), K.coords(), with_counts=False)
    return FiniteSubset(model, keys, _sorted=True)


def translate_counts(E: FiniteSubset, K: FiniteSubset) -> tuple[np.ndarray, np.ndarray]:
    """For each ``g`` in ``E K^-1`` (sorted keys) the count ``|gK & E|``."""
    model = _same_model(E, K)
    kinv = model.inv_coords(K.coords())
    return pair_counts(model, E.coords(), kinv, with_counts=True)


def core(K: FiniteSubset, E: FiniteSubset) -> FiniteSubset:
    """All ``g`` with ``gK`` contained in ``E``."""
    if len(K) == 0:
        raise DegenerateInputError("K must be nonempty")
    keys, counts = translate_counts(E, K)
    return FiniteSubset(E.model, keys[counts == len(K)], _sorted=True)


def boundary(K: FiniteSubset, E: FiniteSubset) -> FiniteSubset:
    """Union of the translates ``gK`` that meet both ``E`` and its complement."""
    model = _same_model(E, K)
    if len(K) == 0:
        raise DegenerateInputError("K must be nonempty")
    keys, counts = translate_counts(E, K)
    mixed = keys[(counts > 0) & (counts < len(K))]
    if mixed.size == 0:
        return FiniteSubset.empty(model)
    out, _ = pair_counts(model, model.unpack(mixed), K.coords(), with_counts=False)
    return FiniteSubset(model, out, _sorted=True)


def interior(K: FiniteSubset, E: FiniteSubset) -> FiniteSubset:
    return E - boundary(K, E)


def closure(K: FiniteSubset, E: FiniteSubset) -> FiniteSubset:
    return E | boundary(K, E)


def boundary_size(K: FiniteSubset, E: FiniteSubset) -> int:
    return len(boundary(K, E))


@dataclass(frozen=True)
class InvarianceReport:
    """Outcome of one invariance test with the exact excess counts."""

    kind: str
    eps: Fraction
    size: int
    excess: tuple[int, ...]
    holds: bool

    @property
    def ratios(self) -> tuple[Fraction, ...]:
        return tuple(Fraction(x, self.size) for x in self.excess)

    @property
    def ratio(self) -> Fraction:
        return max(self.ratios)

    def __bool__(self) -> bool:
        return self.holds


def _require_nonempty(E: FiniteSubset) -> None:
    if len(E) == 0:
        raise DegenerateInputError("invariance of the empty set is undefined")


def is_invariant(E: FiniteSubset, eps, K: FiniteSubset) -> InvarianceReport:
    """Both ``|EK - E|`` and ``|EK^-1 - E|`` are at most ``eps |E|``."""
    _require_nonempty(E)
    eps = to_fraction(eps)
    right = len(product_set(E, K) - E)
    left = len(product_set(E, K.inverse()) - E)
    bound = eps * len(E)
    return InvarianceReport("invariant", eps, len(E), (right, left), right <= bound and left <= bound)


def is_boundary_invariant(E: FiniteSubset, eps, K: FiniteSubset) -> InvarianceReport:
    """``|boundary_K(E)| <= eps |E|``."""
    _require_nonempty(E)
    eps = to_fraction(eps)
    b = boundary_size(K, E)
    return InvarianceReport("boundary-invariant", eps, len(E), (b,), b <= eps * len(E))


KINDS = ("invariant", "boundary-invariant")


@dataclass(frozen=True)
class InvarianceClause:
    kind: str
    eps: Fraction
    K: FiniteSubset

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"clause kind must be one of {KINDS}")
        object.__setattr__(self, "eps", to_fraction(self.eps))
        if self.eps <= 0:
            raise ValueError("clause epsilon must be positive")
        if len(self.K) == 0:
            raise ValueError("clause set K must be nonempty")

    def check(self, E: FiniteSubset) -> InvarianceReport:
        fn = is_invariant if self.kind == "invariant" else is_boundary_invariant
        return fn(E, self.eps, self.K)

    def trivial(self) -> bool:
        """True when the clause holds for every nonempty set (K is a single point)."""
        return len(self.K) == 1 and (self.kind == "boundary-invariant" or self.K.keys[0] == _identity_key(self.K.model))


def _identity_key(model: GroupModel) -> int:
    return int(model.pack(model.to_coords([model.identity()]))[0])


@dataclass(frozen=True)
class InvarianceCondition:
    """A finite conjunction of invariance clauses."""

    clauses: tuple[InvarianceClause, ...] = ()

    @classmethod
    def of(cls, *triples) -> "InvarianceCondition":
        return cls(tuple(InvarianceClause(k, e, K) for k, e, K in triples))

    def __and__(self, other: "InvarianceCondition") -> "InvarianceCondition":
        return InvarianceCondition(self.clauses + other.clauses)

    def __len__(self) -> int:
        return len(self.clauses)


@dataclass
class ConditionReport:
    holds: bool
    clauses: list[InvarianceReport] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.holds


def check_condition(E: FiniteSubset, condition: InvarianceCondition | Sequence) -> ConditionReport:
    """Evaluate every clause; the condition holds iff all clauses do."""
    if not isinstance(condition, InvarianceCondition):
        condition = InvarianceCondition.of(*condition)
    if not condition.clauses:
        return ConditionReport(True, [], ["empty condition is trivially satisfied"])
    reports = [c.check(E) for c in condition.clauses]
    return ConditionReport(all(r.holds for r in reports), reports)
