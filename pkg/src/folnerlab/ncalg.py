"""Matrix-valued functions on a discrete group and the operators acting on them.

An :class:`OpValuedFunction` is a finitely supported map ``G -> M_d``
stored as a sorted key array plus a ``(n, d, d)`` complex array.  The trace
``phi(f) = sum_x tr f(x)`` makes this a finite piece of the tensor product
of ``M_d`` with ``l_inf(G)``; all norms below are the ones induced by ``phi``.

Projection-valued fields (Cuculescu projections, ``zeta``) are stored on a
window and read as the identity outside it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import jacobi
from .errors import DegenerateInputError, ModelMismatchError, PreconditionError, WindowOverflowError
from .geometry import LATTICE_PAIR_THRESHOLD, product_set
from .groups import FiniteSubset, GroupModel

PROJECTION_TOL = 1e-10
THRESHOLD_TOL = 1e-10  # eigenvalues within this of lambda count as at-or-below
RANGE_TOL = 1e-9  # eigenvalue cut used to read off ranges of positive operators
JOIN_TOL = 1e-13  # eigenvalue of P+Q scales like angle^2, so a cut near rounding noise


def _adj(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


class OpValuedFunction:
    """Finitely supported ``M_d``-valued function; zero off its support."""

    __slots__ = ("model", "keys", "values")

    def __init__(self, model: GroupModel, keys, values, *, _sorted: bool = False):
        keys = np.asarray(keys, dtype=np.int64)
        values = np.asarray(values, dtype=np.complex128)
        if values.ndim != 3 or values.shape[1] != values.shape[2] or values.shape[0] != keys.size:
            raise ValueError("values must have shape (len(keys), d, d)")
        if not _sorted:
            keys, inv = np.unique(keys, return_inverse=True)
            if keys.size != values.shape[0]:
                summed = np.zeros((keys.size,) + values.shape[1:], dtype=np.complex128)
                np.add.at(summed, inv.ravel(), values)
                values = summed
            else:
                out = np.empty_like(values)
                out[inv.ravel()] = values
                values = out
        self.model = model
        self.keys = keys
        self.values = values

    # ---- construction ----------------------------------------------------------
    @classmethod
    def zeros(cls, model: GroupModel, d: int) -> "OpValuedFunction":
        return cls(model, np.empty(0, np.int64), np.empty((0, d, d)), _sorted=True)

    @classmethod
    def constant(cls, E: FiniteSubset, m) -> "OpValuedFunction":
        """``1_E`` tensor the matrix ``m``."""
        m = np.atleast_2d(np.asarray(m, dtype=np.complex128))
        return cls(E.model, E.keys, np.broadcast_to(m, (len(E),) + m.shape).copy(), _sorted=True)

    @classmethod
    def indicator(cls, E: FiniteSubset, d: int) -> "OpValuedFunction":
        return cls.constant(E, np.eye(d))

    @classmethod
    def from_mapping(cls, model: GroupModel, mapping: dict) -> "OpValuedFunction":
        if not mapping:
            raise DegenerateInputError("cannot infer the dimension of an empty mapping")
        elems = list(mapping)
        keys = model.pack(model.to_coords(elems))
        vals = np.stack([np.atleast_2d(np.asarray(mapping[e], dtype=np.complex128)) for e in elems])
        return cls(model, keys, vals)

    # ---- basic protocol -----------------------------------------------------------
    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def support(self) -> FiniteSubset:
        return FiniteSubset(self.model, self.keys, _sorted=True)

    def __len__(self) -> int:
        return self.keys.size

    def __repr__(self) -> str:
        return f"OpValuedFunction({self.model.name}, |support|={self.keys.size}, d={self.d})"

    def value_at_keys(self, keys: np.ndarray) -> np.ndarray:
        """Values at arbitrary keys (zero off the support)."""
        keys = np.asarray(keys, dtype=np.int64)
        out = np.zeros((keys.size, self.d, self.d), dtype=np.complex128)
        if self.keys.size:
            pos = np.minimum(np.searchsorted(self.keys, keys), self.keys.size - 1)
            hit = self.keys[pos] == keys
            out[hit] = self.values[pos[hit]]
        return out

    def __call__(self, x) -> np.ndarray:
        key = self.model.pack(self.model.to_coords([x]))
        return self.value_at_keys(key)[0]

    def on(self, keys: np.ndarray) -> "OpValuedFunction":
        """Restriction to (or zero-extension onto) the sorted key array ``keys``."""
        keys = np.asarray(keys, dtype=np.int64)
        return OpValuedFunction(self.model, keys, self.value_at_keys(keys), _sorted=True)

    def restrict(self, E: FiniteSubset) -> "OpValuedFunction":
        """``f 1_E``."""
        mask = E.contains_keys(self.keys)
        return OpValuedFunction(self.model, self.keys[mask], self.values[mask], _sorted=True)

    def pruned(self, tol: float = 0.0) -> "OpValuedFunction":
        """Drop support points whose value has max-entry at most ``tol``."""
        keep = np.abs(self.values).max(axis=(1, 2), initial=0.0) > tol
        return OpValuedFunction(self.model, self.keys[keep], self.values[keep], _sorted=True)

    def _aligned(self, other: "OpValuedFunction"):
        if self.model != other.model:
            raise ModelMismatchError(f"{self.model.name} vs {other.model.name}")
        if self.keys.size and other.keys.size and self.d != other.d:
            raise ValueError("matrix dimensions differ")
        if np.array_equal(self.keys, other.keys):
            return self.keys, self.values, other.values
        keys = np.union1d(self.keys, other.keys)
        return keys, self.value_at_keys(keys), other.value_at_keys(keys)

    def __add__(self, other: "OpValuedFunction") -> "OpValuedFunction":
        keys, a, b = self._aligned(other)
        return OpValuedFunction(self.model, keys, a + b, _sorted=True)

    def __sub__(self, other: "OpValuedFunction") -> "OpValuedFunction":
        keys, a, b = self._aligned(other)
        return OpValuedFunction(self.model, keys, a - b, _sorted=True)

    def __neg__(self) -> "OpValuedFunction":
        return OpValuedFunction(self.model, self.keys, -self.values, _sorted=True)

    def __mul__(self, c) -> "OpValuedFunction":
        return OpValuedFunction(self.model, self.keys, self.values * c, _sorted=True)

    __rmul__ = __mul__

    def __matmul__(self, other: "OpValuedFunction") -> "OpValuedFunction":
        """Pointwise matrix product."""
        keys, a, b = self._aligned(other)
        return OpValuedFunction(self.model, keys, a @ b, _sorted=True)

    def adjoint(self) -> "OpValuedFunction":
        return OpValuedFunction(self.model, self.keys, _adj(self.values), _sorted=True)

    def sandwich(self, p: np.ndarray) -> "OpValuedFunction":
        """``p f p`` for a field ``p`` given as values on ``self.keys``."""
        return OpValuedFunction(self.model, self.keys, p @ self.values @ p, _sorted=True)

    def is_hermitian(self, tol: float = jacobi.HERMITIAN_TOL) -> bool:
        if not self.keys.size:
            return True
        scale = np.maximum(1.0, np.linalg.norm(self.values, axis=(1, 2)))
        return bool(np.all(jacobi.hermitian_defect(self.values) <= tol * scale))

    def is_positive(self, tol: float = 1e-12) -> bool:
        if not self.keys.size:
            return True
        if not self.is_hermitian():
            return False
        w, _ = jacobi.eigh(self.values)
        scale = np.maximum(1.0, np.abs(w).max(axis=1))
        return bool(np.all(w[:, 0] >= -tol * scale))

    # ---- text format --------------------------------------------------------------
    def to_text(self) -> str:
        lines = [f"# group: {self.model.name}", f"# dim: {self.d}", f"# size: {self.keys.size}"]
        for x, v in zip(self.model.from_coords(self.model.unpack(self.keys)), self.values):
            entries = " ".join(repr(complex(z)) for z in v.ravel())
            lines.append(f"{self.model.format_element(x)}\t{entries}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, model: GroupModel | None = None) -> "OpValuedFunction":
        from .groups import get_model

        d = None
        elems, vals = [], []
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("group:") and model is None:
                    model = get_model(body.split(":", 1)[1])
                elif body.startswith("dim:"):
                    d = int(body.split(":", 1)[1])
                continue
            if model is None:
                raise ValueError("function text has no '# group:' header")
            token, _, entries = raw.partition("\t")
            z = np.array([complex(s) for s in entries.split()], dtype=np.complex128)
            size = int(round(np.sqrt(z.size)))
            if size * size != z.size or (d is not None and size != d):
                raise ValueError(f"bad matrix entry count on line: {raw!r}")
            d = size
            elems.append(model.parse_element(token.strip()))
            vals.append(z.reshape(size, size))
        if model is None or d is None:
            raise ValueError("cannot infer group model or dimension")
        if not elems:
            return cls.zeros(model, d)
        return cls(model, model.pack(model.to_coords(elems)), np.stack(vals))


def identity_field(keys: np.ndarray, d: int) -> np.ndarray:
    return np.broadcast_to(np.eye(d, dtype=np.complex128), (len(keys), d, d)).copy()


# ---- traces and norms -------------------------------------------------------------


def trace_phi(f: OpValuedFunction) -> float:
    """``phi(f) = sum_x tr f(x)`` (real part)."""
    if not f.keys.size:
        return 0.0
    tr = np.trace(f.values, axis1=1, axis2=2).sum()
    if f.is_hermitian() and abs(tr.imag) > 1e-10 * max(1.0, abs(tr.real)):
        raise PreconditionError(f"Hermitian input with imaginary trace {tr.imag:.3e}")
    return float(tr.real)


def singular_values(values: np.ndarray) -> np.ndarray:
    """Singular values per matrix, descending, from the eigenvalues of ``a* a``."""
    if values.shape[0] == 0:
        return np.empty((0, values.shape[-1]))
    w, _ = jacobi.eigh(_adj(values) @ values, check=False)
    return np.sqrt(np.clip(w, 0.0, None))[:, ::-1]


def abs_values(values: np.ndarray) -> np.ndarray:
    """``|a| = (a* a)^(1/2)`` per matrix."""
    w, V = jacobi.eigh(_adj(values) @ values, check=False)
    s = np.sqrt(np.clip(w, 0.0, None))
    return (V * s[:, None, :]) @ _adj(V)


def lp_norm(f: OpValuedFunction, p) -> float:
    """``phi(|f|^p)^(1/p)``; ``p = inf`` gives the operator sup norm."""
    s = singular_values(f.values)
    if s.size == 0:
        return 0.0
    if p == np.inf or p == float("inf"):
        return float(s.max())
    p = float(p)
    if p < 1:
        raise ValueError("p must be in [1, inf]")
    return float(np.sum(s ** p) ** (1.0 / p))


def weak_l1_from_singular(s: np.ndarray) -> float:
    """``sup_t t #{s > t}``, attained as ``t`` increases to some ``s_(j)``."""
    s = np.sort(np.asarray(s, dtype=float).ravel())[::-1]
    s = s[s > 0]
    if s.size == 0:
        return 0.0
    return float(np.max(np.arange(1, s.size + 1) * s))


def weak_l1(f: OpValuedFunction) -> float:
    return weak_l1_from_singular(singular_values(f.values))


def distribution(f: OpValuedFunction, t: float) -> float:
    """``phi({|f| > t})``: number of singular values above ``t``."""
    return float(np.count_nonzero(singular_values(f.values) > t))


@dataclass(frozen=True)
class NormReport:
    l1: float
    l2: float
    linf: float
    weak: float
    profile: np.ndarray

    @classmethod
    def of(cls, f: OpValuedFunction) -> "NormReport":
        s = singular_values(f.values).ravel()
        prof = np.sort(s)[::-1]
        return cls(float(s.sum()), float(np.sqrt(np.sum(s * s))),
                   float(s.max(initial=0.0)), weak_l1_from_singular(s), prof)


# ---- spectral calculus --------------------------------------------------------------


def spectral_projection(x: np.ndarray, lam: float, side: str = "above") -> np.ndarray:
    """Projection onto the eigenvectors of ``x`` (or ``|x|`` if not Hermitian).

    ``side="above"`` keeps eigenvalues ``> lam + 1e-10``; ``"at-or-below"``
    keeps the rest.  Works on a single matrix or a batch.
    """
    if side not in ("above", "at-or-below"):
        raise ValueError("side must be 'above' or 'at-or-below'")
    x = np.asarray(x, dtype=np.complex128)
    single = x.ndim == 2
    xs = x[None] if single else x
    if xs.shape[0] == 0:
        return xs.copy()
    scale = np.maximum(1.0, np.linalg.norm(xs, axis=(1, 2)))
    herm = np.all(jacobi.hermitian_defect(xs) <= jacobi.HERMITIAN_TOL * scale)
    if herm:
        w, V = jacobi.eigh(xs)
    else:
        w, V = jacobi.eigh(_adj(xs) @ xs, check=False)
        w = np.sqrt(np.clip(w, 0.0, None))
    keep = w > lam + THRESHOLD_TOL
    if side == "at-or-below":
        keep = ~keep
    P = (V * keep[:, None, :]) @ _adj(V)
    return P[0] if single else P


def projection_defect(P: np.ndarray) -> float:
    """``max(||P^2 - P||, ||P - P*||)`` over a batch (Frobenius)."""
    P = np.asarray(P)
    if P.size == 0:
        return 0.0
    a = np.linalg.norm(P @ P - P, axis=(-2, -1))
    b = np.linalg.norm(P - _adj(P), axis=(-2, -1))
    return float(max(a.max(), b.max()))


def join(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Projection onto ``range P + range Q`` (batched)."""
    w, V = jacobi.eigh(P + Q, check=False)
    keep = w > JOIN_TOL
    return (V * keep[..., None, :]) @ _adj(V)


def meet(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Projection onto ``range P & range Q`` (batched)."""
    eye = np.eye(P.shape[-1])
    return eye - join(eye - P, eye - Q)


def join_all(projs: Sequence[np.ndarray], d: int, n: int) -> np.ndarray:
    out = np.zeros((n, d, d), dtype=np.complex128)
    for P in projs:
        out = join(out, P)
    return out


def op_norm(values: np.ndarray) -> np.ndarray:
    """Operator norm per matrix."""
    if values.shape[0] == 0:
        return np.zeros(0)
    return singular_values(values)[:, 0]


# ---- conditional expectations and averages ----------------------------------------


def conditional_expectation(f: OpValuedFunction, P) -> OpValuedFunction:
    """Atom averages of ``f``, spread over every atom that ``f`` meets.

    ``P`` is a :class:`~folnerlab.filtration.Partition`.  Support outside the
    atoms raises :class:`WindowOverflowError` listing the offending elements.
    """
    labels = P.label_of(f.keys)
    outside = labels < 0
    if outside.any():
        bad = f.keys[outside]
        vals = np.abs(f.values[outside]).reshape(bad.size, -1).max(axis=1)
        bad = bad[vals > 0]
        if bad.size:
            elems = f.model.from_coords(f.model.unpack(bad[:10]))
            raise WindowOverflowError(
                f"{bad.size} support points lie outside the partition, e.g. {elems}", missing=bad)
        labels, fk, fv = labels[~outside], f.keys[~outside], f.values[~outside]
    else:
        fk, fv = f.keys, f.values
    d = f.d
    sums = np.zeros((P.n_atoms, d, d), dtype=np.complex128)
    np.add.at(sums, labels, fv)
    touched = np.unique(labels)
    avg = sums / P.sizes[:, None, None]
    mask = np.isin(P.labels, touched)
    return OpValuedFunction(f.model, P.keys[mask], avg[P.labels[mask]], _sorted=True)


def averaging(f: OpValuedFunction, F: FiniteSubset, *, route: str | None = None) -> OpValuedFunction:
    """``A_F f(x) = |F|^-1 sum_{g in F} f(x g)``, supported on ``supp(f) F^-1``.

    Lattices with large inputs use FFT correlation; the support comes from
    the exact integer product so only the values carry rounding.
    """
    if len(F) == 0:
        raise DegenerateInputError("averaging set must be nonempty")
    model = f.model
    if F.model != model:
        raise ModelMismatchError(f"{model.name} vs {F.model.name}")
    if not f.keys.size:
        return OpValuedFunction.zeros(model, f.d)
    if route is None:
        big = f.keys.size * len(F) > LATTICE_PAIR_THRESHOLD
        route = "lattice" if (model.is_lattice and big) else "scatter"
    if route == "lattice" and model.is_lattice:
        out = _lattice_average(f, F)
        if out is not None:
            return out
    return _scatter_average(f, F)


def _scatter_average(f: OpValuedFunction, F: FiniteSubset) -> OpValuedFunction:
    model = f.model
    Y = model.unpack(f.keys)
    ginv = model.inv_coords(F.coords())
    d = f.d
    chunk = max(1, 2_000_000 // max(1, f.keys.size))
    key_parts, val_parts = [], []
    for s in range(0, ginv.shape[0], chunk):
        g = ginv[s:s + chunk]
        # x = y g^-1 receives f(y)
        keys = model.pack(model.mul_coords(Y[None, :, :], g[:, None, :])).ravel()
        vals = np.broadcast_to(f.values[None], (g.shape[0],) + f.values.shape).reshape(-1, d, d)
        u, inv = np.unique(keys, return_inverse=True)
        acc = np.zeros((u.size, d, d), dtype=np.complex128)
        np.add.at(acc, inv.ravel(), vals)
        key_parts.append(u)
        val_parts.append(acc)
    if len(key_parts) == 1:
        keys, vals = key_parts[0], val_parts[0]
    else:
        allk = np.concatenate(key_parts)
        keys, inv = np.unique(allk, return_inverse=True)
        vals = np.zeros((keys.size, d, d), dtype=np.complex128)
        np.add.at(vals, inv.ravel(), np.concatenate(val_parts))
    return OpValuedFunction(model, keys, vals / len(F), _sorted=True)


def _lattice_average(f: OpValuedFunction, F: FiniteSubset) -> OpValuedFunction | None:
    from scipy.signal import fftconvolve

    from .geometry import LATTICE_MAX_CELLS

    model = f.model
    Y = model.unpack(f.keys)
    G = model.inv_coords(F.coords())
    ylo, yhi = Y.min(0), Y.max(0)
    glo, ghi = G.min(0), G.max(0)
    ys = tuple(int(v) for v in yhi - ylo + 1)
    gs = tuple(int(v) for v in ghi - glo + 1)
    out_shape = tuple(a + b - 1 for a, b in zip(ys, gs))
    if np.prod(out_shape, dtype=float) * f.d * f.d > LATTICE_MAX_CELLS:
        return None
    kernel = np.zeros(gs)
    kernel[tuple((G - glo).T)] = 1.0
    support = product_set(f.support, F.inverse())
    X = model.unpack(support.keys)
    idx = tuple((X - (ylo + glo)).T)
    d = f.d
    vals = np.zeros((support.keys.size, d, d), dtype=np.complex128)
    grid = np.zeros(ys)
    pos = tuple((Y - ylo).T)
    for a in range(d):
        for b in range(d):
            comp = f.values[:, a, b]
            for part, unit in ((comp.real, 1.0), (comp.imag, 1j)):
                if not np.any(part):
                    continue
                grid[...] = 0.0
                grid[pos] = part
                conv = fftconvolve(grid, kernel, mode="full")
                vals[:, a, b] += unit * conv[idx]
    return OpValuedFunction(model, support.keys, vals / len(F), _sorted=True)


# ---- square functions ---------------------------------------------------------------


def _family_grid(family: Sequence[OpValuedFunction]):
    if not family:
        raise DegenerateInputError("empty family")
    model = family[0].model
    keys = family[0].keys
    for f in family[1:]:
        if f.model != model:
            raise ModelMismatchError("family members live in different groups")
        keys = np.union1d(keys, f.keys)
    return keys, [f.value_at_keys(keys) for f in family]


@dataclass(frozen=True)
class SquareFunctionReport:
    """Weak-L1 norms of the column and row square functions.

    ``cr_proxy = min(column, row)`` is an upper bound for the sum-space
    norm, not the infimum over decompositions.
    """

    column: float
    row: float
    cr_proxy: float
    cr_proxy_is_upper_bound: bool = True


def column_square(values: Sequence[np.ndarray]) -> np.ndarray:
    """``(sum_k |f_k|^2)`` per point (before the square root)."""
    return sum(_adj(v) @ v for v in values)


def row_square(values: Sequence[np.ndarray]) -> np.ndarray:
    return sum(v @ _adj(v) for v in values)


def _sqrt_psd(S: np.ndarray) -> np.ndarray:
    w, V = jacobi.eigh(S, check=False)
    return (V * np.sqrt(np.clip(w, 0.0, None))[:, None, :]) @ _adj(V)


def square_functions(family: Sequence[OpValuedFunction]) -> SquareFunctionReport:
    keys, vals = _family_grid(family)
    if not keys.size:
        return SquareFunctionReport(0.0, 0.0, 0.0)
    col = weak_l1_from_singular(np.sqrt(np.clip(jacobi.eigh(column_square(vals), check=False)[0], 0, None)))
    row = weak_l1_from_singular(np.sqrt(np.clip(jacobi.eigh(row_square(vals), check=False)[0], 0, None)))
    return SquareFunctionReport(col, row, min(col, row))


@dataclass
class L2EmbeddingResult:
    keys: np.ndarray
    e: np.ndarray
    sup_norm: float
    bound: float

    @property
    def ok(self) -> bool:
        return self.sup_norm <= self.bound * (1 + 1e-10) + 1e-12


def l2_embedding_projection(family: Sequence[OpValuedFunction], lam: float,
                            decomposition=None) -> L2EmbeddingResult:
    """``e = 1_(0,lam](col(g)) & 1_(0,lam](row(h))`` for ``f_k = g_k + h_k``.

    ``e`` lives on the union of supports (identity elsewhere).  Checks
    ``sup_k ||e f_k e||_inf <= 2 lam``.
    """
    if decomposition is None:
        g_fam, h_fam = list(family), None
    else:
        g_fam, h_fam = decomposition
        if len(g_fam) != len(family) or len(h_fam) != len(family):
            raise ValueError("decomposition must match the family length")
    keys, fvals = _family_grid(list(family) + list(g_fam) + (list(h_fam) if h_fam else []))
    n = len(family)
    fv, gv = fvals[:n], fvals[n:2 * n]
    d = fv[0].shape[-1] if keys.size else family[0].d
    e = spectral_projection(_sqrt_psd(column_square(gv)), lam, "at-or-below") if keys.size else \
        np.zeros((0, d, d))
    if h_fam is not None and keys.size:
        hv = fvals[2 * n:]
        e_row = spectral_projection(_sqrt_psd(row_square(hv)), lam, "at-or-below")
        e = meet(e, e_row)
    sup = max((float(op_norm(e @ v @ e).max(initial=0.0)) for v in fv), default=0.0)
    return L2EmbeddingResult(keys, e, sup, 2 * lam)
