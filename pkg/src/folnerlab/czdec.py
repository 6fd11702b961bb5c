"""Cuculescu projections and the Calderon-Zygmund decomposition ``f = g + h + b``.

Everything lives on the window keys ``W`` shared by all partitions of the
filtration.  Level-indexed objects are ``(len(W), d, d)`` arrays; projection
fields are read as the identity outside ``W``.

Conventions at finite depth ``K``:

* ``q_{K+1} = 1`` and the conditional expectation one level above the top is
  zero, so ``p_K = 1 - q_K`` and ``g_K = 0``;
* ``q_k = 1_{[0, lam]}(q_{k+1} f_k q_{k+1}) - (1 - q_{k+1})``, i.e. the
  at-or-below spectral projection computed inside the range of ``q_{k+1}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import jacobi
from .errors import PreconditionError, WindowOverflowError
from .geometry import product_set
from .groups import FiniteSubset
from .ncalg import (
    OpValuedFunction,
    RANGE_TOL,
    _adj,
    op_norm,
    projection_defect,
    spectral_projection,
    trace_phi,
)

TOL = 1e-10


def _partitions(filtration) -> list:
    return list(filtration.P) if hasattr(filtration, "P") else list(filtration)


def _window(parts) -> np.ndarray:
    keys = parts[0].keys
    for k, P in enumerate(parts):
        if not np.array_equal(P.keys, keys):
            raise PreconditionError(f"partition {k} does not cover the common window")
    return keys


def _level_averages(values: np.ndarray, P) -> np.ndarray:
    d = values.shape[-1]
    sums = np.zeros((P.n_atoms, d, d), dtype=np.complex128)
    np.add.at(sums, P.labels, values)
    return sums / P.sizes[:, None, None]


def expect(values: np.ndarray, P) -> np.ndarray:
    """Conditional expectation of a window-indexed array onto ``P``."""
    return _level_averages(values, P)[P.labels]


def _representatives(P) -> np.ndarray:
    _, first = np.unique(P.labels, return_index=True)
    return first


@dataclass
class CuculescuResult:
    """Projection ladder ``q_0 <= ... <= q_{K+1} = 1`` on the window."""

    lam: float
    keys: np.ndarray
    q: list[np.ndarray]
    p: list[np.ndarray]
    f_levels: list[np.ndarray]
    checks: dict[str, float] = field(default_factory=dict)
    passed: dict[str, bool] = field(default_factory=dict)

    @property
    def depth(self) -> int:
        return len(self.p) - 1

    @property
    def ok(self) -> bool:
        return all(self.passed.values())

    def atom_value(self, which: str, k: int, P, atom: int) -> np.ndarray:
        arr = (self.q if which == "q" else self.p)[k]
        return arr[np.searchsorted(self.keys, P.atom_keys(atom)[0])]


def _window_values(f: OpValuedFunction, keys: np.ndarray) -> np.ndarray:
    inside = np.isin(f.keys, keys)
    if not inside.all():
        vals = np.abs(f.values[~inside]).reshape((~inside).sum(), -1).max(axis=1)
        if np.any(vals > 0):
            raise WindowOverflowError(
                f"{int((vals > 0).sum())} support points of f lie outside the filtration window",
                missing=f.keys[~inside][vals > 0])
    return f.on(keys).values


def cuculescu(f: OpValuedFunction, lam: float, filtration) -> CuculescuResult:
    """Descending Cuculescu recursion with its four defining properties checked.

    (1) ``q_k f_k q_k <= lam``; (2) ``q_k`` commutes with
    ``q_{k+1} f_k q_{k+1}``; (3) ``q_k`` is constant on level-``k`` atoms and
    ``q_k <= q_{k+1}``; (4) ``lam phi(1 - q_0) <= ||f||_1``.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    if not f.is_positive():
        raise PreconditionError("f must be positive semidefinite at every point")
    parts = _partitions(filtration)
    keys = _window(parts)
    if np.any(parts[0].sizes != 1):
        raise PreconditionError("level-0 atoms must be singletons")
    fw = _window_values(f, keys)
    d = f.d
    K = len(parts) - 1
    eye = np.eye(d)
    f_levels = [expect(fw, P) if k else fw for k, P in enumerate(parts)]
    q: list[np.ndarray] = [None] * (K + 2)  # type: ignore[list-item]
    q[K + 1] = np.broadcast_to(eye, fw.shape).astype(np.complex128)
    worst = {"(1) q f q <= lam": 0.0, "(2) commutation": 0.0, "(3) constant on atoms": 0.0,
             "(3) increasing": 0.0, "projection defect": 0.0}
    scale = max(1.0, float(np.abs(fw).max(initial=0.0)))
    for k in range(K, -1, -1):
        P = parts[k]
        reps = _representatives(P)
        qa = q[k + 1][reps]
        fa = f_levels[k][reps]
        X = qa @ fa @ qa
        X = 0.5 * (X + _adj(X))
        below = spectral_projection(X, lam, "at-or-below")
        qk_atoms = below - (eye - qa)
        qk_atoms = 0.5 * (qk_atoms + _adj(qk_atoms))
        q[k] = qk_atoms[P.labels]
        # (1) and (2), per atom
        Y = qk_atoms @ fa @ qk_atoms
        if Y.shape[0]:
            w, _ = jacobi.eigh(0.5 * (Y + _adj(Y)), check=False)
            worst["(1) q f q <= lam"] = max(worst["(1) q f q <= lam"], float(w[:, -1].max() - lam))
            comm = qk_atoms @ X - X @ qk_atoms
            worst["(2) commutation"] = max(worst["(2) commutation"], float(op_norm(comm).max()))
            gap, _ = jacobi.eigh(qa - qk_atoms, check=False)
            worst["(3) increasing"] = max(worst["(3) increasing"], float(-gap[:, 0].min()))
        worst["(3) constant on atoms"] = max(
            worst["(3) constant on atoms"],
            float(np.abs(q[k] - q[k][reps][P.labels]).max(initial=0.0)))
        worst["projection defect"] = max(worst["projection defect"], projection_defect(qk_atoms))
    p = [q[k + 1] - q[k] for k in range(K + 1)]
    l1 = trace_phi(OpValuedFunction(f.model, keys, fw, _sorted=True))
    lhs4 = lam * float(np.real(np.trace(q[K + 1] - q[0], axis1=1, axis2=2)).sum())
    checks = dict(worst)
    checks["(4) lam phi(1-q0)"] = lhs4
    checks["(4) ||f||_1"] = l1
    passed = {
        "(1) q f q <= lam": worst["(1) q f q <= lam"] <= TOL * max(1.0, lam),
        "(2) commutation": worst["(2) commutation"] <= TOL * scale,
        "(3) constant on atoms": worst["(3) constant on atoms"] <= TOL,
        "(3) increasing": worst["(3) increasing"] <= TOL,
        "projection defect": worst["projection defect"] <= TOL,
        "(4) lam phi(1-q0) <= ||f||_1": lhs4 <= l1,
    }
    return CuculescuResult(lam, keys, q, p, f_levels, checks, passed)


@dataclass
class CZParts:
    """Pieces of ``f = g + sum h_k + sum b_k^d + sum b_k^off`` on the window."""

    model: object
    keys: np.ndarray
    lam: float
    f: np.ndarray
    cc: CuculescuResult
    g: np.ndarray
    g_levels: list[np.ndarray]
    h: list[np.ndarray]
    bd: list[np.ndarray]
    boff: list[np.ndarray]
    parts: list = field(default_factory=list, repr=False)

    @property
    def depth(self) -> int:
        return len(self.h) - 1

    def func(self, arr: np.ndarray) -> OpValuedFunction:
        return OpValuedFunction(self.model, self.keys, arr, _sorted=True)

    def b(self) -> np.ndarray:
        return sum(self.bd) + sum(self.boff)

    def reconstruction_residual(self) -> float:
        total = self.g + sum(self.h) + self.b()
        return trace_norm(self.f - total)


def trace_norm(values: np.ndarray) -> float:
    """``sum_x ||v(x)||_1`` (Schatten-1 per point)."""
    if values.shape[0] == 0:
        return 0.0
    from .ncalg import singular_values

    return float(singular_values(values).sum())


def cz_decompose(f: OpValuedFunction, lam: float, filtration) -> CZParts:
    """Assemble good, hybrid and bad parts from the Cuculescu ladder."""
    parts = _partitions(filtration)
    cc = cuculescu(f, lam, parts)
    K = cc.depth
    fw = cc.f_levels[0]
    q, p, fl = cc.q, cc.p, cc.f_levels
    g_levels, h, bd, boff = [], [], [], []
    for k in range(K + 1):
        pfp = p[k] @ fl[k] @ p[k]
        gk = expect(pfp, parts[k + 1]) if k < K else np.zeros_like(pfp)
        g_levels.append(gk)
        h.append(pfp - gk)
        bd.append(p[k] @ (fw - fl[k]) @ p[k])
        boff.append(p[k] @ fw @ q[k] + q[k] @ fw @ p[k])
    g = q[0] @ fw @ q[0] + sum(g_levels)
    return CZParts(f.model, cc.keys, lam, fw, cc, g, g_levels, h, bd, boff, parts)


@dataclass
class CheckRow:
    name: str
    value: float
    bound: float
    holds: bool
    asserted: bool = True


@dataclass
class CheckReport:
    rows: list[CheckRow]

    @property
    def ok(self) -> bool:
        return all(r.holds for r in self.rows if r.asserted)

    def row(self, name: str) -> CheckRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)


def _rel(value, bound, norm) -> bool:
    return value <= bound + 1e-8 * max(1.0, norm)


def verify_good(parts: CZParts, f: OpValuedFunction | None = None, lam: float | None = None) -> CheckReport:
    """``||g||_2^2 <= 2 lam ||f||_1`` and the identity for ``g_k``."""
    lam = parts.lam if lam is None else lam
    l1 = trace_norm(parts.f)
    g2 = float(np.real(np.trace(_adj(parts.g) @ parts.g, axis1=1, axis2=2)).sum())
    rows = [CheckRow("||g||_2^2 <= 2 lam ||f||_1", g2, 2 * lam * l1, _rel(g2, 2 * lam * l1, l1))]
    q, fl, P = parts.cc.q, parts.cc.f_levels, parts.parts
    K = parts.depth
    worst = 0.0
    for k in range(K + 1):
        nxt = q[k + 1] @ fl[k + 1] @ q[k + 1] if k < K else np.zeros_like(fl[k])
        inner = q[k] @ fl[k] @ q[k]
        rhs = nxt - (expect(inner, P[k + 1]) if k < K else 0.0)
        worst = max(worst, float(np.abs(parts.g_levels[k] - rhs).max(initial=0.0)))
    rows.append(CheckRow("g_k = q_{k+1} f_{k+1} q_{k+1} - E_{k+1}(q_k f_k q_k)", worst, TOL,
                         worst <= TOL * max(1.0, l1)))
    positive = float(np.abs(parts.g - _adj(parts.g)).max(initial=0.0))
    rows.append(CheckRow("g Hermitian", positive, TOL, positive <= TOL * max(1.0, l1)))
    return CheckReport(rows)


def verify_hybrid(parts: CZParts, f: OpValuedFunction | None = None) -> CheckReport:
    """``sum ||h_k||_1 <= 2 ||f||_1``, ``E_{k+1}(h_k) = 0``, ``h_k`` level-k measurable."""
    l1 = trace_norm(parts.f)
    total = sum(trace_norm(hk) for hk in parts.h)
    P = parts.parts
    K = parts.depth
    mart, meas = 0.0, 0.0
    for k, hk in enumerate(parts.h):
        if k < K:
            mart = max(mart, float(np.abs(expect(hk, P[k + 1])).max(initial=0.0)))
        meas = max(meas, float(np.abs(hk - expect(hk, P[k])).max(initial=0.0)))
    scale = max(1.0, float(np.abs(parts.f).max(initial=0.0)))
    return CheckReport([
        CheckRow("sum ||h_k||_1 <= 2 ||f||_1", total, 2 * l1, _rel(total, 2 * l1, l1)),
        CheckRow("E_{k+1}(h_k) = 0", mart, TOL, mart <= TOL * scale),
        CheckRow("h_k constant on level-k atoms", meas, TOL, meas <= TOL * scale),
    ])


def _is_union_of_atoms(E: FiniteSubset, P) -> bool:
    labels = P.label_of(E.keys)
    if np.any(labels < 0):
        return False
    touched = np.unique(labels)
    return int(P.sizes[touched].sum()) == len(E)


def _phi_pf(p: np.ndarray, f: np.ndarray, mask: np.ndarray | None = None) -> float:
    tr = np.real(np.trace(p @ f, axis1=1, axis2=2))
    return float(tr[mask].sum() if mask is not None else tr.sum())


def verify_bad(parts: CZParts, f: OpValuedFunction | None = None, lam: float | None = None,
               E: FiniteSubset | None = None, K: FiniteSubset | None = None,
               levels: Sequence[int] | None = None) -> CheckReport:
    """Diagonal and off-diagonal bad-part bounds and their martingale clauses.

    The off-diagonal clause ``||sum_{x in K} b_k^off(x)||_1 <= 2 phi(1_E p_k f)``
    is asserted at every level where ``E`` is a union of atoms.  The variant
    with an extra factor ``lam`` is reported unasserted.
    """
    lam = parts.lam if lam is None else lam
    P = parts.parts
    fw = parts.f
    l1 = trace_norm(fw)
    scale = max(1.0, float(np.abs(fw).max(initial=0.0)))
    rows: list[CheckRow] = []
    for k in range(parts.depth + 1):
        phi_pf = _phi_pf(parts.cc.p[k], fw)
        nd = trace_norm(parts.bd[k])
        rows.append(CheckRow(f"level {k}: ||b^d||_1 <= 2 phi(p f)", nd, 2 * phi_pf, _rel(nd, 2 * phi_pf, l1)))
        md = float(np.abs(expect(parts.bd[k], P[k])).max(initial=0.0))
        mo = float(np.abs(expect(parts.boff[k], P[k])).max(initial=0.0))
        rows.append(CheckRow(f"level {k}: E_k(b^d) = 0", md, TOL, md <= TOL * scale))
        rows.append(CheckRow(f"level {k}: E_k(b^off) = 0", mo, TOL, mo <= TOL * scale))
    if E is not None:
        K = E if K is None else K
        if not K <= E:
            raise PreconditionError("K must be a subset of E")
        cand = range(parts.depth + 1) if levels is None else levels
        good = [k for k in cand if _is_union_of_atoms(E, P[k])]
        if not good:
            raise PreconditionError("E is not a union of atoms at any requested level")
        emask = np.isin(parts.keys, E.keys)
        kmask = np.isin(parts.keys, K.keys)
        for k in good:
            integral = parts.boff[k][kmask].sum(axis=0)
            lhs = trace_norm(integral[None])
            rhs = 2 * _phi_pf(parts.cc.p[k], fw, emask)
            rows.append(CheckRow(f"level {k}: ||int_K b^off||_1 <= 2 phi(1_E p f)", lhs, rhs,
                                 _rel(lhs, rhs, l1)))
            rows.append(CheckRow(f"level {k}: displayed form with factor lam", lhs, lam * rhs,
                                 _rel(lhs, lam * rhs, l1), asserted=False))
    return CheckReport(rows)


# ---- zeta ---------------------------------------------------------------------------


@dataclass
class ZetaProjection:
    """``zeta`` on ``keys``; identity elsewhere."""

    model: object
    keys: np.ndarray
    values: np.ndarray
    phi_complement: float
    bound: float
    holds: bool
    d: int

    def at_keys(self, keys: np.ndarray) -> np.ndarray:
        return _field_at(self.keys, self.values, keys, self.d)


def _field_at(fkeys, fvals, keys, d):
    keys = np.asarray(keys, dtype=np.int64)
    out = np.broadcast_to(np.eye(d, dtype=np.complex128), (keys.size, d, d)).copy()
    if fkeys.size:
        pos = np.minimum(np.searchsorted(fkeys, keys), fkeys.size - 1)
        hit = fkeys[pos] == keys
        out[hit] = fvals[pos[hit]]
    return out


def zeta_projection(seq, cc: CuculescuResult, f_l1: float | None = None) -> ZetaProjection:
    """Complement of the join of ``p_A`` over dilated admissible atoms.

    For every level ``k >= 1`` and admissible atom ``A`` with ``p_A != 0``,
    ``p_A`` is spread over ``A (F_0 u ... u F_{k-1})^-1``; ``zeta`` is one
    minus the range projection of the sum.  Checks
    ``lam phi(1 - zeta) <= 2 ||f||_1``.
    """
    model = seq.model
    d = cc.q[0].shape[-1]
    key_parts, val_parts = [], []
    for k in range(1, len(seq.P)):
        if k >= len(cc.p):
            break
        P = seq.P[k]
        adm = seq.admissible_flags(k)
        reps = _representatives(P)
        pa = cc.p[k][reps]
        active = np.nonzero(adm & (op_norm(pa) > RANGE_TOL))[0]
        if not active.size:
            continue
        U = FiniteSubset.union_all(model, seq.F[:k]).inverse()
        for a in active:
            dil = product_set(P.atom(int(a)), U)
            key_parts.append(dil.keys)
            val_parts.append(np.broadcast_to(pa[a], (len(dil), d, d)))
    if key_parts:
        allk = np.concatenate(key_parts)
        keys, inv = np.unique(allk, return_inverse=True)
        acc = np.zeros((keys.size, d, d), dtype=np.complex128)
        np.add.at(acc, inv.ravel(), np.concatenate(val_parts))
        w, V = jacobi.eigh(0.5 * (acc + _adj(acc)), check=False)
        rng = (V * (w > RANGE_TOL)[:, None, :]) @ _adj(V)
        zeta = np.eye(d) - rng
    else:
        keys = np.empty(0, np.int64)
        zeta = np.zeros((0, d, d), dtype=np.complex128)
    comp = float(np.real(np.trace(np.eye(d) - zeta, axis1=1, axis2=2)).sum()) if keys.size else 0.0
    if f_l1 is None:
        f_l1 = trace_norm(cc.f_levels[0])
    bound = 2 * f_l1
    holds = cc.lam * comp <= bound + 1e-8 * max(1.0, f_l1)
    return ZetaProjection(model, keys, zeta, comp, bound, holds, d)


def zeta_annihilation_scan(parts: CZParts, zeta: ZetaProjection, seq) -> CheckRow:
    """Max of ``||zeta(x) b_k(y) zeta(x)||`` over ``n < k`` and ``y`` in ``x F_n``."""
    model = parts.model
    d = parts.f.shape[-1]
    worst = 0.0
    scale = max(1.0, float(np.abs(parts.f).max(initial=0.0)))
    for k in range(1, parts.depth + 1):
        for arr in (parts.bd[k], parts.boff[k]):
            nz = np.abs(arr).reshape(arr.shape[0], -1).max(axis=1) > 0
            if not nz.any():
                continue
            Y = model.unpack(parts.keys[nz])
            bvals = arr[nz]
            for n in range(k):
                Finv = model.inv_coords(seq.F[n].coords())
                step = max(1, 500_000 // max(1, Y.shape[0]))
                for s in range(0, Finv.shape[0], step):
                    g = Finv[s:s + step]
                    xk = model.pack(model.mul_coords(Y[None, :, :], g[:, None, :])).ravel()
                    z = zeta.at_keys(xk).reshape(g.shape[0], Y.shape[0], d, d)
                    prod = z @ bvals[None] @ z
                    worst = max(worst, float(np.abs(prod).max(initial=0.0)))
    return CheckRow("zeta(x) b_k(y) zeta(x) = 0 for y in x F_n, n < k", worst, 1e-12,
                    worst <= 1e-12 * scale)
