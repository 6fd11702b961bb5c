"""Difference operators ``D_n = A_n - E_n`` and the estimates built on them.

``A_n`` averages over the Folner set ``F_n`` and ``E_n`` is the conditional
expectation onto the level-``n`` partition.  The module checks the local
estimates, the square-function L2 bound, a weak-(1,1) regression with exact
Rademacher enumeration, maximal projections and the splitting of a function
into admissible translates.  Concrete actions (unitary conjugation of Z on
``M_d``, translations on a finite torus) demonstrate pointwise convergence of
ergodic averages to the fixed-point projection.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from . import jacobi
from .czdec import (
    CZParts,
    _adj,
    cuculescu,
    cz_decompose,
    expect,
    trace_norm,
    zeta_projection,
)
from .errors import DegenerateInputError, PreconditionError, WindowOverflowError
from .filtration import FilteredSequence, admissible_region
from .geometry import boundary, is_invariant, translate_counts
from .groups import FiniteSubset, GroupModel, Schedule, folner_set, get_model
from .ncalg import (
    OpValuedFunction,
    averaging,
    conditional_expectation,
    lp_norm,
    meet,
    op_norm,
    singular_values,
    spectral_projection,
    trace_phi,
    l2_embedding_projection,
)
from .rational import to_fraction

DEFAULT_CEILING = 64.0
MAX_ENUM_LEVELS = 12


# ---- difference operators -----------------------------------------------------------


def _check_window(f: OpValuedFunction, seq: FilteredSequence) -> None:
    inside = seq.window.contains_keys(f.keys)
    nonzero = np.abs(f.values).reshape(len(f), -1).max(axis=1, initial=0.0) > 0 if len(f) else inside
    bad = f.keys[~inside & nonzero]
    if bad.size:
        raise WindowOverflowError(
            f"{bad.size} support points lie outside the window of {len(seq.window)} elements; "
            f"build the sequence with a larger depth or schedule so the window covers supp(f)",
            missing=bad)


def difference(f: OpValuedFunction, n: int, seq: FilteredSequence) -> OpValuedFunction:
    """``D_n f = A_{F_n} f - E_n f``."""
    _check_window(f, seq)
    if not len(f):
        return f
    return averaging(f, seq.F[n]) - conditional_expectation(f, seq.P[n])


@dataclass
class BoundRow:
    name: str
    value: float
    bound: float
    holds: bool
    asserted: bool = True
    note: str = ""


def invariance_l1_bound(E: FiniteSubset, K: FiniteSubset, eps) -> BoundRow:
    """``||1_E - A_K 1_E||_1 <= 2 eps |E|``, in exact arithmetic."""
    eps = to_fraction(eps)
    pre = is_invariant(E, eps, K)
    keys, counts = translate_counts(E, K)
    inE = E.contains_keys(keys)
    k = len(K)
    # Points of E outside E K^-1 cannot occur: e K^-1 contains e when e is in K;
    # handle the general case by counting them as zero-overlap points.
    missing = len(E) - int(inE.sum())
    num = int((k - counts[inE]).sum()) + missing * k + int(counts[~inE].sum())
    lhs = Fraction(num, k)
    rhs = 2 * eps * len(E)
    if not pre.holds:
        return BoundRow("||1_E - A_K 1_E||_1 <= 2 eps |E|", float(lhs), float(rhs), True, False,
                        f"skipped: E is not ({eps}, K)-invariant (ratios {pre.ratios})")
    return BoundRow("||1_E - A_K 1_E||_1 <= 2 eps |E|", float(lhs), float(rhs), lhs <= rhs,
                    note=f"exact {lhs} <= {rhs}")


def _is_level_measurable(f: OpValuedFunction, P, tol=1e-10) -> bool:
    if not len(f):
        return True
    labels = P.label_of(f.keys)
    if np.any(labels < 0):
        return False
    touched = np.unique(labels)
    if int(P.sizes[touched].sum()) != len(f):
        return False
    ef = conditional_expectation(f, P)
    return float(np.abs(ef.values - f.values).max()) <= tol * max(1.0, float(np.abs(f.values).max()))


def _supported_on_admissible_atoms(f: OpValuedFunction, seq: FilteredSequence, k: int) -> bool:
    labels = seq.P[k].label_of(f.keys)
    return bool(np.all(labels >= 0) and np.all(seq.admissible_flags(k)[labels]))


@dataclass
class LocalEstimateReport:
    case: int
    n: int
    k: int
    p: float
    value: float
    bound: float
    asserted: bool
    holds: bool
    note: str = ""
    domination: Fraction | None = None


def local_estimate_report(f: OpValuedFunction, n: int, k: int, p, seq: FilteredSequence) -> LocalEstimateReport:
    """Local estimates for ``D_n`` against level-``k`` structure.

    Case 1 (``n < k``, ``f`` constant on level-``k`` atoms): with ``p = 1`` and
    ``f`` supported on one admissible atom, asserts
    ``||D_n f||_1 <= 2 * 2^(n-k) ||f||_1``; otherwise the ratio is measured.
    Case 2 (``n >= k``, ``E_k f = 0``, support on admissible atoms): asserts
    ``||D_n f||_p <= 2^(k-n) ||f||_p``.
    """
    _check_window(f, seq)
    fp = lp_norm(f, p)
    if n < k:
        if not _is_level_measurable(f, seq.P[k]):
            return LocalEstimateReport(1, n, k, p, float("nan"), float("nan"), False, True,
                                       "skipped: f is not constant on level-k atoms")
        val = lp_norm(difference(f, n, seq), p)
        labels = np.unique(seq.P[k].label_of(f.keys))
        single = (p == 1 and labels.size == 1 and seq.admissible_flags(k)[labels[0]])
        bound = 2.0 * 2.0 ** (n - k) * fp
        if single:
            return LocalEstimateReport(1, n, k, p, val, bound, True, val <= bound * (1 + 1e-12) + 1e-12,
                                       "single admissible atom")
        return LocalEstimateReport(1, n, k, p, val, bound, False, True,
                                   "measured ratio only (not a single-atom p=1 instance)")
    if not _supported_on_admissible_atoms(f, seq, k):
        return LocalEstimateReport(2, n, k, p, float("nan"), float("nan"), False, True,
                                   "skipped: f meets a non-admissible level-k atom")
    if len(f):
        ek = conditional_expectation(f, seq.P[k])
        if float(np.abs(ek.values).max(initial=0.0)) > 1e-10 * max(1.0, float(np.abs(f.values).max())):
            return LocalEstimateReport(2, n, k, p, float("nan"), float("nan"), False, True,
                                       "skipped: E_k f is not zero")
    val = lp_norm(difference(f, n, seq), p)
    bound = 2.0 ** (k - n) * fp
    dom = Fraction(len(boundary(seq.B[k], seq.F[n]) & seq.F[n]), len(seq.F[n]))
    return LocalEstimateReport(2, n, k, p, val, bound, True, val <= bound * (1 + 1e-12) + 1e-12,
                               "", dom)


def boundary_domination_check(seq: FilteredSequence, n: int, k: int, xs: Sequence) -> bool:
    """Cut admissible level-k atoms of ``x F_n`` lie in ``x boundary_{B_k}(F_n)``."""
    P = seq.P[k]
    flags = seq.admissible_flags(k)
    bd = boundary(seq.B[k], seq.F[n])
    for x in xs:
        xF = seq.F[n].left_translate(x)
        labels = P.label_of(xF.keys)
        inside = labels[labels >= 0]
        counts = np.bincount(inside, minlength=P.n_atoms)
        cut = np.nonzero((counts > 0) & (counts < P.sizes) & flags)[0]
        if not cut.size:
            continue
        cut_keys = P.keys[np.isin(P.labels, cut)]
        if not np.all(bd.left_translate(x).contains_keys(cut_keys)):
            return False
    return True


# ---- L2 bound -----------------------------------------------------------------------


@dataclass
class L2Report:
    ratio: float
    bound: float
    per_shift: dict[int, float]
    holds: bool
    level_norms: list[float] = field(default_factory=list)


def martingale_differences(f: OpValuedFunction, seq: FilteredSequence) -> list[OpValuedFunction]:
    """``d_k = E_k f - E_{k+1} f`` with ``E_{K+1} = 0``; they sum to ``f``."""
    _check_window(f, seq)
    W = seq.window.keys
    fw = f.on(W).values
    levels = [expect(fw, P) for P in seq.P] + [np.zeros_like(fw)]
    return [OpValuedFunction(f.model, W, levels[k] - levels[k + 1], _sorted=True).pruned()
            for k in range(len(seq.P))]


def l2_bound_check(f: OpValuedFunction, seq: FilteredSequence) -> L2Report:
    """``(sum_n ||D_n f||_2^2)^(1/2) <= sum_s C_s ||f||_2``.

    ``C_s = max_n ||D_n d_{n-s}||_2 / ||d_{n-s}||_2`` over martingale
    differences; the bound follows from the triangle inequality over ``s`` and
    orthogonality of the ``d_k``.
    """
    f2 = lp_norm(f, 2)
    N = len(seq.P)
    norms = [lp_norm(difference(f, n, seq), 2) for n in range(N)]
    total = float(np.sqrt(np.sum(np.square(norms))))
    if f2 == 0:
        return L2Report(0.0, 0.0, {}, True, norms)
    ds = martingale_differences(f, seq)
    dn = [lp_norm(d, 2) for d in ds]
    per_shift: dict[int, float] = {}
    for n in range(N):
        for k in range(N):
            if dn[k] == 0:
                continue
            r = lp_norm(difference(ds[k], n, seq), 2) / dn[k]
            per_shift[n - k] = max(per_shift.get(n - k, 0.0), r)
    bound = sum(per_shift.values())
    ratio = total / f2
    return L2Report(ratio, bound, per_shift, ratio <= bound * (1 + 1e-10) + 1e-12, norms)


# ---- Rademacher families ------------------------------------------------------------


@dataclass
class DifferenceFamily:
    """Per-level ``D_n u`` on common keys, with the sign vectors used for ``D``."""

    keys: np.ndarray
    levels: np.ndarray  # (N, M, d, d)
    signs: np.ndarray  # (S, N)
    exact: bool

    @classmethod
    def build(cls, funcs: Sequence[OpValuedFunction], seed: int = 0,
              max_enum: int = MAX_ENUM_LEVELS, samples: int = 256) -> "DifferenceFamily":
        keys = np.unique(np.concatenate([g.keys for g in funcs])) if funcs else np.empty(0, np.int64)
        levels = np.stack([g.value_at_keys(keys) for g in funcs])
        N = len(funcs)
        if N <= max_enum:
            # |sum e_n D_n| is unchanged under e -> -e, so fix the first sign.
            rest = list(itertools.product((1.0, -1.0), repeat=max(N - 1, 0)))
            signs = np.array([(1.0,) + r for r in rest]) if N else np.ones((1, 0))
            exact = True
        else:
            rng = np.random.default_rng(seed)
            signs = rng.choice([-1.0, 1.0], size=(samples, N))
            exact = False
        return cls(keys, levels, signs, exact)

    def combine(self, s: np.ndarray) -> np.ndarray:
        return np.tensordot(s, self.levels, axes=(0, 0))

    def expected_distribution(self, lam: float) -> float:
        """Mean over sign vectors of ``phi({|D u| > lam})``."""
        if not self.keys.size:
            return 0.0
        tot = 0.0
        for s in self.signs:
            sv = singular_values(self.combine(s))
            tot += float(np.count_nonzero(sv > lam))
        return tot / len(self.signs)

    def sum_l2_squared(self) -> float:
        return float(sum(np.sum(np.abs(v) ** 2) for v in self.levels))


def _differences(u: np.ndarray, keys: np.ndarray, model, seq) -> list[OpValuedFunction]:
    g = OpValuedFunction(model, keys, u, _sorted=True).pruned()
    return [difference(g, n, seq) for n in range(len(seq.P))]


@dataclass
class WeakRow:
    lam: float
    measured: dict[str, float]
    bounds: dict[str, float]
    holds: dict[str, bool]
    constant: float


@dataclass
class MaximalReport:
    """Weak-(1,1) regression over a grid of ``lam``."""

    rows: list[WeakRow]
    ceiling: float
    constant: float
    exact_signs: bool

    @property
    def ok(self) -> bool:
        return self.constant <= self.ceiling and all(all(r.holds.values()) for r in self.rows)


def weak11_check(f: OpValuedFunction, lams: Sequence[float], seq: FilteredSequence, *,
                 ceiling: float = DEFAULT_CEILING, seed: int = 0) -> MaximalReport:
    """Measured ``sup_lam lam phi({|D f| > lam}) / ||f||_1`` with per-part bounds.

    For each ``lam`` the CZ parts are formed and three proof-traceable bounds
    are asserted: Chebyshev in L2 for ``g``, L1 for ``h``, and for ``b`` the
    ``zeta`` splitting ``2 lam phi(1 - zeta) + sum_{n >= k} ||zeta D_n b_k zeta||_1``.
    """
    if not f.is_positive():
        raise PreconditionError("f must be positive")
    _check_window(f, seq)
    l1 = trace_phi(f)
    if l1 == 0:
        raise DegenerateInputError("f must be nonzero")
    W = seq.window.keys
    model = f.model
    fam_f = DifferenceFamily.build([difference(f, n, seq) for n in range(len(seq.P))], seed)
    rows = []
    for lam in lams:
        parts = cz_decompose(f, lam, seq)
        zeta = zeta_projection(seq, parts.cc, l1)
        h = sum(parts.h)
        fam_g = DifferenceFamily.build(_differences(parts.g, W, model, seq), seed)
        fam_h = DifferenceFamily.build(_differences(h, W, model, seq), seed)
        bd = [_differences(parts.bd[k] + parts.boff[k], W, model, seq) for k in range(parts.depth + 1)]
        fam_b = DifferenceFamily.build([_sum_funcs(model, [bd[k][n] for k in range(len(bd))], f.d)
                                        for n in range(len(seq.P))], seed)
        meas = {
            "f": lam * fam_f.expected_distribution(lam),
            "g": lam * fam_g.expected_distribution(lam),
            "h": lam * fam_h.expected_distribution(lam),
            "b": lam * fam_b.expected_distribution(lam),
        }
        zb = 0.0
        for k in range(len(bd)):
            for n in range(k, len(seq.P)):
                v = bd[k][n]
                if len(v):
                    z = zeta.at_keys(v.keys)
                    zb += trace_norm(z @ v.values @ z)
        bounds = {
            "g": fam_g.sum_l2_squared() / lam,
            "h": sum(trace_norm(v.values) for v in _differences(h, W, model, seq)),
            "b": 2 * lam * zeta.phi_complement + zb,
        }
        tol = 1e-9 * max(1.0, l1)
        holds = {
            "good part Chebyshev": meas["g"] <= bounds["g"] + tol,
            "hybrid part L1": meas["h"] <= bounds["h"] + tol,
            "bad part zeta splitting": meas["b"] <= bounds["b"] + tol,
            "zeta measure": zeta.holds,
        }
        rows.append(WeakRow(lam, meas, bounds, holds, meas["f"] / l1))
    const = max((r.constant for r in rows), default=0.0)
    return MaximalReport(rows, ceiling, const, fam_f.exact)


def _sum_funcs(model, funcs: Sequence[OpValuedFunction], d: int) -> OpValuedFunction:
    out = OpValuedFunction.zeros(model, d)
    for g in funcs:
        if len(g):
            out = out + g
    return out


# ---- cancellation and off-diagonal estimates ------------------------------------------


def cancellation_check(parts: CZParts, seq: FilteredSequence, zeta=None) -> BoundRow:
    """``zeta D_n(b_k^d) zeta = zeta D_n(b_k^off) zeta = 0`` for ``n < k``."""
    if zeta is None:
        zeta = zeta_projection(seq, parts.cc)
    worst = 0.0
    scale = max(1.0, float(np.abs(parts.f).max(initial=0.0)))
    for k in range(1, parts.depth + 1):
        for arr in (parts.bd[k], parts.boff[k]):
            b = OpValuedFunction(parts.model, parts.keys, arr, _sorted=True).pruned()
            if not len(b):
                continue
            for n in range(k):
                v = difference(b, n, seq)
                z = zeta.at_keys(v.keys)
                worst = max(worst, float(np.abs(z @ v.values @ z).max(initial=0.0)))
    return BoundRow("zeta D_n(b_k) zeta = 0 for n < k", worst, 1e-12, worst <= 1e-12 * scale)


def off_bound_check(parts: CZParts, n: int, k: int, seq: FilteredSequence) -> BoundRow:
    """``||D_n(b_k^off)||_1 <= 2^(k-n) phi(p_k f)`` for ``n >= k``."""
    if n < k:
        raise PreconditionError("off-diagonal estimate needs n >= k")
    b = OpValuedFunction(parts.model, parts.keys, parts.boff[k], _sorted=True).pruned()
    lhs = trace_norm(difference(b, n, seq).values) if len(b) else 0.0
    phi_pf = float(np.real(np.trace(parts.cc.p[k] @ parts.f, axis1=1, axis2=2)).sum())
    rhs = 2.0 ** (k - n) * phi_pf
    return BoundRow(f"||D_{n}(b_{k}^off)||_1 <= 2^({k}-{n}) phi(p_k f)", lhs, rhs,
                    lhs <= rhs + 1e-8 * max(1.0, trace_norm(parts.f)))


# ---- maximal projections ------------------------------------------------------------


@dataclass
class MaximalProjection:
    keys: np.ndarray
    e: np.ndarray
    lam: float
    sup_norm: float
    sup_bound: float
    phi_complement: float
    phi_complement_e1: float
    phi_complement_q0: float
    checks: dict[str, bool]

    @property
    def ok(self) -> bool:
        return all(self.checks.values())


def maximal_projection(f: OpValuedFunction, lam: float, seq: FilteredSequence) -> MaximalProjection:
    """``e = e' & q_0`` with ``e'`` from the difference family at ``lam/2``.

    ``q_0`` is the Cuculescu projection at ``lam/2``.  Asserts
    ``sup_{n>=1} ||e A_n(f) e|| <= lam + lam/2``, ``e <= e'``, ``e <= q_0`` and
    ``phi(1-e) <= phi(1-e') + phi(1-q_0)``.
    """
    if not f.is_positive():
        raise PreconditionError("f must be positive")
    _check_window(f, seq)
    half = lam / 2
    diffs = [difference(f, n, seq) for n in range(len(seq.P))]
    emb = l2_embedding_projection(diffs, half)
    cc = cuculescu(f, half, seq)
    d = f.d
    keys = np.union1d(emb.keys, cc.keys)
    eye = np.eye(d)

    def field_at(fk, fv, ks):
        out = np.broadcast_to(eye, (ks.size, d, d)).astype(np.complex128)
        if fk.size:
            pos = np.minimum(np.searchsorted(fk, ks), fk.size - 1)
            hit = fk[pos] == ks
            out[hit] = fv[pos[hit]]
        return out

    e1 = field_at(emb.keys, emb.e, keys)
    q0 = field_at(cc.keys, cc.q[0], keys)
    e = meet(e1, q0) if keys.size else np.zeros((0, d, d))
    sup = 0.0
    for n in range(1, len(seq.P)):
        a = averaging(f, seq.F[n])
        ea = field_at(keys, e, a.keys)
        sup = max(sup, float(op_norm(ea @ a.values @ ea).max(initial=0.0)))
    tr = lambda P: float(np.real(np.trace(eye - P, axis1=1, axis2=2)).sum()) if P.size else 0.0
    c_e, c_e1, c_q0 = tr(e), tr(e1), tr(q0)
    dom1 = float(op_norm(e @ e1 - e).max(initial=0.0)) if keys.size else 0.0
    dom2 = float(op_norm(e @ q0 - e).max(initial=0.0)) if keys.size else 0.0
    checks = {
        "sup_n ||e A_n f e|| <= 3 lam / 2": sup <= 1.5 * lam * (1 + 1e-10) + 1e-12,
        "e <= e'": dom1 <= 1e-8,
        "e <= q_0": dom2 <= 1e-8,
        "phi(1-e) <= phi(1-e') + phi(1-q_0)": c_e <= c_e1 + c_q0 + 1e-8,
        "lam/2 phi(1-q_0) <= ||f||_1": half * c_q0 <= trace_phi(f) * (1 + 1e-12) + 1e-12,
    }
    return MaximalProjection(keys, e, lam, sup, 1.5 * lam, c_e, c_e1, c_q0, checks)


# ---- admissible splitting -----------------------------------------------------------


@dataclass
class SplitTerm:
    translate: tuple
    piece: OpValuedFunction
    fraction: float


@dataclass
class SplitResult:
    terms: list[SplitTerm]
    alpha: Fraction
    guaranteed: bool
    residual: float

    def total(self) -> OpValuedFunction:
        out = self.terms[0].piece if self.terms else None
        for t in self.terms[1:]:
            out = out + t.piece
        return out


def _translate_masses(model: GroupModel, adm: FiniteSubset, keys: np.ndarray, w: np.ndarray):
    """For each candidate ``x`` the mass ``sum_y w(y) [x y in Adm]``."""
    A = adm.coords()
    Yinv = model.inv_coords(model.unpack(keys))
    chunk = max(1, 4_000_000 // max(1, A.shape[0]))
    kp, vp = [], []
    for s in range(0, Yinv.shape[0], chunk):
        xs = model.pack(model.mul_coords(A[None, :, :], Yinv[s:s + chunk, None, :]))
        ww = np.broadcast_to(w[s:s + chunk, None], xs.shape)
        u, inv = np.unique(xs.ravel(), return_inverse=True)
        kp.append(u)
        vp.append(np.bincount(inv.ravel(), weights=ww.ravel(), minlength=u.size))
    allk = np.concatenate(kp)
    u, inv = np.unique(allk, return_inverse=True)
    return u, np.bincount(inv.ravel(), weights=np.concatenate(vp), minlength=u.size)


def admissible_split(f: OpValuedFunction, seq: FilteredSequence, max_terms: int = 64) -> SplitResult:
    """Peel ``f`` into pieces ``f_i = r_i 1_{x_i^-1 Adm}`` supported on translates of Adm.

    Each ``x_i`` maximizes the captured mass (ties to the smallest key).  When
    ``|D K^-1| <= (1 + eps)|D|`` holds for the window ``D`` and the current
    support ``K``, each step must capture at least ``c / (1 + eps)`` of the
    remaining mass; falling short raises :class:`PreconditionError`.
    """
    if not f.is_positive():
        raise PreconditionError("f must be positive")
    model = f.model
    adm = admissible_region(seq)
    if not len(adm):
        raise PreconditionError("the admissible region is empty")
    eps, c = seq.eps, seq.c
    alpha = (1 + eps) / (1 + eps - c)
    r = f.pruned()
    terms: list[SplitTerm] = []
    guaranteed_all = True
    while len(r) and len(terms) < max_terms:
        w = np.real(np.trace(r.values, axis1=1, axis2=2))
        mass = float(w.sum())
        cand, m = _translate_masses(model, adm, r.keys, w)
        best = int(np.argmax(m))  # first max = smallest key
        x = model.unpack(cand[best:best + 1])[0]
        region = FiniteSubset(model, model.pack(model.mul_coords(model.inv_coords(x), adm.coords())))
        piece = r.restrict(region)
        captured = float(np.real(np.trace(piece.values, axis1=1, axis2=2)).sum())
        D = seq.window
        dk = len(_product_inv(D, r.support))
        applies = dk <= (1 + eps) * len(D)
        guaranteed_all &= applies
        need = float(c / (1 + eps)) * mass
        if applies and captured < need * (1 - 1e-12):
            raise PreconditionError(
                f"split step captured {captured:.6g} < c/(1+eps) * {mass:.6g}: regularity violated")
        if captured <= 0:
            raise PreconditionError("no translate of the admissible region meets the support")
        terms.append(SplitTerm(tuple(int(v) for v in x), piece, captured / mass))
        r = (r - piece).pruned()
    residual = trace_phi(r) if len(r) else 0.0
    return SplitResult(terms, alpha, guaranteed_all, residual)


def _product_inv(D: FiniteSubset, K: FiniteSubset) -> FiniteSubset:
    from .geometry import product_set

    return product_set(D, K.inverse())


# ---- actions and convergence ----------------------------------------------------------


class ActionModel:
    """Action of a group on a finite-dimensional space by trace-preserving maps."""

    group: GroupModel

    def act(self, g, x):
        raise NotImplementedError

    def average(self, x, F: FiniteSubset):
        out = None
        for g in F.elements():
            y = self.act(g, x)
            out = y if out is None else out + y
        return out / len(F)

    def fixed_point(self, x):
        raise NotImplementedError

    def trace(self, x) -> complex:
        raise NotImplementedError

    def norm(self, x) -> float:
        raise NotImplementedError

    def random_element(self, rng):
        raise NotImplementedError

    def check_action(self, words: Sequence[tuple], rng=None) -> dict[str, float]:
        """Max defects of ``a_g a_h = a_{gh}`` and of trace preservation."""
        rng = rng or np.random.default_rng(0)
        hom, tr = 0.0, 0.0
        for g, h in words:
            x = self.random_element(rng)
            gh = self.group.multiply(self.group.canonical(g), self.group.canonical(h))
            hom = max(hom, self.norm(self.act(g, self.act(h, x)) - self.act(gh, x)))
            tr = max(tr, abs(self.trace(self.act(g, x)) - self.trace(x)))
        return {"homomorphism": hom, "trace": tr}


class TrivialAction(ActionModel):
    def __init__(self, d: int, group: GroupModel | None = None):
        self.d = d
        self.group = group or get_model("Z")

    def act(self, g, x):
        return np.array(x, dtype=np.complex128)

    def fixed_point(self, x):
        return np.array(x, dtype=np.complex128)

    def trace(self, x):
        return complex(np.trace(x))

    def norm(self, x):
        return float(op_norm(np.asarray(x)[None])[0])

    def random_element(self, rng):
        return rng.normal(size=(self.d, self.d)) + 1j * rng.normal(size=(self.d, self.d))


class UnitaryConjugation(ActionModel):
    """``Z`` acting on ``M_d`` by ``a_g(x) = u^g x u^-g``.

    ``u = W diag(exp(i theta)) W*`` is kept in spectral form so powers and
    the fixed-point pinching are exact up to rounding.
    """

    def __init__(self, W: np.ndarray, theta: np.ndarray):
        self.W = np.asarray(W, dtype=np.complex128)
        self.theta = np.asarray(theta, dtype=float)
        self.d = self.theta.size
        self.group = get_model("Z")
        self.u = (self.W * np.exp(1j * self.theta)) @ _adj(self.W)

    @classmethod
    def from_hermitian(cls, H: np.ndarray) -> "UnitaryConjugation":
        """``u = exp(i H)``."""
        w, V = jacobi.eigh(H)
        return cls(V, w)

    @classmethod
    def from_unitary(cls, u: np.ndarray, mix: float = 0.7548776662466927) -> "UnitaryConjugation":
        """Diagonalize a unitary through a generic Hermitian combination of its parts."""
        u = np.asarray(u, dtype=np.complex128)
        d = u.shape[0]
        if np.abs(_adj(u) @ u - np.eye(d)).max() > 1e-10:
            raise PreconditionError("matrix is not unitary")
        A = (u + _adj(u)) / 2
        B = (u - _adj(u)) / 2j
        _, V = jacobi.eigh(A + mix * B)
        theta = np.angle(np.diagonal(_adj(V) @ u @ V))
        return cls(V, theta)

    def power(self, g: int) -> np.ndarray:
        return (self.W * np.exp(1j * g * self.theta)) @ _adj(self.W)

    def act(self, g, x):
        g = int(g[0]) if isinstance(g, tuple) else int(g)
        return self.power(g) @ x @ self.power(-g)

    def average(self, x, F: FiniteSubset):
        """Direct summation ``|F|^-1 sum_g u^g x u^-g`` by iterated products."""
        gs = np.sort(F.coords()[:, 0])
        total = np.zeros_like(np.asarray(x, dtype=np.complex128))
        cur = self.act(int(gs[0]), x)
        prev = int(gs[0])
        for g in gs:
            step = int(g) - prev
            if step:
                cur = self.act(step, cur) if step != 1 else self.u @ cur @ _adj(self.u)
            total += cur
            prev = int(g)
        return total / len(gs)

    def _same_block(self, tol: float = 1e-9) -> np.ndarray:
        z = np.exp(1j * self.theta)
        return np.abs(z[:, None] - z[None, :]) < tol

    def fixed_point(self, x):
        y = _adj(self.W) @ x @ self.W
        return self.W @ (y * self._same_block()) @ _adj(self.W)

    def closed_form_error(self, x, length: int) -> np.ndarray:
        """``A_{[0,L)} x - P x`` from the geometric-sum formula."""
        delta = self.theta[:, None] - self.theta[None, :]
        same = self._same_block()
        z = np.exp(1j * delta)
        with np.errstate(divide="ignore", invalid="ignore"):
            M = np.where(same, 0.0, (z ** length - 1) / (length * (z - 1)))
        y = _adj(self.W) @ x @ self.W
        return self.W @ (M * y) @ _adj(self.W)

    def trace(self, x):
        return complex(np.trace(x))

    def norm(self, x):
        return float(op_norm(np.asarray(x)[None])[0])

    def random_element(self, rng):
        return rng.normal(size=(self.d, self.d)) + 1j * rng.normal(size=(self.d, self.d))


class TorusTranslation(ActionModel):
    """``Z^k`` acting on functions on ``(Z/N)^k`` by ``a_g x(y) = x(y - g)``."""

    def __init__(self, N: int, k: int = 2):
        self.N, self.k = N, k
        self.group = get_model("Z" if k == 1 else f"Z{k}")

    def act(self, g, x):
        return np.roll(x, tuple(int(v) for v in np.atleast_1d(g)), axis=tuple(range(self.k)))

    def _counts(self, F: FiniteSubset) -> np.ndarray:
        res = np.mod(F.coords(), self.N)
        flat = np.ravel_multi_index(tuple(res.T), (self.N,) * self.k)
        return np.bincount(flat, minlength=self.N ** self.k).reshape((self.N,) * self.k)

    def sum_translates(self, x: np.ndarray, F: FiniteSubset) -> np.ndarray:
        """``sum_{g in F} a_g x`` (exact for integer input)."""
        counts = self._counts(F)
        total = np.zeros_like(x)
        for r in zip(*np.nonzero(counts)):
            total = total + counts[r] * self.act(r, x)
        return total

    def average(self, x, F: FiniteSubset):
        return self.sum_translates(np.asarray(x), F) / len(F)

    def average_equals_mean(self, x: np.ndarray, F: FiniteSubset) -> bool:
        """Exact test of ``A_F x = P x`` for integer ``x``."""
        x = np.asarray(x)
        if not np.issubdtype(x.dtype, np.integer):
            raise PreconditionError("exact comparison needs integer-valued x")
        s = self.sum_translates(x.astype(object), F)
        cells = self.N ** self.k
        return bool(np.all(s * cells == int(x.sum()) * len(F)))

    def fixed_point(self, x):
        x = np.asarray(x)
        return np.full(x.shape, x.mean())

    def trace(self, x):
        return complex(np.sum(x))

    def norm(self, x):
        return float(np.abs(x).max(initial=0.0))

    def random_element(self, rng):
        return rng.normal(size=(self.N,) * self.k)


@dataclass
class FixedPointProjection:
    apply: Callable
    idempotence: float
    invariance: float

    def __call__(self, x):
        return self.apply(x)

    @property
    def ok(self) -> bool:
        return self.idempotence <= 1e-10 and self.invariance <= 1e-10


def fixed_point_projection(action: ActionModel, trials: int = 8, seed: int = 0) -> FixedPointProjection:
    """The projection onto fixed points, with ``P^2 = P`` and ``P a_g = P`` verified."""
    rng = np.random.default_rng(seed)
    idem, inv = 0.0, 0.0
    gens = action.group.generator_elements()
    for _ in range(trials):
        x = action.random_element(rng)
        px = action.fixed_point(x)
        scale = max(1.0, action.norm(x))
        idem = max(idem, action.norm(action.fixed_point(px) - px) / scale)
        for g in gens:
            inv = max(inv, action.norm(action.fixed_point(action.act(g, x)) - px) / scale)
    return FixedPointProjection(action.fixed_point, idem, inv)


@dataclass
class ConvergenceRow:
    n: int
    size: int
    error: float
    oracle: float | None
    exact_equal: bool | None


@dataclass
class ConvergenceTable:
    rows: list[ConvergenceRow]
    threshold: float | None
    checks: dict[str, bool]

    @property
    def ok(self) -> bool:
        return all(self.checks.values())


def ergodic_converge(action: ActionModel, x, schedule: Schedule | Sequence[FiniteSubset],
                     depth: int, threshold: float | None = None) -> ConvergenceTable:
    """``||A_n x - P x||`` for ``n <= depth``, with oracles where available."""
    if isinstance(schedule, Schedule):
        sets = [folner_set(action.group, n, schedule) for n in range(depth + 1)]
    else:
        sets = list(schedule)[:depth + 1]
    px = action.fixed_point(x)
    rows = []
    oracle_gap = 0.0
    for n, F in enumerate(sets):
        err_vec = action.average(x, F) - px
        err = action.norm(err_vec)
        oracle = None
        exact = None
        if isinstance(action, UnitaryConjugation):
            gs = F.coords()[:, 0]
            if np.array_equal(np.sort(gs), np.arange(gs.min(), gs.min() + gs.size)):
                shifted = action.act(int(gs.min()), x)
                cf = action.closed_form_error(shifted, gs.size)
                oracle = action.norm(cf)
                oracle_gap = max(oracle_gap, float(np.abs(cf - err_vec).max()))
        if isinstance(action, TorusTranslation) and np.issubdtype(np.asarray(x).dtype, np.integer):
            exact = action.average_equals_mean(x, F)
        rows.append(ConvergenceRow(n, len(F), err, oracle, exact))
    checks: dict[str, bool] = {}
    if isinstance(action, UnitaryConjugation):
        checks["matches closed form within 1e-10"] = oracle_gap <= 1e-10
    if threshold is not None and rows:
        checks[f"final error <= {threshold}"] = rows[-1].error <= threshold
    return ConvergenceTable(rows, threshold, checks)
