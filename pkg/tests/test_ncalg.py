from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from folnerlab import FiniteSubset, OpValuedFunction, averaging, conditional_expectation, get_model
from folnerlab import jacobi
from folnerlab.errors import WindowOverflowError
from folnerlab.filtration import Partition
from folnerlab.ncalg import (
    NormReport,
    distribution,
    l2_embedding_projection,
    lp_norm,
    meet,
    projection_defect,
    spectral_projection,
    square_functions,
    trace_phi,
    weak_l1,
)

from conftest import interval

Z = get_model("Z")
seeds = st.integers(0, 2 ** 32 - 1)


def rand_matrix(rng, d, herm=False):
    X = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return X + X.conj().T if herm else X


def rand_function(rng, n=16, d=2, psd=False, lo=-40, hi=40):
    keys = rng.choice(np.arange(lo, hi), size=n, replace=False)
    X = rng.normal(size=(n, d, d)) + 1j * rng.normal(size=(n, d, d))
    if psd:
        X = X @ np.conj(np.swapaxes(X, 1, 2))
    return OpValuedFunction(Z, Z.pack(keys[:, None]), X)


def schatten(M, p):
    s = np.linalg.svd(M, compute_uv=False)
    return float(s.max()) if p == np.inf else float(np.sum(s ** p) ** (1 / p))


def sqrtm_psd(M):
    w, V = np.linalg.eigh(0.5 * (M + M.conj().T))
    return (V * np.sqrt(np.clip(w, 0, None))) @ V.conj().T


# ---- trace and norms ---------------------------------------------------------------------


def test_trace_oracles():
    assert trace_phi(OpValuedFunction.zeros(Z, 3)) == 0
    assert trace_phi(OpValuedFunction.indicator(FiniteSubset.singleton(Z), 3)) == pytest.approx(3)
    rng = np.random.default_rng(0)
    f = rand_function(rng, 16, 2, psd=True)
    brute = 0.0
    for v in f.values:
        for i in range(2):
            brute += v[i, i].real
    assert trace_phi(f) == pytest.approx(brute, rel=1e-12)


def test_projection_norms():
    E = interval(Z, 0, 5)
    e = OpValuedFunction.constant(E, np.diag([1.0, 0.0, 1.0]))  # total trace 10
    for p in (1, 2, 3):
        assert lp_norm(e, p) == pytest.approx(10 ** (1 / p))
    assert lp_norm(e, np.inf) == pytest.approx(1)
    assert weak_l1(e) == pytest.approx(10)


@settings(max_examples=40, deadline=None)
@given(seed=seeds)
def test_scalar_norms_match_rearrangement(seed):
    rng = np.random.default_rng(seed)
    vals = rng.normal(size=20)
    f = OpValuedFunction(Z, Z.pack(np.arange(20)[:, None]), vals[:, None, None])
    a = [abs(v) for v in vals]
    for p in (1, 2, 3):
        assert lp_norm(f, p) == pytest.approx(sum(x ** p for x in a) ** (1 / p), rel=1e-12)
    # t -> s^- gives t * #{|f| >= s}; the supremum is attained at one of these limits.
    weak = max(s * sum(1 for x in a if x >= s) for s in a)
    assert weak_l1(f) == pytest.approx(weak, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=seeds, d=st.integers(1, 4))
def test_weak_below_strong(seed, d):
    f = rand_function(np.random.default_rng(seed), 12, d)
    rep = NormReport.of(f)
    assert rep.weak <= rep.l1 * (1 + 1e-12)
    assert rep.linf <= rep.l2 <= rep.l1 * (1 + 1e-12)


# ---- spectral calculus ------------------------------------------------------------------


def test_spectral_projection_oracles():
    x = np.diag([0.5, 2.0])
    assert np.allclose(spectral_projection(x, 1.0), np.diag([0.0, 1.0]))
    assert np.allclose(spectral_projection(x, 1.0, "at-or-below"), np.diag([1.0, 0.0]))
    assert np.allclose(spectral_projection(x, 2.0), 0)
    # Eigenvalues within 1e-10 of the threshold count as at-or-below.
    assert np.allclose(spectral_projection(np.diag([1.0 + 1e-12, 3.0]), 1.0), np.diag([0.0, 1.0]))


@settings(max_examples=50, deadline=None)
@given(seed=seeds, lam=st.floats(-3, 3))
def test_spectral_projection_counts(seed, lam):
    x = rand_matrix(np.random.default_rng(seed), 4, herm=True)
    P = spectral_projection(x, lam)
    assert projection_defect(P) <= 1e-10
    count = int(np.sum(np.linalg.eigvalsh(x) > lam + 1e-10))
    assert np.trace(P).real == pytest.approx(count, abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(seed=seeds, d=st.integers(1, 8))
def test_jacobi_matches_lapack(seed, d):
    x = rand_matrix(np.random.default_rng(seed), d, herm=True)
    w, V = jacobi.eigh(x)
    assert np.allclose(w, np.linalg.eigvalsh(x), atol=1e-10)
    assert np.allclose(V @ np.diag(w) @ V.conj().T, x, atol=1e-10)
    assert np.allclose(V.conj().T @ V, np.eye(d), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=seeds)
def test_meet_of_projections(seed):
    rng = np.random.default_rng(seed)
    P = spectral_projection(rand_matrix(rng, 4, True), 0.0)
    Q = spectral_projection(rand_matrix(rng, 4, True), 0.0)
    M = meet(P[None], Q[None])[0]
    assert projection_defect(M) <= 1e-9
    assert np.allclose(M @ P, M, atol=1e-9) and np.allclose(M @ Q, M, atol=1e-9)
    expected = np.trace(P).real + np.trace(Q).real - np.linalg.matrix_rank(np.hstack([P, Q]), tol=1e-8)
    assert np.trace(M).real == pytest.approx(expected, abs=1e-8)


# ---- conditional expectations and averages ------------------------------------------------


def test_conditional_expectation_oracles():
    A, B = interval(Z, 0, 4), interval(Z, 4, 10)
    P = Partition.from_atoms(Z, [A, B])
    m = np.array([[2.0, 1j], [-1j, 1.0]])
    f = OpValuedFunction.constant(A, m) + OpValuedFunction.constant(B, 3 * m)
    assert np.allclose(conditional_expectation(f, P).values, f.values)
    point = OpValuedFunction.constant(FiniteSubset.from_elements(Z, [2]), m)
    Ef = conditional_expectation(point, P)
    assert Ef.support == A and np.allclose(Ef.values, m / 4)
    with pytest.raises(WindowOverflowError):
        conditional_expectation(OpValuedFunction.constant(interval(Z, 20, 21), m), P)


@settings(max_examples=40, deadline=None)
@given(seed=seeds)
def test_conditional_expectation_contracts(seed):
    rng = np.random.default_rng(seed)
    cuts = np.sort(rng.choice(np.arange(1, 80), size=6, replace=False))
    bounds = [0, *cuts, 80]
    P = Partition.from_atoms(Z, [interval(Z, a - 40, b - 40) for a, b in zip(bounds, bounds[1:])])
    f = rand_function(rng, 16, 3)
    Ef = conditional_expectation(f, P)
    for p in (1, 2, np.inf):
        assert lp_norm(Ef, p) <= lp_norm(f, p) * (1 + 1e-12)
    tr = lambda g: np.trace(g.values, axis1=1, axis2=2).sum()
    assert abs(tr(Ef) - tr(f)) <= 1e-10 * max(1, abs(tr(f)))


def brute_average(f: OpValuedFunction, F: FiniteSubset) -> dict:
    out = {}
    vals = {Z.unpack(np.array([k]))[0, 0]: v for k, v in zip(f.keys, f.values)}
    Fs = [g[0] for g in F.elements()]
    xs = {y - g for y in vals for g in Fs}
    for x in xs:
        out[x] = sum((vals.get(x + g, 0) for g in Fs), np.zeros((f.d, f.d))) / len(Fs)
    return out


def test_average_identity_set():
    f = rand_function(np.random.default_rng(1), 10, 2)
    g = averaging(f, FiniteSubset.singleton(Z))
    assert np.array_equal(g.keys, f.keys) and np.allclose(g.values, f.values)


@settings(max_examples=30, deadline=None)
@given(seed=seeds, width=st.integers(1, 9))
def test_averaging_routes_and_mass(seed, width):
    rng = np.random.default_rng(seed)
    f = rand_function(rng, 12, 2, psd=True)
    F = FiniteSubset.from_elements(Z, rng.choice(np.arange(-5, 6), size=width, replace=False).tolist())
    a, b = averaging(f, F, route="scatter"), averaging(f, F, route="lattice")
    assert np.array_equal(a.keys, b.keys) and np.allclose(a.values, b.values, atol=1e-12)
    ref = brute_average(f, F)
    assert sorted(ref) == Z.unpack(a.keys)[:, 0].tolist()
    for k, v in zip(Z.unpack(a.keys)[:, 0], a.values):
        assert np.allclose(v, ref[k], atol=1e-12)
    assert trace_phi(a) == pytest.approx(trace_phi(f), rel=1e-12)
    assert lp_norm(a, np.inf) <= lp_norm(f, np.inf) * (1 + 1e-12)


def test_averaging_z2_routes():
    Z2 = get_model("Z2")
    rng = np.random.default_rng(5)
    keys = Z2.pack(rng.integers(-20, 20, size=(200, 2)))
    f = OpValuedFunction(Z2, keys, rng.normal(size=(keys.size, 2, 2)))
    F = FiniteSubset.from_coords(Z2, np.stack(np.meshgrid(np.arange(5), np.arange(5)), -1).reshape(-1, 2))
    a, b = averaging(f, F, route="scatter"), averaging(f, F, route="lattice")
    assert np.array_equal(a.keys, b.keys) and np.allclose(a.values, b.values, atol=1e-12)


def test_nested_expectations_compose(seq_z3):
    rng = np.random.default_rng(3)
    W = seq_z3.window.keys
    f = OpValuedFunction(Z, W, rng.normal(size=(W.size, 2, 2)))
    for n in range(4):
        En = conditional_expectation(f, seq_z3.P[n])
        for m in range(n, 4):
            lhs = conditional_expectation(En, seq_z3.P[m])
            rhs = conditional_expectation(f, seq_z3.P[m])
            assert np.allclose(lhs.values, rhs.values, atol=1e-10)


# ---- square functions and L2 embedding ----------------------------------------------------


def test_square_function_single():
    rng = np.random.default_rng(2)
    f = rand_function(rng, 8, 3)
    rep = square_functions([f])
    assert rep.column == pytest.approx(weak_l1(f), rel=1e-10)
    assert rep.row == pytest.approx(weak_l1(f.adjoint()), rel=1e-10)
    assert rep.cr_proxy == min(rep.column, rep.row)


def test_square_function_orthogonal_projections():
    E = interval(Z, 0, 3)
    fam = [OpValuedFunction.constant(E, np.diag(v)) for v in ([1, 0, 0], [0, 1, 0], [0, 0, 1])]
    rep = square_functions(fam)
    total = fam[0] + fam[1] + fam[2]
    assert rep.column == pytest.approx(weak_l1(total))


@settings(max_examples=20, deadline=None)
@given(seed=seeds)
def test_square_function_scalar_column_equals_row(seed):
    rng = np.random.default_rng(seed)
    fam = []
    for _ in range(4):
        vals = rng.normal(size=10)
        fam.append(OpValuedFunction(Z, Z.pack(np.arange(10)[:, None]), vals[:, None, None]))
    rep = square_functions(fam)
    assert rep.column == pytest.approx(rep.row, rel=1e-12)
    # Scalar square function computed directly.
    sq = np.sqrt(sum(np.abs(g.values[:, 0, 0]) ** 2 for g in fam))
    direct = max(s * np.sum(sq >= s) for s in sq)
    assert rep.column == pytest.approx(direct, rel=1e-10)


def test_l2_embedding_oracles():
    rng = np.random.default_rng(4)
    f = rand_function(rng, 8, 2, psd=True)
    big = 10 * lp_norm(f, np.inf)
    res = l2_embedding_projection([f], big)
    assert np.allclose(res.e, np.eye(2)) and res.ok
    vals = np.array([0.5, 3.0, 1.0, 4.0])
    g = OpValuedFunction(Z, Z.pack(np.arange(4)[:, None]), vals[:, None, None])
    res = l2_embedding_projection([g], 2.0)
    assert np.allclose(res.e[:, 0, 0], (np.abs(vals) <= 2.0).astype(float))


@settings(max_examples=30, deadline=None)
@given(seed=seeds, lam=st.floats(0.1, 5))
def test_l2_embedding_bound(seed, lam):
    rng = np.random.default_rng(seed)
    fam = [rand_function(rng, 10, 2, lo=0, hi=12) for _ in range(3)]
    assert l2_embedding_projection(fam, lam).ok
    halves = ([f * 0.5 for f in fam], [f * 0.5 for f in fam])
    assert l2_embedding_projection(fam, lam, halves).ok


# ---- inequalities ---------------------------------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(seed=seeds, d=st.integers(1, 4))
def test_holder(seed, d):
    rng = np.random.default_rng(seed)
    fs = [rand_matrix(rng, d) for _ in range(6)]
    gs = [rand_matrix(rng, d) for _ in range(6)]
    cross = sum(f.conj().T @ g for f, g in zip(fs, gs))
    Af = sqrtm_psd(sum(f.conj().T @ f for f in fs))
    Ag = sqrtm_psd(sum(g.conj().T @ g for g in gs))
    for p, q, r in ((2, 2, 1), (1, np.inf, 1)):
        assert schatten(cross, r) <= schatten(Af, p) * schatten(Ag, q) * (1 + 1e-8) + 1e-8


@settings(max_examples=40, deadline=None)
@given(seed=seeds, t=st.floats(0, 4))
def test_distribution_of_adjoint(seed, t):
    f = rand_function(np.random.default_rng(seed), 10, 3)
    assert distribution(f, t) == distribution(f.adjoint(), t)


@settings(max_examples=40, deadline=None)
@given(seed=seeds, lam=st.floats(0.1, 6), share=st.floats(0.05, 0.95))
def test_distribution_subadditive(seed, lam, share):
    rng = np.random.default_rng(seed)
    keys = Z.pack(np.arange(6)[:, None])
    x = OpValuedFunction(Z, keys, np.stack([rand_matrix(rng, 3, True) for _ in range(6)]))
    y = OpValuedFunction(Z, keys, np.stack([rand_matrix(rng, 3, True) for _ in range(6)]))
    l1, l2 = lam * share, lam * (1 - share)
    assert distribution(x + y, lam) <= distribution(x, l1) + distribution(y, l2)


def test_text_round_trip():
    f = rand_function(np.random.default_rng(9), 6, 2)
    g = OpValuedFunction.from_text(f.to_text())
    assert np.array_equal(f.keys, g.keys) and np.allclose(f.values, g.values, atol=0)
