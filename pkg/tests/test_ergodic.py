from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from folnerlab import (
    FiniteSubset,
    OpValuedFunction,
    Schedule,
    TorusTranslation,
    UnitaryConjugation,
    admissible_split,
    averaging,
    conditional_expectation,
    cz_decompose,
    difference,
    ergodic_converge,
    folner_set,
    get_model,
    l2_bound_check,
    local_estimate_report,
    maximal_projection,
    weak11_check,
)
from folnerlab.ergodic import (
    TrivialAction,
    boundary_domination_check,
    cancellation_check,
    fixed_point_projection,
    invariance_l1_bound,
    off_bound_check,
)
from folnerlab.errors import WindowOverflowError
from folnerlab.filtration import admissible_region
from folnerlab.ncalg import lp_norm, trace_phi

from conftest import box, interval, random_psd

Z = get_model("Z")
seeds = st.integers(0, 2 ** 32 - 1)


# ---- difference operator ------------------------------------------------------------------


def test_difference_of_zero(seq_z3):
    assert len(difference(OpValuedFunction.zeros(Z, 2), 1, seq_z3)) == 0


def test_difference_scalar_brute_force(seq_z3):
    rng = np.random.default_rng(0)
    W = seq_z3.window.keys
    idx = np.sort(rng.choice(np.arange(100, 300), size=30, replace=False))
    vals = rng.normal(size=30)
    f = OpValuedFunction(Z, W[idx], vals[:, None, None])
    D1 = difference(f, 1, seq_z3)
    fx = dict(zip(Z.unpack(W[idx])[:, 0].tolist(), vals))
    F = [g[0] for g in seq_z3.F[1].elements()]
    P = seq_z3.P[1]
    got = dict(zip(Z.unpack(D1.keys)[:, 0].tolist(), D1.values[:, 0, 0].real))
    for x in set(got) | set(fx):
        avg = sum(fx.get(x + g, 0.0) for g in F) / len(F)
        lab = P.label_of(Z.pack(np.array([[x]])))[0]
        atom = [e[0] for e in P.atom(int(lab)).elements()]
        cond = sum(fx.get(y, 0.0) for y in atom) / len(atom)
        assert got.get(x, 0.0) == pytest.approx(avg - cond, abs=1e-12)


def test_difference_window_overflow(seq_z3):
    f = OpValuedFunction(Z, Z.pack(np.array([[-5]])), np.ones((1, 1, 1)))
    with pytest.raises(WindowOverflowError):
        difference(f, 1, seq_z3)


@settings(max_examples=10, deadline=None)
@given(seed=seeds, k=st.integers(1, 3))
def test_mean_zero_difference_is_average(seq_z3, seed, k):
    rng = np.random.default_rng(seed)
    W = seq_z3.window.keys
    g = OpValuedFunction(Z, W, rng.normal(size=(W.size, 2, 2)))
    f = g - conditional_expectation(g, seq_z3.P[k])
    for n in range(k, 4):
        D = difference(f, n, seq_z3)
        A = averaging(f, seq_z3.F[n])
        diff = (D - A)
        assert np.abs(diff.values).max(initial=0) <= 1e-12 * max(1, np.abs(f.values).max())


# ---- invariance bound ----------------------------------------------------------------------


def test_invariance_l1_oracles():
    E = interval(Z, 0, 16)
    r = invariance_l1_bound(E, FiniteSubset.singleton(Z), Fraction(1, 16))
    assert r.value == 0 and r.holds
    r = invariance_l1_bound(E, FiniteSubset.from_elements(Z, [0, 1]), Fraction(1, 16))
    assert r.asserted and r.value == 1 and r.bound == 2 and r.holds
    Z2 = get_model("Z2")
    K = FiniteSubset.from_elements(Z2, [(0, 0), (1, 0), (0, 1)])
    r = invariance_l1_bound(box(Z2, 4), K, Fraction(1, 2))
    assert r.asserted and r.holds
    skipped = invariance_l1_bound(E, FiniteSubset.from_elements(Z, [0, 5]), Fraction(1, 100))
    assert not skipped.asserted and "skipped" in skipped.note


# ---- local estimates -----------------------------------------------------------------------


def test_local_zero_function(seq_z3):
    r = local_estimate_report(OpValuedFunction.zeros(Z, 2), 0, 0, 1, seq_z3)
    assert r.case == 2 and r.holds and r.value == 0 and r.bound == 0


def test_local_case1_indicator(seq_z3):
    k = 3
    a = int(np.nonzero(seq_z3.admissible_flags(k))[0][0])
    f = OpValuedFunction.indicator(seq_z3.P[k].atom(a), 2)
    r = local_estimate_report(f, 1, k, 1, seq_z3)
    assert r.case == 1 and r.asserted and r.holds
    assert r.bound == pytest.approx(2 * 2.0 ** (1 - k) * lp_norm(f, 1))


def test_local_case2_mean_zero(seq_z3):
    rng = np.random.default_rng(1)
    k = 2
    adm = np.nonzero(seq_z3.admissible_flags(k))[0]
    keys = np.sort(np.concatenate([seq_z3.P[k].atom_keys(int(a)) for a in adm]))
    g = OpValuedFunction(Z, keys, rng.normal(size=(keys.size, 2, 2)))
    f = g - conditional_expectation(g, seq_z3.P[k])
    for p in (1, 2, np.inf):
        r = local_estimate_report(f, 3, k, p, seq_z3)
        assert r.case == 2 and r.asserted and r.holds, (p, r)


def test_local_case2_skips_nonzero_mean(seq_z3):
    k = 2
    a = int(np.nonzero(seq_z3.admissible_flags(k))[0][0])
    f = OpValuedFunction.indicator(seq_z3.P[k].atom(a), 1)
    r = local_estimate_report(f, 2, k, 1, seq_z3)
    assert not r.asserted and "skipped" in r.note


def test_boundary_domination(seq_z3):
    rng = np.random.default_rng(2)
    xs = [(int(x),) for x in rng.integers(-100, 4200, size=20)]
    for n in range(4):
        for k in range(n + 1):
            assert boundary_domination_check(seq_z3, n, k, xs)


# ---- L2, weak (1,1), cancellation ----------------------------------------------------------


def test_l2_zero(seq_z3):
    r = l2_bound_check(OpValuedFunction.zeros(Z, 2), seq_z3)
    assert r.ratio == 0 and r.holds


def test_l2_single_atom(seq_z3):
    a = int(np.nonzero(seq_z3.admissible_flags(2))[0][0])
    f = OpValuedFunction.indicator(seq_z3.P[2].atom(a), 1)
    r = l2_bound_check(f, seq_z3)
    assert r.holds and 0 < r.ratio <= r.bound


@settings(max_examples=5, deadline=None)
@given(seed=seeds)
def test_l2_random(seq_z3, seed):
    f = random_psd(seq_z3, 100, 2, np.random.default_rng(seed))
    r = l2_bound_check(f, seq_z3)
    assert r.holds and r.ratio <= 64


def test_weak11_huge_lambda(seq_z3):
    f = random_psd(seq_z3, 40, 2, np.random.default_rng(3))
    lam = 1e3 * trace_phi(f)
    rep = weak11_check(f, [lam], seq_z3)
    assert rep.rows[0].measured["f"] == 0 and rep.ok


def test_weak11_scalar_with_exact_signs(seq_z3):
    rng = np.random.default_rng(4)
    W = seq_z3.window.keys
    idx = rng.choice(W.size, 60, replace=False)
    f = OpValuedFunction(Z, W[idx], rng.exponential(size=(60, 1, 1)))
    rep = weak11_check(f, [0.05, 0.5, 2.0], seq_z3)
    assert rep.exact_signs and rep.ok
    assert all(r.measured["f"] >= 0 for r in rep.rows)


@settings(max_examples=3, deadline=None)
@given(seed=seeds)
def test_weak11_random(seq_z3, seed):
    f = random_psd(seq_z3, 80, 2, np.random.default_rng(seed))
    rep = weak11_check(f, [0.5, 2.0, 8.0], seq_z3)
    assert rep.ok and rep.constant <= 64


def test_cancellation_and_off_bound(seq_z3):
    f = random_psd(seq_z3, 200, 2, np.random.default_rng(5))
    parts = cz_decompose(f, 1.0, seq_z3)
    assert cancellation_check(parts, seq_z3).holds
    for k in range(4):
        for n in range(k, 4):
            assert off_bound_check(parts, n, k, seq_z3).holds


def test_cancellation_vacuous(seq_z3):
    f = random_psd(seq_z3, 20, 2, np.random.default_rng(6))
    parts = cz_decompose(f, 1e6, seq_z3)
    row = cancellation_check(parts, seq_z3)
    assert row.holds and row.value <= 1e-12


# ---- maximal projection and splitting -------------------------------------------------------


def test_maximal_huge_lambda(seq_z3):
    f = random_psd(seq_z3, 30, 2, np.random.default_rng(7))
    m = maximal_projection(f, 1e4 * trace_phi(f), seq_z3)
    assert np.allclose(m.e, np.eye(2)) and m.ok


@settings(max_examples=4, deadline=None)
@given(seed=seeds, lam=st.sampled_from([0.5, 2.0, 8.0]))
def test_maximal_random(seq_z3, seed, lam):
    f = random_psd(seq_z3, 100, 2, np.random.default_rng(seed))
    m = maximal_projection(f, lam, seq_z3)
    assert m.ok, m.checks


def test_split_inside_admissible(seq_z3):
    adm = admissible_region(seq_z3)
    f = OpValuedFunction.indicator(FiniteSubset(Z, adm.keys[:50]), 2)
    s = admissible_split(f, seq_z3)
    assert len(s.terms) == 1 and s.terms[0].translate == (0,)
    assert np.allclose(s.terms[0].piece.values, f.values)


def test_split_outside_admissible(seq_z3):
    adm = admissible_region(seq_z3)
    pts = FiniteSubset.from_elements(Z, [5000, 5001])
    assert pts.isdisjoint(adm)
    s = admissible_split(OpValuedFunction.indicator(pts, 1), seq_z3)
    assert len(s.terms) == 1 and s.terms[0].fraction == 1 and s.residual == 0
    (x,) = s.terms[0].translate
    assert x != 0 and {x + 5000, x + 5001} <= {e[0] for e in adm.elements()}


@settings(max_examples=5, deadline=None)
@given(seed=seeds)
def test_split_exact(seq_z3, seed):
    rng = np.random.default_rng(seed)
    W = seq_z3.window.keys
    idx = rng.choice(W.size, 80, replace=False)
    vals = rng.integers(1, 5, size=(80, 1, 1)).astype(float)
    f = OpValuedFunction(Z, W[idx], vals)
    s = admissible_split(f, seq_z3)
    total = s.total()
    assert np.array_equal(total.keys, f.keys) and np.array_equal(total.values, f.values)
    remaining = 1.0
    for t in s.terms:
        remaining *= 1 - t.fraction
        if s.guaranteed:
            assert t.fraction >= float(seq_z3.c / (1 + seq_z3.eps)) * (1 - 1e-12)


# ---- actions --------------------------------------------------------------------------------


def test_fixed_point_trivial():
    P = fixed_point_projection(TrivialAction(3))
    x = np.arange(9.0).reshape(3, 3)
    assert np.allclose(P(x), x) and P.ok


def test_fixed_point_diagonal_pinching():
    theta = 2 * np.pi * (np.sqrt(2) - 1)
    act = UnitaryConjugation(np.eye(2), np.array([0.0, theta]))
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.allclose(fixed_point_projection(act)(x), np.diag([1.0, 4.0]))
    assert fixed_point_projection(act).ok


def test_fixed_point_torus_mean():
    act = TorusTranslation(16, 2)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(16, 16))
    assert np.allclose(act.fixed_point(x), x.mean())
    assert fixed_point_projection(act).ok


def test_converge_fixed_vector():
    act = UnitaryConjugation(np.eye(2), np.array([0.0, 1.0]))
    tab = ergodic_converge(act, np.diag([2.0, 5.0]), Schedule(4), 4)
    assert all(r.error <= 1e-12 for r in tab.rows)


def test_conjugation_closed_form():
    theta = 2 * np.pi * (np.sqrt(5) - 2)
    act = UnitaryConjugation(np.eye(2), np.array([0.0, theta]))
    x = np.array([[0.0, 1.0], [0.0, 0.0]])
    tab = ergodic_converge(act, x, Schedule(4), 6, threshold=1e-2)
    assert tab.ok
    for r in tab.rows:
        L = 4 ** r.n
        closed = abs(np.sum(np.exp(-1j * theta * np.arange(L)))) / L
        assert r.error == pytest.approx(closed, abs=1e-10)
        assert r.error <= 1 / (L * abs(np.sin(theta / 2))) + 1e-12


def test_generic_conjugation_action_axioms():
    rng = np.random.default_rng(1)
    H = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    act = UnitaryConjugation.from_hermitian(H + H.conj().T)
    words = [((int(a),), (int(b),)) for a, b in rng.integers(-20, 20, size=(10, 2))]
    defects = act.check_action(words)
    assert defects["homomorphism"] <= 1e-10 and defects["trace"] <= 1e-10
    u = act.u
    again = UnitaryConjugation.from_unitary(u)
    x = act.random_element(rng)
    assert np.allclose(again.act(3, x), act.act(3, x), atol=1e-10)


def test_torus_delta_exact_once_period_covered():
    act = TorusTranslation(16, 2)
    x = np.zeros((16, 16), dtype=np.int64)
    x[0, 0] = 1
    sched = Schedule(2)
    tab = ergodic_converge(act, x, sched, 6)
    for r in tab.rows:
        L = sched.length(r.n)
        assert r.exact_equal == (L % 16 == 0)
    defects = act.check_action([((1, 2), (3, -4)), ((5, 0), (0, 7))])
    assert defects["homomorphism"] == 0 and defects["trace"] < 1e-10
