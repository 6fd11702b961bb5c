from __future__ import annotations

import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from folnerlab import FiniteSubset, get_model, quasi_tile, validate_quasi_tiling
from folnerlab.errors import InsufficientInvarianceError
from folnerlab.geometry import core, product_set
from folnerlab.tiling import (
    difference_invariance_bound,
    eps_disjoint_check,
    find_low_overlap_center,
    greedy_centers,
    union_invariance_bound,
)

from conftest import box, interval


def test_eps_disjoint_oracles(Z):
    E1, E2 = interval(Z, 0, 10), interval(Z, 8, 18)
    assert eps_disjoint_check([E1, E2], Fraction(1, 4)).holds
    assert not eps_disjoint_check([E1, E2], Fraction(1, 10)).holds
    assert eps_disjoint_check([interval(Z, 5, 9), interval(Z, 0, 5)], Fraction(1, 100)).holds
    rep = eps_disjoint_check([], Fraction(1, 4))
    assert rep.holds and rep.warnings


def test_eps_disjoint_reorders(Z):
    # Given order fails (the small set comes second), the reverse order works.
    big, small = interval(Z, 0, 10), interval(Z, 9, 11)
    rep = eps_disjoint_check([big, small], Fraction(1, 4))
    assert not rep.given_order_ok
    rep2 = eps_disjoint_check([interval(Z, 0, 2), interval(Z, 1, 12)], Fraction(1, 4))
    assert rep2.holds and rep2.given_order_ok
    assert rep.holds == (rep.order is not None)


def test_low_overlap_center_oracles(Z):
    c = find_low_overlap_center(interval(Z, 0, 100), interval(Z, 0, 10), interval(Z, 0, 50), Fraction(1, 5))
    assert c.overlap == 0 and c.bound == Fraction(25, 4) and c.within_bound
    c = find_low_overlap_center(interval(Z, 0, 20), interval(Z, 0, 10), interval(Z, 0, 15), Fraction(1, 4))
    assert c.overlap == 5 and c.center == (10,) and c.bound == 10
    c = find_low_overlap_center(interval(Z, 0, 20), interval(Z, 0, 10), FiniteSubset.empty(Z), Fraction(1, 4))
    assert c.overlap == 0
    with pytest.raises(InsufficientInvarianceError):
        find_low_overlap_center(interval(Z, 0, 5), interval(Z, 0, 10), interval(Z, 0, 2), Fraction(1, 4))


def test_greedy_centers_oracles(Z, Z2):
    g = greedy_centers(interval(Z, 0, 64), interval(Z, 0, 8), Fraction(1, 4))
    assert len(g.covered) >= 16 and g.steps >= 2
    assert eps_disjoint_check(g.center_set.model and [interval(Z, x[0], x[0] + 8) for x in g.centers],
                              Fraction(1, 2)).given_order_ok
    g2 = greedy_centers(box(Z2, 32), box(Z2, 4), Fraction(1, 8))
    assert len(g2.covered) >= 128
    assert g2.center_set <= core(box(Z2, 4), box(Z2, 32))
    g3 = greedy_centers(interval(Z, 0, 8), interval(Z, 0, 8), Fraction(1, 4))
    assert g3.centers == [(0,)] and len(g3.covered) == 8


def test_union_bound_oracles(Z):
    K = FiniteSubset.from_elements(Z, [0, 1])
    single = union_invariance_bound([interval(Z, 0, 8)], Fraction(1, 4), Fraction(1, 2), K)
    assert single.hypotheses_hold and single.conclusion and single.lhs == 4
    two = union_invariance_bound([interval(Z, 0, 8), interval(Z, 20, 28)], Fraction(1, 4), Fraction(1, 2), K)
    assert two.hypotheses_hold and two.conclusion and two.lhs == 8
    pair = union_invariance_bound([interval(Z, 0, 10), interval(Z, 8, 18)], Fraction(1, 4), Fraction(2, 5), K)
    assert pair.hypotheses_hold and pair.conclusion and pair.lhs == 4


def test_difference_bound_oracles(Z):
    K = FiniteSubset.from_elements(Z, [0, 1])
    r = difference_invariance_bound(interval(Z, 0, 16), interval(Z, 0, 64), Fraction(1, 4), K)
    # A = [0,16) has boundary 4 > eps^2 |A| = 1, so only the conclusion is checked.
    assert r.conclusion and not r.hypotheses["A boundary-invariant"]
    assert r.hypotheses["B boundary-invariant"]
    r0 = difference_invariance_bound(FiniteSubset.empty(Z), interval(Z, 0, 64), Fraction(1, 4), K)
    assert r0.conclusion
    hug = difference_invariance_bound(interval(Z, 1, 17), interval(Z, 0, 64), Fraction(1, 4), K)
    assert hug.ok


def test_quasi_tile_single_scale(Z):
    D = interval(Z, 0, 32)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        t = quasi_tile(D, [D], Fraction(1, 8))
    assert [Z.unpack(c).ravel().tolist() for c in t.centers] == [[0]]
    rep = validate_quasi_tiling(t, D, Fraction(1, 2))
    assert rep.ok and rep.covered == 32


def test_quasi_tile_z2_boxes(Z2):
    D = box(Z2, 256)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        t = quasi_tile(D, [box(Z2, 4), box(Z2, 16), box(Z2, 64)], Fraction(1, 8))
    rep = validate_quasi_tiling(t, D, Fraction(1, 2))
    assert rep.ok, rep.clauses
    assert rep.covered >= len(D) // 2


def test_quasi_tile_z_intervals(Z):
    D = interval(Z, 0, 2 ** 14)
    shapes = [interval(Z, 0, s) for s in (2, 8, 32, 128, 512)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        t = quasi_tile(D, shapes, Fraction(1, 8))
    rep = validate_quasi_tiling(t, D, Fraction(1, 2))
    assert rep.ok and rep.covered >= Fraction(1, 2) * len(D)


def test_moved_center_breaks_containment(Z):
    D = interval(Z, 0, 256)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        t = quasi_tile(D, [interval(Z, 0, 4), interval(Z, 0, 16)], Fraction(1, 8))
    assert validate_quasi_tiling(t, D, Fraction(1, 2)).ok
    bad = t.moved(1, 0, (1000,))
    rep = validate_quasi_tiling(bad, D, Fraction(1, 2))
    assert not rep.clauses["3 contained in D"]


@settings(max_examples=25, deadline=None)
@given(n=st.integers(40, 120), k=st.integers(2, 6), eps=st.fractions(Fraction(1, 8), Fraction(3, 8)))
def test_greedy_packing_properties(n, k, eps):
    Z2 = get_model("Z2")
    D, K = box(Z2, n), box(Z2, k)
    g = greedy_centers(D, K, eps)
    tiles = [K.left_translate(c) for c in g.centers]
    assert len(g.covered) >= eps * len(D)
    assert all(T <= D for T in tiles)
    assert eps_disjoint_check(tiles, 2 * eps).given_order_ok
    assert g.covered == FiniteSubset.union_all(Z2, tiles)
    assert len(product_set(g.center_set, K)) == len(g.covered)
