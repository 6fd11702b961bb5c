"""Acceptance criteria, one test per criterion.

Each test prints a single ``ACCEPTANCE <n> PASS|FAIL`` line (also collected in
the terminal summary) and then asserts.  Tolerances are pinned below.
"""

from __future__ import annotations

import json
import math
import time
import warnings
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from folnerlab import (
    BuildConfig,
    FiniteSubset,
    Schedule,
    TorusTranslation,
    UnitaryConjugation,
    WindowExhaustedError,
    build_filtered_sequence,
    cuculescu,
    cz_decompose,
    ergodic_converge,
    get_model,
    local_estimate_report,
    quasi_tile,
    validate_quasi_tiling,
    validate_regular,
    weak11_check,
    word_ball,
)
from folnerlab.cli import main
from folnerlab.commands import local_fixtures
from folnerlab.czdec import (
    verify_bad,
    verify_good,
    verify_hybrid,
    zeta_annihilation_scan,
    zeta_projection,
)
from folnerlab.ergodic import cancellation_check
from folnerlab.filtration import disjointify_tiles
from folnerlab.geometry import boundary_size, is_boundary_invariant
from folnerlab.report import strip_timing
from folnerlab.tiling import (
    difference_invariance_bound,
    find_low_overlap_center,
    greedy_centers,
    union_invariance_bound,
)

from conftest import ACCEPTANCE_LINES, box, interval, random_psd, scalar_stopping_oracle

# ---- pinned tolerances and budgets -----------------------------------------------------

TILE_EPS = Fraction(1, 8)
TILE_SECONDS = 120.0
LEMMA_INSTANCES = 100
FILTRATION_SECONDS = 300.0
CZ_INSTANCES = 50
CUCULESCU_TOL = 1e-10
RECONSTRUCTION_TOL = 1e-9
CZ_REL_TOL = 1e-8
CANCELLATION_TOL = 1e-12
WEAK11_CEILING = 64.0
CLOSED_FORM_TOL = 1e-10
CONVERGENCE_TARGET = 1e-2
SEED = 20240611

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
Z = get_model("Z")
Z2g = get_model("Z2")


class Criterion:
    """Collects named sub-checks; records one PASS/FAIL line on exit."""

    def __init__(self, number: int, title: str):
        self.number, self.title = number, title
        self.failures: list[str] = []
        self.count = 0
        self.info = ""

    def check(self, name: str, ok: bool) -> None:
        self.count += 1
        if not ok:
            self.failures.append(name)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None:
            self._emit(False, f"{exc_type.__name__}: {exc}")
            return False
        detail = f"{self.count} checks" if not self.failures else \
            f"{len(self.failures)}/{self.count} failed, first: {self.failures[0]}"
        self._emit(not self.failures, detail + (f"; {self.info}" if self.info else ""))
        assert not self.failures, self.failures[:10]
        return False

    def _emit(self, ok: bool, detail: str) -> None:
        line = f"ACCEPTANCE {self.number} {'PASS' if ok else 'FAIL'} {self.title}: {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)


# ---- 1. quasi-tiling validity --------------------------------------------------------------

TILINGS = {
    "Z": (lambda: interval(Z, 0, 2 ** 14), lambda: [interval(Z, 0, s) for s in (2, 8, 32, 128, 512)]),
    "Z2": (lambda: box(Z2g, 256), lambda: [box(Z2g, s) for s in (2, 4, 8, 16, 32)]),
    "heisenberg": (lambda: word_ball(get_model("heisenberg"), 13),
                   lambda: [word_ball(get_model("heisenberg"), r) for r in (1, 2, 4, 6)]),
    "lamplighter": (lambda: word_ball(get_model("lamplighter"), 14),
                    lambda: [word_ball(get_model("lamplighter"), r) for r in (1, 2, 4, 6)]),
}


def test_criterion_1_quasi_tiling():
    with Criterion(1, "quasi-tiling clauses at eps=1/8 on Z, Z2, Heisenberg, lamplighter") as c:
        for name, (window, shapes) in TILINGS.items():
            t0 = time.perf_counter()
            D = window()
            c.check(f"{name}: window >= 10^4", len(D) >= 10 ** 4)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                t = quasi_tile(D, shapes(), TILE_EPS)
            rep = validate_quasi_tiling(t, D, 4 * TILE_EPS)
            for clause, ok in rep.clauses.items():
                c.check(f"{name}: clause {clause}", bool(ok))
            c.check(f"{name}: coverage >= (1-4eps)|D|", rep.covered >= (1 - 4 * TILE_EPS) * len(D))
            c.check(f"{name}: runtime <= {TILE_SECONDS}s", time.perf_counter() - t0 <= TILE_SECONDS)


# ---- 2. lemma-level exact checks -----------------------------------------------------------


def _low_overlap_instances(rng):
    while True:
        n, k = int(rng.integers(16, 48)), int(rng.integers(2, 5))
        eps = Fraction(int(rng.integers(1, 4)), 16)
        D, K = box(Z2g, n), box(Z2g, k)
        if not is_boundary_invariant(D, eps, K).holds:
            continue
        keep = rng.random(len(D)) < rng.uniform(0.05, 0.6)
        yield D, K, FiniteSubset(Z2g, D.keys[keep]), eps


def _greedy_instances(rng):
    while True:
        n, k = int(rng.integers(24, 64)), int(rng.integers(2, 6))
        eps = Fraction(int(rng.integers(2, 6)), 16)
        D, K = box(Z2g, n), box(Z2g, k)
        if is_boundary_invariant(D, eps, K).holds:
            yield D, K, eps


def _chain(rng, eps: Fraction, lo: int, hi: int):
    """Intervals in Z, each overlapping only its predecessor by at most ``eps`` of itself."""
    tiles, start = [], 0
    for _ in range(int(rng.integers(1, 6))):
        L = int(rng.integers(lo, hi))
        if tiles:
            start = tiles[-1][1] - int(rng.integers(0, math.floor(eps * L) + 1))
        tiles.append((start, start + L))
        start = tiles[-1][1] + int(rng.integers(0, 10))
    return [interval(Z, a, b) for a, b in tiles]


def _ratio(T, K) -> Fraction:
    return Fraction(boundary_size(K, T), len(T))


def test_criterion_2_lemma_checks():
    rng = np.random.default_rng(SEED)
    with Criterion(2, f"lemma checks, {LEMMA_INSTANCES} randomized instances each") as c:
        gen = _low_overlap_instances(rng)
        for i in range(LEMMA_INSTANCES):
            D, K, A, eps = next(gen)
            r = find_low_overlap_center(D, K, A, eps)
            c.check(f"low-overlap #{i}: precondition", r.precondition.holds)
            c.check(f"low-overlap #{i}: overlap <= bound", r.overlap <= r.bound)

        gen = _greedy_instances(rng)
        for i in range(LEMMA_INSTANCES):
            D, K, eps = next(gen)
            g = greedy_centers(D, K, eps)
            c.check(f"greedy #{i}: |CK| >= eps|D|", len(g.covered) >= eps * len(D))

        for i in range(LEMMA_INSTANCES):
            eps = Fraction(int(rng.integers(1, 5)), 16)
            K = FiniteSubset.from_elements(Z, list(range(int(rng.integers(2, 5)))))
            tiles = _chain(rng, eps, 8, 60)
            delta = max(_ratio(T, K) for T in tiles)
            r = union_invariance_bound(tiles, eps, delta, K)
            c.check(f"union #{i}: hypotheses", r.hypotheses_hold)
            c.check(f"union #{i}: conclusion", bool(r.conclusion))

        done = 0
        while done < LEMMA_INSTANCES:
            nB = int(rng.integers(40, 120))
            nA = int(rng.integers(8, nB))
            x0, y0 = (int(v) for v in rng.integers(0, nB - nA + 1, size=2))
            B, A = box(Z2g, nB), box(Z2g, nA, x0, y0)
            K = FiniteSubset.from_elements(Z2g, [(0, 0), (1, 0), (0, 1)])
            worst = max(_ratio(A, K), _ratio(B, K))
            eps = Fraction(math.ceil(math.sqrt(worst) * 1000), 1000)
            while eps * eps < worst:
                eps += Fraction(1, 1000)
            if not (eps < 1 and len(A) <= (1 - eps) * len(B)):
                continue
            r = difference_invariance_bound(A, B, eps, K)
            c.check(f"difference #{done}: hypotheses", r.hypotheses_hold)
            c.check(f"difference #{done}: conclusion", bool(r.conclusion))
            done += 1

        done = 0
        K = FiniteSubset.from_elements(Z, [0, 1])
        L = FiniteSubset.from_elements(Z, [0, 1, 2])
        while done < LEMMA_INSTANCES:
            eps = Fraction(int(rng.integers(1, 4)), 32)
            delta = eps + Fraction(int(rng.integers(1, 8)), 64)
            tiles = _chain(rng, eps, math.ceil(4 / eps), 400)
            r = disjointify_tiles(tiles, K, eps, delta, L)
            if not r.hypotheses_hold:
                continue
            c.check(f"disjointify #{done}: conclusions", r.conclusions_hold)
            done += 1


# ---- 3. regular filtered sequence ----------------------------------------------------------


def test_criterion_3_regular_sequence():
    with Criterion(3, "regular filtered sequences on Z and Z2, eps=1/4, c=1/2, depth 3") as c:
        for group in ("Z", "Z2"):
            t0 = time.perf_counter()
            try:
                seq = build_filtered_sequence(get_model(group), Fraction(1, 4), Fraction(1, 2), 3,
                                              BuildConfig(Schedule(4)))
            except WindowExhaustedError as exc:
                c.check(f"{group}: build ({exc})", False)
                continue
            rep = validate_regular(seq)
            for row in rep.failing():
                c.check(f"{group}: {row.name}", False)
            c.check(f"{group}: validate_regular", rep.ok)
            c.check(f"{group}: runtime <= {FILTRATION_SECONDS}s", time.perf_counter() - t0 <= FILTRATION_SECONDS)


# ---- 4-6. Cuculescu, CZ decomposition, cancellation ---------------------------------------


def _instances(seq):
    for i in range(CZ_INSTANCES):
        rng = np.random.default_rng([SEED, i])
        d = 1 + i % 4
        f = random_psd(seq, int(rng.integers(50, 400)), d, rng)
        tr = np.real(np.trace(f.values, axis1=1, axis2=2))
        lam = float(np.quantile(tr, rng.uniform(0.3, 0.95))) / 4
        yield i, d, f, lam


@pytest.fixture(scope="module")
def cz_suite(seq_z3):
    out = []
    for i, d, f, lam in _instances(seq_z3):
        cc = cuculescu(f, lam, seq_z3)
        parts = cz_decompose(f, lam, seq_z3)
        zeta = zeta_projection(seq_z3, parts.cc)
        out.append((i, d, f, lam, cc, parts, zeta))
    return out


def test_criterion_4_cuculescu(seq_z3, cz_suite):
    with Criterion(4, f"Cuculescu projections on {CZ_INSTANCES} random PSD instances") as c:
        for i, d, f, lam, cc, _, _ in cz_suite:
            for name in ("(1) q f q <= lam", "(2) commutation", "(3) constant on atoms",
                         "(3) increasing", "projection defect"):
                c.check(f"#{i}: {name}", cc.checks[name] <= CUCULESCU_TOL)
            c.check(f"#{i}: (4) lam phi(1-q0) <= ||f||_1", cc.checks["(4) lam phi(1-q0)"] <= cc.checks["(4) ||f||_1"])
            if d == 1:
                W = seq_z3.window.keys
                full = np.zeros(W.size)
                full[np.searchsorted(W, f.keys)] = f.values[:, 0, 0].real
                xs = Z.unpack(W)[:, 0].tolist()
                oracle = scalar_stopping_oracle(dict(zip(xs, full)), seq_z3.P, lam)
                for k in range(len(seq_z3.P) + 1):
                    got = np.rint(cc.q[k][:, 0, 0].real).astype(int).tolist()
                    c.check(f"#{i}: scalar stopping oracle level {k}", got == [oracle[k][x] for x in xs])


def test_criterion_5_cz_decomposition(seq_z3, cz_suite):
    W = seq_z3.window
    half = interval(Z, 0, 2048) & W
    with Criterion(5, f"CZ decomposition bounds on {CZ_INSTANCES} instances") as c:
        for i, d, f, lam, _, parts, zeta in cz_suite:
            c.check(f"#{i}: reconstruction", parts.reconstruction_residual() <= RECONSTRUCTION_TOL)
            for rep in (verify_good(parts), verify_hybrid(parts), verify_bad(parts, E=W, K=half),
                        verify_bad(parts, E=W)):
                for row in rep.rows:
                    if row.asserted:
                        c.check(f"#{i}: {row.name}", row.holds)
            c.check(f"#{i}: lam phi(1-zeta) <= 2||f||_1",
                    lam * zeta.phi_complement <= zeta.bound * (1 + CZ_REL_TOL))


def test_criterion_6_cancellation(seq_z3, cz_suite):
    with Criterion(6, f"zeta D_n(b_k) zeta = 0 for n < k on {CZ_INSTANCES} instances") as c:
        for i, d, f, lam, _, parts, zeta in cz_suite:
            row = cancellation_check(parts, seq_z3, zeta)
            c.check(f"#{i}: zeta D_n(b_k) zeta", row.value <= CANCELLATION_TOL)
            scan = zeta_annihilation_scan(parts, zeta, seq_z3)
            c.check(f"#{i}: pointwise scan", scan.value <= CANCELLATION_TOL)


# ---- 7. local estimates --------------------------------------------------------------------


def test_criterion_7_local_estimates(seq_z3):
    asserted = 0
    with Criterion(7, "local estimates on admissible fixtures") as c:
        for s in range(6):
            rng = np.random.default_rng([SEED, 7, s])
            case1, case2 = local_fixtures(seq_z3, 1 + s % 3, rng)
            for k, g in case1:
                for n in range(k):
                    r = local_estimate_report(g, n, k, 1, seq_z3)
                    asserted += r.asserted
                    c.check(f"seed {s} case 1 n={n} k={k}", r.asserted and r.holds)
            for k, g in case2:
                for n in range(k, len(seq_z3.P)):
                    for p in (1, 2, np.inf):
                        r = local_estimate_report(g, n, k, p, seq_z3)
                        asserted += r.asserted
                        c.check(f"seed {s} case 2 n={n} k={k} p={p}", r.asserted and r.holds)
        c.check("some rows asserted", asserted > 0)


# ---- 8. weak (1,1) regression --------------------------------------------------------------


def test_criterion_8_weak11(seq_z3):
    constants = []
    with Criterion(8, f"measured weak (1,1) constant <= {WEAK11_CEILING:g}") as c:
        for i in range(8):
            rng = np.random.default_rng([SEED, 8, i])
            f = random_psd(seq_z3, int(rng.integers(50, 300)), 1 + i % 3, rng)
            tr = np.real(np.trace(f.values, axis1=1, axis2=2))
            lams = [float(np.quantile(tr, q)) / s for q in (0.5, 0.9) for s in (1, 8)]
            rep = weak11_check(f, lams, seq_z3, ceiling=WEAK11_CEILING)
            c.check(f"#{i}: exact sign enumeration", rep.exact_signs)
            c.check(f"#{i}: constant <= ceiling", rep.constant <= WEAK11_CEILING)
            for row in rep.rows:
                for name, ok in row.holds.items():
                    c.check(f"#{i} lam={row.lam:g}: {name}", ok)
            constants.append(rep.constant)
        c.info = f"max measured constant {max(constants):.4f}"


# ---- 9. ergodic convergence ----------------------------------------------------------------


def test_criterion_9_ergodic_convergence():
    with Criterion(9, "ergodic averages: conjugation closed form and torus exactness") as c:
        rng = np.random.default_rng([SEED, 9])
        H = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        act = UnitaryConjugation.from_hermitian(H + H.conj().T)
        x = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        tab = ergodic_converge(act, x, Schedule(4), 6, threshold=CONVERGENCE_TARGET)
        for r in tab.rows:
            c.check(f"conjugation n={r.n}: closed form", abs(r.error - r.oracle) <= CLOSED_FORM_TOL)
        c.check("conjugation: below 1e-2 by n = 6", tab.rows[-1].n == 6 and tab.rows[-1].error < CONVERGENCE_TARGET)
        torus = TorusTranslation(16, 2)
        delta = np.zeros((16, 16), dtype=np.int64)
        delta[3, 5] = 1
        sched = Schedule(2)
        tab = ergodic_converge(torus, delta, sched, 6)
        for r in tab.rows:
            covers = sched.length(r.n) % 16 == 0
            c.check(f"torus n={r.n}: exact iff a period is covered", r.exact_equal == covers)
        c.check("torus: some level covers a period", any(r.exact_equal for r in tab.rows))


# ---- 10. determinism -----------------------------------------------------------------------

DETERMINISM_RUNS = [
    ("tile", "tile_z"), ("tile", "tile_z2"), ("tile", "tile_heisenberg"), ("tile", "tile_lamplighter"),
    ("partition", "partition_z2"), ("filtration", "filtration_z"), ("filtration", "filtration_z2"),
    ("filtration", "filtration_bad_schedule"), ("cz", "cz_z"), ("verify", "verify_z"),
    ("ergodic", "ergodic_conjugation"), ("ergodic", "ergodic_torus"),
]


def test_criterion_10_determinism(tmp_path):
    with Criterion(10, "identical configs give byte-identical reports") as c:
        for command, name in DETERMINISM_RUNS:
            texts = []
            for run in ("a", "b"):
                out = tmp_path / name / run
                main([command, str(CONFIGS / f"{name}.toml"), "--output", str(out), "--quiet"])
                texts.append((strip_timing((out / "report.json").read_text()), (out / "tables.csv").read_bytes()))
            c.check(f"{name}: report.json", texts[0][0] == texts[1][0])
            c.check(f"{name}: tables.csv", texts[0][1] == texts[1][1])
            c.check(f"{name}: report parses", json.loads(texts[0][0])["command"] == command)
