from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest

from folnerlab import BuildConfig, FiniteSubset, Schedule, build_filtered_sequence, get_model
from folnerlab.ncalg import OpValuedFunction


@pytest.fixture(scope="session")
def Z():
    return get_model("Z")


@pytest.fixture(scope="session")
def Z2():
    return get_model("Z2")


@pytest.fixture(scope="session")
def seq_z3():
    """Regular filtered sequence on Z, eps 1/4, c 1/2, depth 3 (window 4096)."""
    return build_filtered_sequence(get_model("Z"), Fraction(1, 4), Fraction(1, 2), 3,
                                   BuildConfig(schedule=Schedule(4)))


@pytest.fixture(scope="session")
def seq_z2_2():
    """Regular filtered sequence on Z^2, eps 1/4, c 1/2, depth 2."""
    return build_filtered_sequence(get_model("Z2"), Fraction(1, 4), Fraction(1, 2), 2,
                                   BuildConfig(schedule=Schedule(2)))


def interval(model, a: int, b: int) -> FiniteSubset:
    return FiniteSubset.from_coords(model, np.arange(a, b)[:, None])


def box(model, n: int, x0: int = 0, y0: int = 0) -> FiniteSubset:
    xs, ys = np.meshgrid(np.arange(x0, x0 + n), np.arange(y0, y0 + n), indexing="ij")
    return FiniteSubset.from_coords(model, np.stack([xs.ravel(), ys.ravel()], axis=1))


def random_psd(seq, support: int, d: int, rng: np.random.Generator) -> OpValuedFunction:
    W = seq.window.keys
    idx = np.sort(rng.choice(W.size, size=min(support, W.size), replace=False))
    X = rng.normal(size=(idx.size, d, d)) + 1j * rng.normal(size=(idx.size, d, d))
    return OpValuedFunction(seq.model, W[idx], X @ np.conj(np.swapaxes(X, 1, 2)))


def scalar_stopping_oracle(vals: dict, parts: list, lam: float) -> list[dict]:
    """Classical stopping sets: q_k(x) = q_{k+1}(x) * [f_k(x) <= lam], per point, by hand."""
    K = len(parts) - 1
    q = [None] * (K + 2)
    q[K + 1] = {x: 1 for x in vals}
    for k in range(K, -1, -1):
        q[k] = {}
        for atom in parts[k].atoms():
            xs = [e[0] for e in atom.elements()]
            avg = sum(vals[x] for x in xs) / len(xs)
            for x in xs:
                q[k][x] = q[k + 1][x] * (1 if avg <= lam + 1e-10 else 0)
    return q


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
