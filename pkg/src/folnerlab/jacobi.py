"""Batched cyclic Jacobi eigensolver for small Hermitian matrices.

Each rotation first removes the phase of the pivot entry with a diagonal
unitary, then applies the real symmetric rotation with
``theta = (a_qq - a_pp) / (2 |a_pq|)``.  All matrices of a batch are rotated
together; converged matrices receive identity rotations.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericalError, PreconditionError

OFF_TOL = 1e-13
MAX_SWEEPS = 50
HERMITIAN_TOL = 1e-12


def _off_norm(A: np.ndarray) -> np.ndarray:
    d = A.shape[-1]
    mask = ~np.eye(d, dtype=bool)
    return np.sqrt(np.sum(np.abs(A[..., mask]) ** 2, axis=-1))


def hermitian_defect(A: np.ndarray) -> np.ndarray:
    """``||A - A*||_F`` per matrix."""
    return np.linalg.norm(A - np.conj(np.swapaxes(A, -1, -2)), axis=(-2, -1))


def eigh(A: np.ndarray, check: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and unitary eigenvectors of Hermitian matrices.

    ``A`` has shape ``(..., d, d)``; returns ``w`` of shape ``(..., d)`` and
    ``V`` with ``A = V diag(w) V*``.  Raises :class:`NumericalError` when the
    off-diagonal mass fails to drop below ``1e-13 ||A||_F`` within 50 sweeps.
    """
    A = np.asarray(A, dtype=np.complex128)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise ValueError("expected square matrices")
    batch_shape, d = A.shape[:-2], A.shape[-1]
    A = A.reshape(-1, d, d).copy()
    scale = np.linalg.norm(A, axis=(1, 2))
    if check:
        bad = hermitian_defect(A) > HERMITIAN_TOL * np.maximum(1.0, scale)
        if bad.any():
            raise PreconditionError(f"{int(bad.sum())} matrices are not Hermitian within {HERMITIAN_TOL}")
    A = 0.5 * (A + np.conj(np.swapaxes(A, 1, 2)))
    n = A.shape[0]
    V = np.broadcast_to(np.eye(d, dtype=np.complex128), (n, d, d)).copy()
    tol = OFF_TOL * scale
    for _ in range(MAX_SWEEPS):
        off = _off_norm(A)
        if np.all(off <= tol):
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                _rotate(A, V, p, q)
    else:
        off = _off_norm(A)
        if np.any(off > tol):
            worst = int(np.argmax(off / np.maximum(tol, 1e-300)))
            raise NumericalError(
                f"Jacobi did not converge in {MAX_SWEEPS} sweeps: off-diagonal mass "
                f"{off[worst]:.3e} vs ||A||_F {scale[worst]:.3e}")
    w = np.real(np.diagonal(A, axis1=1, axis2=2)).copy()
    order = np.argsort(w, axis=1, kind="stable")
    w = np.take_along_axis(w, order, axis=1)
    V = np.take_along_axis(V, order[:, None, :], axis=2)
    return w.reshape(*batch_shape, d), V.reshape(*batch_shape, d, d)


def _rotate(A: np.ndarray, V: np.ndarray, p: int, q: int) -> None:
    apq = A[:, p, q]
    r = np.abs(apq)
    # Pivots below this are already converged; dividing by them overflows.
    active = r > 1e-280
    if not active.any():
        return
    phase = np.where(active, apq / np.where(active, r, 1.0), 1.0)
    app = np.real(A[:, p, p])
    aqq = np.real(A[:, q, q])
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        theta = np.where(active, (aqq - app) / (2.0 * np.where(active, r, 1.0)), 0.0)
        big = np.abs(theta) > 1e150
        safe = np.where(big, 1.0, theta)
        t = np.where(safe >= 0, 1.0, -1.0) / (np.abs(safe) + np.sqrt(safe * safe + 1.0))
        t = np.where(big, 0.5 / np.where(big, theta, 1.0), t)
    t = np.where(active, t, 0.0)
    c = 1.0 / np.sqrt(t * t + 1.0)
    s = t * c
    # U = diag(1, conj(phase)) @ [[c, s], [-s, c]]
    U = np.empty((A.shape[0], 2, 2), dtype=np.complex128)
    U[:, 0, 0] = c
    U[:, 0, 1] = s
    U[:, 1, 0] = -s * np.conj(phase)
    U[:, 1, 1] = c * np.conj(phase)
    idx = [p, q]
    A[:, :, idx] = A[:, :, idx] @ U
    A[:, idx, :] = np.conj(np.swapaxes(U, 1, 2)) @ A[:, idx, :]
    V[:, :, idx] = V[:, :, idx] @ U
    A[:, p, q] = 0.0
    A[:, q, p] = 0.0
