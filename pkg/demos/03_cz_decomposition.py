"""Decompose a random positive 2 x 2 matrix-valued function on Z.

Run: python3 demos/03_cz_decomposition.py
"""

from fractions import Fraction

import numpy as np

from folnerlab import (
    BuildConfig,
    OpValuedFunction,
    Schedule,
    build_filtered_sequence,
    cz_decompose,
    get_model,
    verify_bad,
    verify_good,
    verify_hybrid,
    zeta_projection,
)

seq = build_filtered_sequence(get_model("Z"), Fraction(1, 4), Fraction(1, 2), 3, BuildConfig(Schedule(4)))
rng = np.random.default_rng(1)
W = seq.window.keys
idx = np.sort(rng.choice(W.size, 300, replace=False))
X = rng.normal(size=(300, 2, 2)) + 1j * rng.normal(size=(300, 2, 2))
f = OpValuedFunction(seq.model, W[idx], X @ np.conj(np.swapaxes(X, 1, 2)))
print(f"||f||_1 = {np.real(np.trace(f.values, axis1=1, axis2=2)).sum():.3f}")

for lam in (0.5, 2.0, 8.0):
    parts = cz_decompose(f, lam, seq)
    # Stopping projections p_k mark where level-k averages first exceed lam.
    stopped = [float(np.real(np.trace(p, axis1=1, axis2=2)).sum()) for p in parts.cc.p]
    print(f"\nlam = {lam}: trace of p_k by level {np.round(stopped, 3).tolist()}")
    print(f"  reconstruction residual {parts.reconstruction_residual():.2e}")
    for rep in (verify_good(parts), verify_hybrid(parts), verify_bad(parts, E=seq.window)):
        for row in rep.rows:
            if row.asserted:
                print(f"  {'ok ' if row.holds else 'BAD'} {row.name}: {row.value:.4g} vs {row.bound:.4g}")
    zeta = zeta_projection(seq, parts.cc)
    print(f"  lam phi(1 - zeta) = {lam * zeta.phi_complement:.4g} <= {zeta.bound:.4g}")
