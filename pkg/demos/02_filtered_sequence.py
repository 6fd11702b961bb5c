"""Build a regular filtered Folner sequence on Z and look at its levels.

Run: python3 demos/02_filtered_sequence.py
"""

from fractions import Fraction

import numpy as np

from folnerlab import BuildConfig, Schedule, build_filtered_sequence, get_model, validate_regular
from folnerlab.filtration import admissible_region

seq = build_filtered_sequence(get_model("Z"), Fraction(1, 4), Fraction(1, 2), 3, BuildConfig(Schedule(4)))

# Averaging sets F_n, templates B_n and nested partitions P_n of the window.
print(f"window: {len(seq.window)} points")
for n in range(seq.depth + 1):
    flags = seq.admissible_flags(n)
    share = seq.P[n].sizes[flags].sum() / len(seq.window)
    print(f"level {n}: |F|={len(seq.F[n]):>5}  |B|={len(seq.B[n]):>4}  "
          f"atoms={seq.P[n].n_atoms:>4}  admissible share={share:.3f}")

# Coarser levels are unions of finer atoms.
for n in range(seq.depth):
    fine, coarse = seq.P[n].labels, seq.P[n + 1].labels
    pairs = np.unique(np.stack([fine, coarse]), axis=1)
    print(f"P_{n} refines P_{n + 1}: {np.unique(pairs[0]).size == pairs.shape[1]}")

report = validate_regular(seq)
print(f"regular: {report.ok} ({sum(r.gating for r in report.rows)} gating rows)")
print(f"admissible region: {len(admissible_region(seq))} points")
