"""Ergodic averages over the sets [0, 4^n) for two concrete actions.

Run: python3 demos/04_ergodic_averages.py
"""

import numpy as np

from folnerlab import Schedule, TorusTranslation, UnitaryConjugation, ergodic_converge

# Z acting on 3 x 3 matrices by conjugation with a fixed generic unitary.
rng = np.random.default_rng(0)
H = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
action = UnitaryConjugation.from_hermitian(H + H.conj().T)
x = rng.normal(size=(3, 3))
table = ergodic_converge(action, x, Schedule(4), 6, threshold=1e-2)
print("conjugation: n, |F_n|, ||A_n x - P x||, geometric-sum prediction")
for r in table.rows:
    print(f"  {r.n}  {r.size:>5}  {r.error:.3e}  {r.oracle:.3e}")

# Z^2 translating (Z/16)^2: the average is the mean once a full period is covered.
torus = TorusTranslation(16, 2)
delta = np.zeros((16, 16), dtype=np.int64)
delta[0, 0] = 1
table = ergodic_converge(torus, delta, Schedule(2), 6)
print("\ntorus: n, |F_n|, error, exactly the mean")
for r in table.rows:
    print(f"  {r.n}  {r.size:>5}  {r.error:.3e}  {r.exact_equal}")
