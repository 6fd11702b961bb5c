"""Quasi-tile a disc of radius 64 in Z^2 by squares of side 2, 4, 8 and 16.

Run: python3 demos/01_quasi_tiling.py [output.svg]
"""

import sys
import warnings
from fractions import Fraction

from folnerlab import FiniteSubset, get_model, quasi_tile, validate_quasi_tiling
from folnerlab.svg import tiling_svg

Z2 = get_model("Z2")


def square(n: int) -> FiniteSubset:
    return FiniteSubset.from_elements(Z2, [(x, y) for x in range(n) for y in range(n)])


D = FiniteSubset.from_elements(
    Z2, [(x, y) for x in range(-64, 65) for y in range(-64, 65) if x * x + y * y <= 64 * 64])
shapes = [square(s) for s in (2, 4, 8, 16)]
eps = Fraction(1, 8)

# Scales run largest first; each packs translates into what is still
# uncovered. By default the run stops at coverage 1 - 4 eps; asking for
# 95% makes the smaller scales fill in around the curved edge.
with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    tiling = quasi_tile(D, shapes, eps, stop_at=Fraction(95, 100))

for i, centers in enumerate(tiling.centers):
    print(f"side {int(len(shapes[i]) ** 0.5):>2}: {centers.size} translates")

# Every clause is an exact integer or rational comparison.
report = validate_quasi_tiling(tiling, D, 4 * eps)
for clause, ok in report.clauses.items():
    print(f"  {clause:<28} {'holds' if ok else 'FAILS'}")
print(f"covered {report.covered} of {len(D)} = {report.covered / len(D):.3f} (need >= {1 - 4 * eps})")

if len(sys.argv) > 1:
    with open(sys.argv[1], "w") as fh:
        fh.write(tiling_svg(tiling, D))
    print(f"wrote {sys.argv[1]}")
