"""Scan for real transmission eigenvalues of two radial media and compare with the exact roots.

    python demos/transmission_scan.py [c2]
"""
import sys

import numpy as np

from patlab.grid import GridSpec
from patlab.medium import MediumRecipe, build_medium
from patlab.transmission import radial_te_oracle, strip_scan

c2 = float(sys.argv[1]) if len(sys.argv) > 1 else 0.5
g = GridSpec.radial(3000)
m1 = build_medium(MediumRecipe(), g)
m2 = build_medium(MediumRecipe("radial-layers", {"layers": [(1.0, c2)]}), g)

scan = strip_scan(m1, m2, np.linspace(0.5, 10.0, 200))
exact = radial_te_oracle(1.0, c2, (0.5, 10.0)).roots
print("scan minima:", np.round(scan.refined.real, 5))
print("exact roots:", np.round(exact, 5))
