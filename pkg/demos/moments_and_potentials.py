"""Forward run of a radial bump, its time moments, and the potential formulas.

    python demos/moments_and_potentials.py [n_cells]
"""
import sys

import numpy as np

from patlab.asymptotics import u1_potential, u2_constant
from patlab.grid import GridSpec
from patlab.medium import MediumRecipe, build_medium
from patlab.moments import boundary_moment, recursion_residual, time_moments
from patlab.wave import InitialState, WaveConfig, simulate

n = int(sys.argv[1]) if len(sys.argv) > 1 else 48
g = GridSpec.cube(n)
m = build_medium(MediumRecipe(), g)
f = np.where(g.r < 1, (1 - g.r**2) ** 8, 0.0)

rec = simulate(WaveConfig(m, InitialState(f), T=2.8, sponge_width=0.5, moment_K=8,
                          record_interior=False, adaptive=False))
tab = time_moments(rec, 8, need_tail=False)
for row in recursion_residual(tab, m, f)[:4]:
    print(f"A u^({row['k']}) residual: {row['value']:.2e}")

obs = g.observation
u1 = u1_potential(m, f)
err = np.linalg.norm((tab.moments[1] - u1)[obs]) / np.linalg.norm(u1[obs])
print(f"u^(1) vs Newtonian potential: {err:.2e}")
print(f"u^(2) mean {tab.moments[2][obs].mean():.6f}, formula {u2_constant(m, f):.6f}")

bm = boundary_moment(rec)
print(f"first nontrivial even boundary moment: n = {bm.k0} ({bm.sign_verdict})")
