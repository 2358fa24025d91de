"""
The renewal equation for the first moment
=========================================

The mean total mass of a tree rooted in an excursion solves
``m = f + m * mu`` with ``f(t) = int chi_t dQ`` and
``mu(t) = int a(chi_t) dQ``.  Both inputs are estimated from excursions,
the equation is solved on a grid, and the result is compared with trees.
"""

import numpy as np

from virgin_island import renewal as rn
from virgin_island import scale as sc
from virgin_island import verify as vf
from virgin_island.coeffs import LogisticFeller

# a lattice kernel first: mu = 0.6 delta_{0.5} has a geometric-series solution
dt = 0.01
t = dt * np.arange(401)
mu = np.zeros_like(t)
mu[50] = 0.6 / dt
m = rn.solve_renewal(rn.RenewalInput(np.exp(-t), mu, dt))
print(f"lattice kernel: L1 error {np.sum(np.abs(m - rn.geometric_series(t, 0.6, 0.5))) * dt:.2e}")

# the model: renewal solution against trees rooted in an excursion
feller = sc.build_scale_table(LogisticFeller(kappa=1, gamma=0, K=0, beta=1))
cmp_ = vf.renewal_vs_tree(feller, epsilon=0.2, dt=1e-3, grid_dt=0.01, n_excursions=4000,
                          n_trees=4000, seed=5)
for tt, r, rs, v, vs in zip(cmp_.times, cmp_.renewal, cmp_.renewal_se, cmp_.tree, cmp_.tree_se):
    print(f"t={tt:g}: renewal {r:.4f} +- {rs:.4f}   trees {v:.4f} +- {vs:.4f}")
