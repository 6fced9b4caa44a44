"""
Regret with fractional and binary rewards
=========================================

Cumulative regret against the policy that always buys the informative
covariates, on the linear surface.
"""

# %%
import numpy as np

from darts_rct import harness as hs

curves = {}
for mode in ("fractional", "binary"):
    grid = [hs.SimConfig(dgp="linear", p=100, n=200, T=100, B=2000.0, n_candidates=200,
                         seed=1, reward_mode=mode)]
    _, res = hs.run_grid(grid, reps=10, keep_results=True)
    curves[mode] = np.median(hs.regret_curves(res[0]), axis=0)

# %%
# Growth slows in the second half of the horizon.
for mode, c in curves.items():
    print(f"{mode:>10}: regret(50) {c[49]:.1f}, regret(100) {c[99]:.1f}, ratio {c[99] / c[49]:.2f}")
