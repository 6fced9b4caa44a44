"""
Comparing designs
=================

A small Monte Carlo of four designs on the same data streams: complete
randomization, a random covariate subset, the adaptive design, and an
oracle that measures the informative covariates for free.
"""

# %%
from darts_rct import harness as hs
from darts_rct.records import format_summary

grid = [
    hs.SimConfig(dgp="liang", p=50, n=200, T=50, B=1000.0, n_candidates=300, seed=1, method=m)
    for m in ("dim", "random", "darts", "oracle")
]
summaries = hs.run_grid(grid, reps=20)

# %%
# Relative efficiency is the MSE ratio against complete randomization.
print(format_summary(summaries))
