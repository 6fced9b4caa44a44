"""
A full adaptive run
===================

One replication of the adaptive design on the Liang surface with 100
candidate covariates, of which the first 20 matter.
"""

# %%
import numpy as np

from darts_rct import harness as hs
from darts_rct.diagnostics import diagnostics

cfg = hs.SimConfig(dgp="liang", p=100, n=200, T=100, B=2000.0, n_candidates=500, seed=7)
res = hs.run_replication(cfg)
print(f"estimate {res.mu_hat:.4f}, CI ({res.ci[0]:.4f}, {res.ci[1]:.4f}), sample effect {res.sample_ate:.4f}")
print(f"spent {res.total_spend:.2f} of {res.initial_budget:.2f} in {res.wall_time:.1f}s")

# %%
# Share of each batch's spend that went to the 20 informative covariates.
share = np.array([rec.oracle_share for rec in res.records])
for lo in range(0, 100, 20):
    print(f"batches {lo + 1:3d}-{lo + 20:3d}: oracle share {np.nanmean(share[lo:lo + 20]):.2f}")

# %%
d = diagnostics([res])
print(f"posterior mean: signal arms {d.signal_mean:.3f}, noise arms {d.noise_mean:.3f}")
