"""
Thompson sampling under a budget
================================

Ten Bernoulli arms with unequal costs.  The sampler picks a subset each
round, pays for it out of a shared budget, and learns from per-arm feedback.
"""

# %%
import numpy as np

from darts_rct import bandit as bd

rng = np.random.default_rng(3)
p, T = 10, 200
means = np.linspace(0.05, 0.95, p)
costs = rng.uniform(0.2, 1.0, p)
state = bd.init_bandit(p, costs, budget=400.0, horizon=T)
print(f"budget after rescaling {state.initial_budget:.1f}, learning rate {state.epsilon:.4f}")

# %%
sizes = []
for t in range(T):
    chosen = bd.select_super_arm(state, bd.sample_means(state, rng))
    bd.commit_selection(state, chosen)
    sizes.append(len(chosen))
    idx = list(chosen.indices)
    bd.update_rewards(state, chosen, (rng.random(len(idx)) < means[idx]).astype(float))

# %%
# Spend stays inside the budget, and pulls drift toward good value for money.
print(f"spent {state.spent:.2f} of {state.initial_budget:.2f}; mean subset size {np.mean(sizes):.2f}")
post = state.alpha / (state.alpha + state.beta)
for j in np.argsort(-means / costs)[:5]:
    print(f"arm {j}: mean {means[j]:.2f} cost {costs[j]:.2f} pulls {state.pulls[j]:3d} posterior {post[j]:.2f}")
