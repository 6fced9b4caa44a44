"""Budgeted combinatorial Thompson sampling over covariates (CBwK-LP-TS).

Each covariate is an arm with a Beta pseudo-posterior on its prognostic
value.  A round samples every posterior, ranks arms by sample over
effective cost (nominal cost inflated by multiplicative shadow prices) and
fills the round's budget greedily.  Budget feasibility is always checked in
rescaled nominal cost units; effective costs only drive the ranking.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from darts_rct.errors import ContractViolation, InvalidInputError

COST_FLOOR = 1e-6
BUDGET_TOL = 1e-9


class BanditWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ArmState:
    """Read-only view of one arm, as exported in snapshots."""

    alpha: float
    beta: float
    shadow_price: float
    nominal_cost: float
    rescaled_cost: float
    pulls: int


@dataclass
class BanditState:
    """Mutable sampler state owned by a single replication.

    Arm quantities are stored column-wise as arrays of length ``p``.
    """

    alpha: NDArray[np.float64]
    beta: NDArray[np.float64]
    shadow: NDArray[np.float64]
    nominal_cost: NDArray[np.float64]
    rescaled_cost: NDArray[np.float64]
    pulls: NDArray[np.int64]
    budget_shadow: float
    remaining_budget: float
    initial_budget: float
    epsilon: float
    horizon: int
    prior_alpha: float
    prior_beta: float
    max_arms_per_round: int | None = None
    pacing: bool = True
    rounds_done: int = 0
    spent: float = 0.0
    cost_scale: float = 1.0
    flags: list[str] = field(default_factory=list)

    @property
    def p(self) -> int:
        return self.alpha.size

    @property
    def posterior_mean(self) -> NDArray[np.float64]:
        return self.alpha / (self.alpha + self.beta)

    def arm(self, j: int) -> ArmState:
        return ArmState(
            float(self.alpha[j]),
            float(self.beta[j]),
            float(self.shadow[j]),
            float(self.nominal_cost[j]),
            float(self.rescaled_cost[j]),
            int(self.pulls[j]),
        )

    def round_allowance(self) -> float:
        """Rescaled budget available to the next round.

        With pacing on, the remaining budget is spread evenly over the
        remaining rounds ``H = T - t + 1``; otherwise the whole remainder is
        available.
        """
        if not self.pacing:
            return self.remaining_budget
        rounds_left = max(self.horizon - self.rounds_done, 1)
        return self.remaining_budget / rounds_left

    def to_record(self) -> dict:
        return {
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "shadow_price": self.shadow.tolist(),
            "pulls": self.pulls.tolist(),
            "budget_shadow": self.budget_shadow,
            "remaining_budget": self.remaining_budget,
            "initial_budget": self.initial_budget,
            "epsilon": self.epsilon,
            "rounds_done": self.rounds_done,
        }

    def snapshot(self) -> str:
        """Serialize the learning state as a JSON text record."""
        return json.dumps(self.to_record(), sort_keys=True)


@dataclass(frozen=True)
class SuperArm:
    indices: tuple[int, ...]
    total_rescaled_cost: float

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def array(self) -> NDArray[np.int64]:
        return np.asarray(self.indices, dtype=np.int64)


EMPTY_SUPER_ARM = SuperArm((), 0.0)


def init_bandit(
    p: int,
    costs: ArrayLike,
    budget: float,
    horizon: int,
    prior_alpha: float = 1.0,
    prior_beta: float = 1.0,
    max_arms: int | None = None,
    pacing: bool = True,
) -> BanditState:
    """Initialise priors, unit shadow prices and the rescaled budget.

    ``B0 = min(B, T)``, rescaled costs ``c_j * B0 / B`` and learning rate
    ``sqrt(log(p + 1) / B0)``.  Costs above one are normalised by their
    maximum (with the budget divided by the same factor); non-positive
    costs are clamped to 1e-6.
    """
    if p < 1:
        raise InvalidInputError("p must be >= 1")
    if horizon < 1:
        raise InvalidInputError("horizon must be >= 1")
    if budget <= 0:
        raise InvalidInputError("budget must be positive")
    if prior_alpha <= 0 or prior_beta <= 0:
        raise InvalidInputError("Beta prior shapes must be positive")
    if max_arms is not None and max_arms < 0:
        raise InvalidInputError("max_arms must be non-negative")
    c = np.array(costs, dtype=float).ravel()
    if c.size != p:
        raise InvalidInputError(f"expected {p} costs, got {c.size}")
    if not np.all(np.isfinite(c)):
        raise InvalidInputError("costs must be finite")
    flags: list[str] = []
    if np.any(c <= 0):
        warnings.warn("non-positive costs clamped to 1e-6", BanditWarning, stacklevel=2)
        c = np.maximum(c, COST_FLOOR)
        flags.append("cost_clamped")
    scale = 1.0
    if c.max() > 1.0:
        scale = float(c.max())
        c = c / scale
        budget = budget / scale
        flags.append("costs_rescaled")
    b0 = min(float(budget), float(horizon))
    return BanditState(
        alpha=np.full(p, float(prior_alpha)),
        beta=np.full(p, float(prior_beta)),
        shadow=np.ones(p),
        nominal_cost=c,
        rescaled_cost=c * b0 / budget,
        pulls=np.zeros(p, dtype=np.int64),
        budget_shadow=1.0,
        remaining_budget=b0,
        initial_budget=b0,
        epsilon=math.sqrt(math.log(p + 1) / b0),
        horizon=int(horizon),
        prior_alpha=float(prior_alpha),
        prior_beta=float(prior_beta),
        max_arms_per_round=max_arms,
        pacing=pacing,
        cost_scale=scale,
        flags=flags,
    )


def sample_beta(
    alpha: ArrayLike, beta: ArrayLike, rng: np.random.Generator
) -> NDArray[np.float64]:
    """Independent Beta draws by the Gamma-ratio construction."""
    ga = rng.standard_gamma(np.asarray(alpha, dtype=float))
    gb = rng.standard_gamma(np.asarray(beta, dtype=float))
    return ga / (ga + gb)


def sample_means(state: BanditState, rng: np.random.Generator) -> NDArray[np.float64]:
    return sample_beta(state.alpha, state.beta, rng)


def effective_costs(state: BanditState) -> NDArray[np.float64]:
    """Shadow-price-inflated cost ``c~_j * nu_budget + nu_j``."""
    return state.rescaled_cost * state.budget_shadow + state.shadow


def select_super_arm(
    state: BanditState,
    sampled: ArrayLike,
    budget: float | None = None,
) -> SuperArm:
    """Greedy bang-per-buck fill of the round budget.

    Arms are scanned by decreasing ``sampled / effective_cost`` (ties to the
    lower index); an arm is taken when its rescaled cost still fits and the
    per-round cap, if any, is not yet reached.

    Parameters
    ----------
    budget : float, optional
        Rescaled budget to fill.  Defaults to :meth:`BanditState.round_allowance`,
        and is never allowed to exceed the remaining budget.
    """
    theta = np.asarray(sampled, dtype=float).ravel()
    if theta.size != state.p:
        raise InvalidInputError(f"expected {state.p} sampled means, got {theta.size}")
    cap = state.round_allowance() if budget is None else float(budget)
    cap = min(cap, state.remaining_budget)
    if cap <= 0:
        return EMPTY_SUPER_ARM
    ratio = theta / effective_costs(state)
    order = np.argsort(-ratio, kind="stable")
    limit = state.max_arms_per_round
    chosen: list[int] = []
    spend = 0.0
    for j in order:
        if limit is not None and len(chosen) >= limit:
            break
        cj = state.rescaled_cost[j]
        if spend + cj <= cap + BUDGET_TOL:
            chosen.append(int(j))
            spend += cj
    chosen.sort()
    return SuperArm(tuple(chosen), float(state.rescaled_cost[chosen].sum()) if chosen else 0.0)


def commit_selection(state: BanditState, chosen: SuperArm) -> BanditState:
    """Charge the budget and raise shadow prices for the chosen arms.

    Per selected arm: ``nu_j *= 1 + eps`` and ``nu_budget *= (1 + eps)^c~_j``.
    Mutates and returns ``state``; an empty selection only advances the round.
    """
    idx = chosen.array
    if idx.size:
        if len(set(chosen.indices)) != idx.size or idx.min() < 0 or idx.max() >= state.p:
            raise ContractViolation(f"invalid arm indices {chosen.indices}")
        cost = float(state.rescaled_cost[idx].sum())
        if cost > state.remaining_budget + BUDGET_TOL:
            raise ContractViolation(
                f"selection costs {cost} but only {state.remaining_budget} remains"
            )
        if state.max_arms_per_round is not None and idx.size > state.max_arms_per_round:
            raise ContractViolation("selection exceeds the per-round arm cap")
        step = 1.0 + state.epsilon
        state.shadow[idx] *= step
        state.budget_shadow *= step**cost
        state.pulls[idx] += 1
        state.spent += cost
        state.remaining_budget = max(state.remaining_budget - cost, 0.0)
    state.rounds_done += 1
    return state


def update_rewards(
    state: BanditState, chosen: SuperArm, rewards: ArrayLike
) -> BanditState:
    """Conjugate pseudo-Bernoulli update ``alpha += r``, ``beta += 1 - r``."""
    r = np.asarray(rewards, dtype=float).ravel()
    if r.size != len(chosen):
        raise InvalidInputError(f"expected {len(chosen)} rewards, got {r.size}")
    if r.size == 0:
        return state
    if not np.all(np.isfinite(r)) or np.any(r < 0) or np.any(r > 1):
        raise InvalidInputError("rewards must lie in [0, 1]")
    idx = chosen.array
    state.alpha[idx] += r
    state.beta[idx] += 1.0 - r
    return state
