"""Replication runner, Monte Carlo grid and summary metrics.

A replication draws one outcome surface and cost vector from its seed and
then walks ``T`` batches.  Random streams are keyed by ``(stage, batch)`` so
that, for a given seed, every method sees exactly the same units and
potential outcomes (common random numbers) while their own selection and
assignment draws stay independent.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import time
import warnings
from collections.abc import Callable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum, IntEnum

import numpy as np
from numpy.typing import NDArray

from darts_rct import bandit as bd
from darts_rct import dgp as gen
from darts_rct.design import complete_randomization, rerandomize
from darts_rct.errors import InvalidInputError
from darts_rct.estimate import (
    BatchEstimate,
    CumulativeEstimate,
    difference_in_means,
    lin_adjusted,
    pool,
    wald_interval,
)
from darts_rct.reward import binary_rewards, fractional_rewards, lasso_cv

log = logging.getLogger(__name__)

ORACLE_SET = tuple(range(gen.N_SIGNAL))


class Policy(str, Enum):
    DIM = "dim"
    RANDOM = "random"
    DARTS = "darts"
    ORACLE = "oracle"


class RewardMode(str, Enum):
    FRACTIONAL = "fractional"
    BINARY = "binary"


class Stage(IntEnum):
    SURFACE = 0
    COSTS = 1
    DATA = 2
    SELECT = 3
    ASSIGN = 4
    CV = 5
    SUBSET = 6


@dataclass(frozen=True)
class SimConfig:
    dgp: gen.DgpKind = gen.DgpKind.LIANG
    p: int = 100
    n: int = 100
    T: int = 100
    B: float = 2000.0
    costs: gen.CostKind = gen.CostKind.EQUAL
    method: Policy = Policy.DARTS
    reward_mode: RewardMode = RewardMode.FRACTIONAL
    n_candidates: int = 1000
    seed: int = 1
    cv_folds: int = 5
    max_arms: int | None = None
    adjust: bool = True
    pacing: bool = True
    random_redraw: bool = False
    spread_is_sd: bool = False
    prior_alpha: float = 1.0
    prior_beta: float = 1.0

    def __post_init__(self):
        for name, kind in (("dgp", gen.DgpKind), ("costs", gen.CostKind),
                           ("method", Policy), ("reward_mode", RewardMode)):
            object.__setattr__(self, name, kind(getattr(self, name)))
        if self.n < 2 or self.n % 2:
            raise InvalidInputError(f"n must be a positive even number, got {self.n}")
        if self.T < 1:
            raise InvalidInputError("T must be >= 1")
        if not self.B > 0:
            raise InvalidInputError("B must be positive")
        if self.p < gen.N_SIGNAL:
            raise InvalidInputError(f"p must be >= {gen.N_SIGNAL}")
        if self.n_candidates < 1:
            raise InvalidInputError("n_candidates must be >= 1")
        if self.cv_folds < 2:
            raise InvalidInputError("cv_folds must be >= 2")

    def replace(self, **changes) -> SimConfig:
        return dataclasses.replace(self, **changes)

    def setting_key(self) -> tuple:
        """Everything except the method, seed and method-specific knobs."""
        return (self.dgp.value, self.p, self.n, self.T, self.B, self.costs.value,
                self.n_candidates, self.cv_folds)

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.value if isinstance(v, Enum) else v
        return out


def stream(seed: int, stage: Stage, batch: int = 0) -> np.random.Generator:
    """Independent generator for one (seed, stage, batch) cell."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stage), int(batch)))
    return np.random.default_rng(ss)


@dataclass(frozen=True)
class BatchRecord:
    t: int
    selected: tuple[int, ...]
    spend: float
    tau_hat: float
    v_hat: float
    mu_hat: float
    sigma2_hat: float
    v_dim: float
    reward_mean: float
    oracle_share: float
    flags: tuple[str, ...] = ()

    @property
    def n_selected(self) -> int:
        return len(self.selected)


@dataclass
class ReplicationResult:
    config: SimConfig
    records: list[BatchRecord]
    mu_hat: float
    sigma2_hat: float
    ci: tuple[float, float]
    sample_ate: float
    posterior: NDArray[np.float64] | None
    rescaled_costs: NDArray[np.float64]
    initial_budget: float
    wall_time: float = field(default=0.0, compare=False)

    @property
    def total_spend(self) -> float:
        return float(sum(r.spend for r in self.records if not math.isnan(r.spend)))

    @property
    def covered(self) -> bool:
        return self.ci[0] <= self.sample_ate <= self.ci[1]


class BatchGate:
    """Reveals a batch piecewise and, optionally, logs every access.

    Covariate columns can be read only after ``measure``; outcomes only
    after ``reveal``.  The audit log records ``(event, t)`` tuples, which
    tests use to check that selection never reads the current batch.
    """

    def __init__(self, batch: gen.Batch, t: int, audit: list | None = None):
        self._batch = batch
        self.t = t
        self._audit = audit
        self._log("generate")

    def _log(self, event: str) -> None:
        if self._audit is not None:
            self._audit.append((event, self.t))

    @property
    def n(self) -> int:
        return self._batch.n

    def measure(self, columns: Sequence[int]) -> NDArray[np.float64]:
        self._log("measure")
        return self._batch.x[:, list(columns)]

    def reveal(self, z: NDArray) -> NDArray[np.float64]:
        self._log("reveal")
        return self._batch.observe(z)

    @property
    def unit_effects(self) -> NDArray[np.float64]:
        return self._batch.unit_effects


class _Run:
    """Per-replication shared setup: surface, costs, data streams."""

    def __init__(self, cfg: SimConfig, audit: list | None = None):
        self.cfg = cfg
        self.audit = audit
        self.surface = gen.make_surface(
            cfg.dgp, cfg.p, stream(cfg.seed, Stage.SURFACE), spread_is_sd=cfg.spread_is_sd
        )
        raw = gen.make_costs(cfg.costs, cfg.p, stream(cfg.seed, Stage.COSTS))
        self.costs, self.budget = gen.rescale_costs(raw, cfg.B)
        self.b0 = min(self.budget, float(cfg.T))
        self.rescaled = self.costs * self.b0 / self.budget
        self.records: list[BatchRecord] = []
        self.cum = CumulativeEstimate()
        self.effect_sum = 0.0
        self.units = 0

    def batch(self, t: int) -> BatchGate:
        b = gen.gen_batch(self.surface, self.cfg.n, stream(self.cfg.seed, Stage.DATA, t))
        gate = BatchGate(b, t, self.audit)
        self.effect_sum += float(gate.unit_effects.sum())
        self.units += gate.n
        return gate

    def assign_and_estimate(self, gate: BatchGate, cols: Sequence[int], t: int):
        """Rerandomize on ``cols`` (or randomize completely when empty) and estimate."""
        rng = stream(self.cfg.seed, Stage.ASSIGN, t)
        flags: list[str] = []
        if len(cols) == 0:
            z = complete_randomization(gate.n, rng)
            x = np.zeros((gate.n, 0))
        else:
            x = gate.measure(cols)
            z = rerandomize(x, self.cfg.n_candidates, rng)
        if self.audit is not None:
            self.audit.append(("assign", t))
        y = gate.reveal(z)
        dim = difference_in_means(y, z)
        est = lin_adjusted(y, z, x) if (len(cols) and self.cfg.adjust) else dim
        flags.extend(est.flags)
        if est.degenerate and not dim.degenerate:
            # exact-fit Lin regressions degrade to the unadjusted estimate
            est = dim
            flags.append("fallback_dim")
        return x, z, y, est, dim, flags

    def record(self, t, selected, spend, est: BatchEstimate, dim: BatchEstimate,
               reward_mean=math.nan, flags=()):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            self.cum = pool(self.cum, est)
        sel = tuple(int(j) for j in selected)
        # share of the selected columns' cost, so budget-free Oracle reads 1
        cost = float(self.rescaled[list(sel)].sum()) if sel else 0.0
        if cost <= 0:
            share = math.nan
        else:
            share = float(self.rescaled[[j for j in sel if j < gen.N_SIGNAL]].sum() / cost)
        self.records.append(BatchRecord(
            t, sel, float(spend), est.tau_hat, est.v_hat, self.cum.mu_hat,
            self.cum.sigma2_hat, dim.v_hat, float(reward_mean), share, tuple(flags),
        ))

    def finish(self, posterior=None, started=0.0) -> ReplicationResult:
        ci = wald_interval(self.cum, 0.95) if self.cum.batches_pooled else (math.nan, math.nan)
        return ReplicationResult(
            self.cfg, self.records, self.cum.mu_hat, self.cum.sigma2_hat, ci,
            self.effect_sum / max(self.units, 1), posterior, self.rescaled.copy(),
            self.b0, time.perf_counter() - started,
        )


def run_darts_replication(cfg: SimConfig, audit: list | None = None) -> ReplicationResult:
    """One full pass of the adaptive acquisition loop.

    Per batch: sample posteriors, rank by sample over effective cost, fill
    the round budget, charge it, measure only the chosen columns,
    rerandomize on them, reveal outcomes, Lin-adjust, pool, then fit a
    cross-validated LASSO on the control units and update the chosen arms.
    A batch with nothing selected is completely randomized and analysed by
    difference in means, and its rewards are skipped.  When the LASSO keeps
    no covariate the Beta update is skipped too.
    """
    if cfg.method is not Policy.DARTS:
        raise InvalidInputError("run_darts_replication needs method = darts")
    started = time.perf_counter()
    run = _Run(cfg, audit)
    state = bd.init_bandit(
        cfg.p, run.costs, run.budget, cfg.T, cfg.prior_alpha, cfg.prior_beta,
        cfg.max_arms, cfg.pacing,
    )
    reward_fn = fractional_rewards if cfg.reward_mode is RewardMode.FRACTIONAL else binary_rewards
    for t in range(1, cfg.T + 1):
        theta = bd.sample_means(state, stream(cfg.seed, Stage.SELECT, t))
        chosen = bd.select_super_arm(state, theta)
        bd.commit_selection(state, chosen)
        if audit is not None:
            audit.append(("select", t))
        gate = run.batch(t)
        cols = chosen.indices
        x, z, y, est, dim, flags = run.assign_and_estimate(gate, cols, t)
        reward_mean = math.nan
        if len(cols) == 0:
            flags.append("empty_super_arm")
        else:
            ctrl = z == 0
            fit = lasso_cv(x[ctrl], y[ctrl], cfg.cv_folds, stream(cfg.seed, Stage.CV, t))
            rewards = reward_fn(fit, chosen)
            reward_mean = float(rewards.mean())
            if fit.selected_any:
                bd.update_rewards(state, chosen, rewards)
                if audit is not None:
                    audit.append(("update", t))
            else:
                flags.append("no_lasso_selection")
        run.record(t, cols, chosen.total_rescaled_cost, est, dim, reward_mean, flags)
    return run.finish(state.posterior_mean.copy(), started)


def draw_random_subset(
    costs: NDArray[np.float64], per_batch: float, rng: np.random.Generator
) -> tuple[int, ...]:
    """Uniformly ordered covariates, kept while they fit the per-batch budget."""
    chosen, spend = [], 0.0
    for j in rng.permutation(costs.size):
        if spend + costs[j] <= per_batch + bd.BUDGET_TOL:
            chosen.append(int(j))
            spend += costs[j]
    return tuple(sorted(chosen))


def run_baseline_replication(cfg: SimConfig, audit: list | None = None) -> ReplicationResult:
    """DiM, Random-subset or Oracle replication.

    Random fixes one budget-feasible subset per replication (or redraws it
    every batch when ``random_redraw``); Oracle always uses covariates 1-20
    and records its spend as NaN because it is budget-free.
    """
    if cfg.method is Policy.DARTS:
        raise InvalidInputError("use run_darts_replication for darts")
    started = time.perf_counter()
    run = _Run(cfg, audit)
    per_batch = run.budget / cfg.T
    subset: tuple[int, ...] = ()
    if cfg.method is Policy.RANDOM and not cfg.random_redraw:
        subset = draw_random_subset(run.costs, per_batch, stream(cfg.seed, Stage.SUBSET))
    for t in range(1, cfg.T + 1):
        if cfg.method is Policy.DIM:
            cols: tuple[int, ...] = ()
            spend = 0.0
        elif cfg.method is Policy.ORACLE:
            cols = ORACLE_SET
            spend = math.nan
        else:
            if cfg.random_redraw:
                subset = draw_random_subset(run.costs, per_batch, stream(cfg.seed, Stage.SUBSET, t))
            cols = subset
            spend = float(run.rescaled[list(cols)].sum()) if cols else 0.0
        gate = run.batch(t)
        if cfg.method is Policy.DIM:
            rng = stream(cfg.seed, Stage.ASSIGN, t)
            z = complete_randomization(gate.n, rng)
            est = difference_in_means(gate.reveal(z), z)
            run.record(t, cols, spend, est, est)
            continue
        _, _, _, est, dim, flags = run.assign_and_estimate(gate, cols, t)
        run.record(t, cols, spend, est, dim, flags=flags)
    return run.finish(None, started)


POLICIES: dict[Policy, Callable[[SimConfig], ReplicationResult]] = {
    Policy.DIM: run_baseline_replication,
    Policy.RANDOM: run_baseline_replication,
    Policy.ORACLE: run_baseline_replication,
    Policy.DARTS: run_darts_replication,
}


def run_replication(cfg: SimConfig) -> ReplicationResult:
    return POLICIES[cfg.method](cfg)


@dataclass(frozen=True)
class FailedReplication:
    config: SimConfig
    error: str


def _safe_run(cfg: SimConfig):
    try:
        return run_replication(cfg)
    except Exception as exc:  # noqa: BLE001 - failures are recorded, not raised
        return FailedReplication(cfg, f"{type(exc).__name__}: {exc}")


@dataclass(frozen=True)
class McSummary:
    setting: tuple
    method: str
    reps: int
    failed: int
    mean_ate: float
    bias: float
    emp_sd: float
    mse: float
    median_se: float
    coverage: float
    re_vs_dim: float
    rel_rmse: float
    ci_width: float

    COLUMNS = ("dgp", "p", "n", "T", "B", "costs", "n_candidates", "cv_folds", "method",
               "reps", "failed", "mean_ate", "bias", "emp_sd", "mse", "median_se",
               "coverage", "re_vs_dim", "rel_rmse", "ci_width")

    def row(self) -> list:
        return [*self.setting, self.method, self.reps, self.failed, self.mean_ate,
                self.bias, self.emp_sd, self.mse, self.median_se, self.coverage,
                self.re_vs_dim, self.rel_rmse, self.ci_width]


def summarize(results: Sequence[ReplicationResult]) -> dict:
    """Bias, spread, MSE, median SE, coverage and CI width over replications."""
    mu = np.array([r.mu_hat for r in results])
    truth = np.array([r.sample_ate for r in results])
    se = np.sqrt([r.sigma2_hat for r in results])
    err = mu - truth
    lo = np.array([r.ci[0] for r in results])
    hi = np.array([r.ci[1] for r in results])
    return {
        "mean_ate": float(mu.mean()),
        "bias": float(err.mean()),
        "emp_sd": float(mu.std(ddof=1)) if mu.size > 1 else 0.0,
        "mse": float(np.mean(err**2)),
        "median_se": float(np.median(se)),
        "coverage": float(np.mean((lo <= truth) & (truth <= hi))),
        "ci_width": float(np.mean(hi - lo)),
    }


def _label(cfg: SimConfig) -> str:
    label = cfg.method.value
    if cfg.method is Policy.DARTS and cfg.reward_mode is RewardMode.BINARY:
        label += "-binary"
    if cfg.method is not Policy.DIM and not cfg.adjust:
        label += "-rerand"
    return label


def run_grid(
    grid: Sequence[SimConfig],
    reps: int,
    workers: int = 1,
    keep_results: bool = False,
):
    """Monte Carlo over ``reps`` seeds for every config.

    Replication ``r`` of a config uses ``seed = cfg.seed + r``.  Work is
    spread over a process pool, but results are collected in submission
    order so the worker count never changes the output.  Failing
    replications are logged with their seed and left out of the summary.

    Returns
    -------
    summaries : list of McSummary
    results : dict mapping config index to its list of ReplicationResult
        Only when ``keep_results``.
    """
    if reps < 1:
        raise InvalidInputError("reps must be >= 1")
    jobs = [(ci, cfg.replace(seed=cfg.seed + r)) for ci, cfg in enumerate(grid) for r in range(reps)]
    cfgs = [c for _, c in jobs]
    if workers <= 1:
        outs = [_safe_run(c) for c in cfgs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            outs = list(ex.map(_safe_run, cfgs, chunksize=max(1, len(cfgs) // (4 * workers))))

    per_cfg: dict[int, list[ReplicationResult]] = {i: [] for i in range(len(grid))}
    failed: dict[int, int] = {i: 0 for i in range(len(grid))}
    for (ci, cfg), out in zip(jobs, outs):
        if isinstance(out, FailedReplication):
            log.warning("replication failed (seed=%d, method=%s): %s",
                        cfg.seed, cfg.method.value, out.error)
            failed[ci] += 1
        else:
            per_cfg[ci].append(out)

    stats = {ci: summarize(rs) if rs else None for ci, rs in per_cfg.items()}
    dim_mse: dict[tuple, float] = {}
    for ci, cfg in enumerate(grid):
        if cfg.method is Policy.DIM and stats[ci] is not None:
            dim_mse.setdefault(cfg.setting_key(), stats[ci]["mse"])

    summaries = []
    for ci, cfg in enumerate(grid):
        s = stats[ci]
        if s is None:
            continue
        ref = dim_mse.get(cfg.setting_key(), math.nan)
        re = ref / s["mse"] if s["mse"] > 0 else math.nan
        if cfg.method is Policy.DIM:
            re = 1.0
        summaries.append(McSummary(
            cfg.setting_key(), _label(cfg), len(per_cfg[ci]), failed[ci],
            s["mean_ate"], s["bias"], s["emp_sd"], s["mse"], s["median_se"],
            s["coverage"], re, math.sqrt(re) if re == re else math.nan, s["ci_width"],
        ))
    if keep_results:
        return summaries, per_cfg
    return summaries


def oracle_prefix(
    rescaled_costs: NDArray[np.float64], initial_budget: float, T: int,
    oracle_set: Sequence[int] = ORACLE_SET,
) -> list[tuple[int, ...]]:
    """Per-round selections of the policy that knows ``theta* = 1[j in oracle]``.

    It fills each round's paced allowance with oracle arms in index order,
    under the same feasibility rule as the sampler.
    """
    remaining = initial_budget
    picks = []
    for t in range(T):
        allowance = remaining / (T - t)
        chosen, spend = [], 0.0
        for j in oracle_set:
            if spend + rescaled_costs[j] <= allowance + bd.BUDGET_TOL:
                chosen.append(int(j))
                spend += rescaled_costs[j]
        remaining = max(remaining - spend, 0.0)
        picks.append(tuple(chosen))
    return picks


def regret_curve(
    result: ReplicationResult, oracle_set: Sequence[int] = ORACLE_SET
) -> NDArray[np.float64]:
    """Cumulative oracle-set regret ``sum_s [r*(S*_s) - r*(S_s)]`` per batch."""
    T = len(result.records)
    best = oracle_prefix(result.rescaled_costs, result.initial_budget, T, oracle_set)
    oset = set(oracle_set)
    gaps = [
        len(set(b) & oset) - len(set(rec.selected) & oset)
        for b, rec in zip(best, result.records)
    ]
    return np.cumsum(np.asarray(gaps, dtype=float))


def regret_curves(results: Sequence[ReplicationResult], oracle_set=ORACLE_SET) -> NDArray:
    """Stacked regret curves, one row per replication."""
    return np.vstack([regret_curve(r, oracle_set) for r in results])
