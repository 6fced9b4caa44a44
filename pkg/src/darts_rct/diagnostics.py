"""Learning diagnostics over a set of replications.

Three views: how much of each batch's spend goes to the oracle covariates,
how batch rewards track the standard-error gain from adjustment, and how
far the final posteriors separate signal from noise arms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np
from numpy.typing import NDArray

from darts_rct.dgp import N_SIGNAL
from darts_rct.harness import BatchRecord

BURN_IN = 30


class HasTrace(Protocol):
    records: list[BatchRecord]
    posterior: NDArray[np.float64] | None


@dataclass(frozen=True)
class Diagnostics:
    budget_share: NDArray[np.float64]
    """Rows ``(t, median, lo95, hi95)`` of the oracle share of batch spend."""
    reward_se: NDArray[np.float64]
    """Rows ``(replication, t, reward_mean, se_ratio)`` after the burn-in."""
    posterior: NDArray[np.float64]
    """Rows ``(replication, arm, pi, is_signal)``."""
    signal_mean: float
    noise_mean: float

    @property
    def separation(self) -> float:
        return self.signal_mean - self.noise_mean

    @property
    def reward_se_correlation(self) -> float:
        if self.reward_se.shape[0] < 3:
            return math.nan
        return float(np.corrcoef(self.reward_se[:, 2], self.reward_se[:, 3])[0, 1])


def budget_share_band(results: Sequence[HasTrace]) -> NDArray[np.float64]:
    T = max(len(r.records) for r in results)
    share = np.full((len(results), T), np.nan)
    for i, r in enumerate(results):
        for rec in r.records:
            share[i, rec.t - 1] = rec.oracle_share
    out = np.full((T, 4), np.nan)
    out[:, 0] = np.arange(1, T + 1)
    for t in range(T):
        col = share[:, t]
        col = col[~np.isnan(col)]
        if col.size:
            out[t, 1] = np.median(col)
            out[t, 2], out[t, 3] = np.percentile(col, [2.5, 97.5])
    return out


def reward_se_pairs(results: Sequence[HasTrace], burn_in: int = BURN_IN) -> NDArray[np.float64]:
    """Batch mean reward against ``se_DiM / se_method`` on the same batch.

    The DiM standard error is the Neyman one computed on the same realized
    assignment, so the ratio isolates what adjustment on the chosen
    covariates bought.  Batches with no reward (nothing measured) are dropped.
    """
    rows = []
    for i, r in enumerate(results):
        for rec in r.records:
            if rec.t <= burn_in or math.isnan(rec.reward_mean):
                continue
            if not (rec.v_hat > 0 and rec.v_dim > 0):
                continue
            rows.append((i, rec.t, rec.reward_mean, math.sqrt(rec.v_dim / rec.v_hat)))
    return np.asarray(rows, dtype=float).reshape(-1, 4)


def posterior_table(
    results: Sequence[HasTrace], n_signal: int = N_SIGNAL
) -> NDArray[np.float64]:
    rows = []
    for i, r in enumerate(results):
        if r.posterior is None:
            continue
        for j, pi in enumerate(r.posterior):
            rows.append((i, j, float(pi), float(j < n_signal)))
    return np.asarray(rows, dtype=float).reshape(-1, 4)


def diagnostics(
    results: Sequence[HasTrace], burn_in: int = BURN_IN, n_signal: int = N_SIGNAL
) -> Diagnostics:
    if not results:
        raise ValueError("need at least one replication")
    post = posterior_table(results, n_signal)
    if post.size:
        sig = post[post[:, 3] == 1, 2]
        noise = post[post[:, 3] == 0, 2]
        sm = float(sig.mean()) if sig.size else math.nan
        nm = float(noise.mean()) if noise.size else math.nan
    else:
        sm = nm = math.nan
    return Diagnostics(
        budget_share_band(results),
        reward_se_pairs(results, burn_in),
        post,
        sm,
        nm,
    )
