"""Batch ATE estimators and inverse-variance pooling across batches."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from numpy.typing import ArrayLike
from scipy.stats import norm

from darts_rct.errors import InvalidInputError
from darts_rct.numerics import as_matrix, hc2_variance, ols_fit


class EstimateWarning(UserWarning):
    pass


class Method(str, Enum):
    DIM = "DiM"
    LIN = "LinAdjusted"


@dataclass(frozen=True)
class BatchEstimate:
    tau_hat: float
    v_hat: float
    method: Method
    df_used: int
    flags: tuple[str, ...] = ()

    @property
    def degenerate(self) -> bool:
        return not self.v_hat > 0


@dataclass(frozen=True)
class CumulativeEstimate:
    mu_hat: float = 0.0
    sigma2_hat: float = math.inf
    batches_pooled: int = 0
    flags: tuple[str, ...] = field(default=())

    @property
    def se(self) -> float:
        return math.sqrt(self.sigma2_hat)


def _split(y: ArrayLike, z: ArrayLike):
    yy = np.asarray(y, dtype=float).ravel()
    zz = np.asarray(z).ravel().astype(bool)
    if yy.size != zz.size:
        raise InvalidInputError("y and z lengths differ")
    if not np.all(np.isfinite(yy)):
        raise InvalidInputError("outcomes must be finite")
    if zz.all() or not zz.any():
        raise InvalidInputError("both arms must be non-empty")
    return yy, zz


def difference_in_means(y: ArrayLike, z: ArrayLike) -> BatchEstimate:
    """Treated minus control mean with the Neyman variance ``s1^2/N1 + s0^2/N0``."""
    yy, zz = _split(y, z)
    y1, y0 = yy[zz], yy[~zz]
    tau = float(y1.mean() - y0.mean())
    v1 = y1.var(ddof=1) / y1.size if y1.size > 1 else 0.0
    v0 = y0.var(ddof=1) / y0.size if y0.size > 1 else 0.0
    v = float(v1 + v0)
    flags = () if v > 0 else ("degenerate",)
    return BatchEstimate(tau, v, Method.DIM, 2, flags)


def lin_design(z: ArrayLike, x: ArrayLike) -> np.ndarray:
    """Columns ``[1, z, xc, z * xc]`` with ``xc`` centred at the batch mean."""
    zz = np.asarray(z, dtype=float).ravel()
    xm = as_matrix(x, "x")
    if xm.shape[0] != zz.size:
        raise InvalidInputError("x rows do not match assignment length")
    xc = xm - xm.mean(axis=0)
    return np.column_stack([np.ones(zz.size), zz, xc, zz[:, None] * xc])


def lin_adjusted(y: ArrayLike, z: ArrayLike, x: ArrayLike) -> BatchEstimate:
    """Lin's interacted regression; the ATE is the coefficient on ``z``.

    Variance is HC2 for that coefficient.  Rank-deficient designs are fitted
    through the pseudoinverse and flagged; ``df_used >= n`` is flagged as
    unstable but still returned.
    """
    yy, zz = _split(y, z)
    design = lin_design(zz, x)
    fit = ols_fit(design, yy)
    hc2 = hc2_variance(fit, design, 1)
    n = yy.size
    df = design.shape[1]
    flags = []
    if fit.rank_deficient:
        flags.append("rank_deficient")
    if df >= n:
        flags.append("unstable")
    if hc2.leverage_capped:
        flags.append("leverage_capped")
    if not hc2.variance > 0:
        flags.append("degenerate")
    return BatchEstimate(float(fit.coefficients[1]), hc2.variance, Method.LIN, df, tuple(flags))


def pool(prev: CumulativeEstimate | None, batch: BatchEstimate) -> CumulativeEstimate:
    """One inverse-variance update of the running estimate.

    The first usable batch initialises ``mu = tau``, ``sigma2 = v``.  Batches
    with non-positive variance are skipped with a warning.
    """
    prev = prev if prev is not None else CumulativeEstimate()
    if not batch.v_hat > 0 or not math.isfinite(batch.v_hat):
        warnings.warn(
            "batch with non-positive variance skipped in pooling",
            EstimateWarning,
            stacklevel=2,
        )
        return CumulativeEstimate(
            prev.mu_hat, prev.sigma2_hat, prev.batches_pooled, prev.flags + ("skipped",)
        )
    if prev.batches_pooled == 0:
        return CumulativeEstimate(batch.tau_hat, batch.v_hat, 1, prev.flags)
    prec = 1.0 / prev.sigma2_hat + 1.0 / batch.v_hat
    s2 = 1.0 / prec
    mu = s2 * (prev.mu_hat / prev.sigma2_hat + batch.tau_hat / batch.v_hat)
    return CumulativeEstimate(mu, s2, prev.batches_pooled + 1, prev.flags)


def wald_interval(c: CumulativeEstimate, level: float = 0.95) -> tuple[float, float]:
    """``mu +/- z_{(1+level)/2} * sigma``."""
    if not 0 < level < 1:
        raise InvalidInputError("level must lie in (0, 1)")
    if c.sigma2_hat == 0:
        warnings.warn("zero pooled variance: point interval", EstimateWarning, stacklevel=2)
    zq = norm.ppf(1 - (1 - level) / 2)
    half = zq * math.sqrt(c.sigma2_hat)
    return c.mu_hat - half, c.mu_hat + half
