"""LASSO-derived rewards for the covariate bandit.

The sampler learns from control units only: after a batch is assigned, the
control outcomes are regressed on the measured covariates with a
cross-validated LASSO and each covariate's absolute coefficient, normalised
by the largest one, becomes its reward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from numpy.typing import ArrayLike, NDArray

from darts_rct.bandit import SuperArm
from darts_rct.errors import InvalidInputError
from darts_rct.numerics import as_matrix

N_LAMBDA = 100
LAMBDA_MIN_RATIO = 1e-4
CD_TOL = 1e-9
CD_MAX_SWEEPS = 100_000


@dataclass(frozen=True)
class LassoFit:
    coefficients: NDArray[np.float64]
    penalty: float
    selected_any: bool
    intercept: float = 0.0


@numba.njit(cache=True)
def _cd_sweep(gram, b, g, lam, active_only):
    biggest = 0.0
    for j in range(b.shape[0]):
        gjj = gram[j, j]
        if gjj <= 0.0 or (active_only and b[j] == 0.0):
            continue
        old = b[j]
        zj = g[j] + gjj * old
        if zj > lam:
            new = (zj - lam) / gjj
        elif zj < -lam:
            new = (zj + lam) / gjj
        else:
            new = 0.0
        if new != old:
            delta = new - old
            b[j] = new
            for i in range(b.shape[0]):
                g[i] -= gram[i, j] * delta
            step = abs(delta) * np.sqrt(gjj)
            if step > biggest:
                biggest = step
    return biggest


@numba.njit(cache=True)
def _chol_solve(a, rhs):
    """Cholesky solve; ``ok`` is False when a pivot vanishes (singular ``a``)."""
    m = a.shape[0]
    low = np.zeros((m, m))
    scale = 0.0
    for i in range(m):
        scale = max(scale, a[i, i])
    for j in range(m):
        s = a[j, j]
        for k in range(j):
            s -= low[j, k] * low[j, k]
        if s <= 1e-12 * scale:
            return rhs, False
        low[j, j] = np.sqrt(s)
        for i in range(j + 1, m):
            s = a[i, j]
            for k in range(j):
                s -= low[i, k] * low[j, k]
            low[i, j] = s / low[j, j]
    y = np.empty(m)
    for i in range(m):
        s = rhs[i]
        for k in range(i):
            s -= low[i, k] * y[k]
        y[i] = s / low[i, i]
    x = np.empty(m)
    for i in range(m - 1, -1, -1):
        s = y[i]
        for k in range(i + 1, m):
            s -= low[k, i] * x[k]
        x[i] = s / low[i, i]
    return x, True


@numba.njit(cache=True)
def _polish(gram, xty, b, g, lam):
    """Exact solve on the current active set and signs; keeps it only if the
    active Gram block is non-singular and the result satisfies the KKT
    conditions."""
    p = b.shape[0]
    m = 0
    for j in range(p):
        if b[j] != 0.0:
            m += 1
    if m == 0:
        return False
    idx = np.empty(m, dtype=np.int64)
    k = 0
    for j in range(p):
        if b[j] != 0.0:
            idx[k] = j
            k += 1
    gaa = np.empty((m, m))
    rhs = np.empty(m)
    for a in range(m):
        ja = idx[a]
        rhs[a] = xty[ja] - lam * np.sign(b[ja])
        for c in range(m):
            gaa[a, c] = gram[ja, idx[c]]
    sol, ok = _chol_solve(gaa, rhs)
    if not ok:
        return False
    for a in range(m):
        if np.sign(sol[a]) != np.sign(b[idx[a]]):
            return False
    trial = np.zeros(p)
    for a in range(m):
        trial[idx[a]] = sol[a]
    grad = xty - gram @ trial
    slack = lam * (1.0 + 1e-9) + 1e-14
    for j in range(p):
        if trial[j] == 0.0 and abs(grad[j]) > slack:
            return False
    b[:] = trial
    g[:] = grad
    return True


@numba.njit(cache=True)
def _cd_path(gram, xty, lambdas, tol, max_sweeps):
    """Covariance-update coordinate descent along a decreasing penalty path.

    Minimises ``b'Gb/2 - b'c + lam * |b|_1`` for each ``lam``, warm-starting
    from the previous solution.  ``g = c - G b`` is kept up to date so each
    coordinate step costs O(p).  Full sweeps alternate with sweeps over the
    current active set; once the iterate has settled to ``sqrt(tol)`` the
    active set is solved exactly, falling back to plain sweeps down to
    ``tol`` if that solve breaks the optimality conditions.
    """
    p = xty.shape[0]
    path = np.zeros((lambdas.shape[0], p))
    b = np.zeros(p)
    g = xty.copy()
    sweeps = 0
    coarse = np.sqrt(tol)
    for k in range(lambdas.shape[0]):
        lam = lambdas[k]
        target = coarse
        while sweeps < max_sweeps:
            sweeps += 1
            moved = _cd_sweep(gram, b, g, lam, False)
            if moved < target:
                if target == tol:
                    break
                if _polish(gram, xty, b, g, lam) or moved == 0.0:
                    break
                target = tol
                continue
            while sweeps < max_sweeps:
                sweeps += 1
                if _cd_sweep(gram, b, g, lam, True) < target:
                    break
        path[k] = b
    return path


def _standardize(x: NDArray[np.float64], y: NDArray[np.float64]):
    mean = x.mean(axis=0)
    sd = x.std(axis=0)
    keep = sd > 1e-12 * np.maximum(1.0, np.abs(mean))
    scale = np.where(keep, sd, 1.0)
    xs = (x - mean) / scale
    xs[:, ~keep] = 0.0
    ybar = y.mean()
    return xs, y - ybar, mean, scale, keep, ybar


def _moments(xs: NDArray[np.float64], yc: NDArray[np.float64]):
    n = xs.shape[0]
    return xs.T @ xs / n, xs.T @ yc / n


def lambda_max(x: ArrayLike, y: ArrayLike) -> float:
    """Smallest penalty at which every standardized coefficient is zero."""
    xm = as_matrix(x, "x")
    yy = np.asarray(y, dtype=float).ravel()
    xs, yc, *_ = _standardize(xm, yy)
    if xs.shape[1] == 0:
        return 0.0
    return float(np.max(np.abs(xs.T @ yc)) / xm.shape[0])


def penalty_path(lam_max: float, n_lambda: int = N_LAMBDA, ratio: float = LAMBDA_MIN_RATIO):
    return np.geomspace(lam_max, lam_max * ratio, n_lambda)


def lasso_path(x: ArrayLike, y: ArrayLike, lambdas: ArrayLike) -> NDArray[np.float64]:
    """Coefficient path on the original column scale, one row per penalty.

    Columns are standardized to unit (population) standard deviation for
    fitting; constant columns are left at zero.
    """
    xm = as_matrix(x, "x")
    yy = np.asarray(y, dtype=float).ravel()
    if xm.shape[0] != yy.size:
        raise InvalidInputError("x rows and y length differ")
    lam = np.asarray(lambdas, dtype=float).ravel()
    xs, yc, _, scale, keep, _ = _standardize(xm, yy)
    gram, xty = _moments(xs, yc)
    tol = CD_TOL * max(float(np.sqrt(np.mean(yc**2))), 1e-300)
    path = _cd_path(gram, xty, lam, tol, CD_MAX_SWEEPS)
    path[:, ~keep] = 0.0
    return path / scale


def lasso_fit(x: ArrayLike, y: ArrayLike, penalty: float) -> LassoFit:
    """LASSO at a single penalty (objective ``RSS/(2n) + penalty * |b|_1``
    on standardized columns)."""
    if penalty < 0:
        raise InvalidInputError("penalty must be non-negative")
    xm = as_matrix(x, "x")
    yy = np.asarray(y, dtype=float).ravel()
    coef = lasso_path(xm, yy, [penalty])[0]
    intercept = float(yy.mean() - xm.mean(axis=0) @ coef) if xm.shape[1] else float(yy.mean())
    return LassoFit(coef, float(penalty), bool(np.any(coef != 0)), intercept)


def _fold_indices(n: int, n_folds: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    return np.array_split(perm, n_folds)


def lasso_cv(
    x: ArrayLike,
    y: ArrayLike,
    n_folds: int = 5,
    rng: np.random.Generator | None = None,
    n_lambda: int = N_LAMBDA,
) -> LassoFit:
    """K-fold cross-validated LASSO with the minimum-CV-error penalty.

    The penalty grid is ``n_lambda`` log-spaced values from the null-model
    threshold down to ``1e-4`` of it, computed on the full data and shared by
    every fold.  Folds are contiguous blocks of a permutation drawn from
    ``rng``.  The returned coefficients come from the full-data path at the
    selected penalty, on the original column scale.
    """
    xm = as_matrix(x, "x")
    yy = np.asarray(y, dtype=float).ravel()
    n, p = xm.shape
    if yy.size != n:
        raise InvalidInputError("x rows and y length differ")
    if not 2 <= n_folds <= n:
        raise InvalidInputError(f"need 2 <= n_folds <= n, got n_folds={n_folds}, n={n}")
    if not np.all(np.isfinite(yy)):
        raise InvalidInputError("y contains non-finite entries")
    rng = rng if rng is not None else np.random.default_rng()
    folds = _fold_indices(n, n_folds, rng)
    zeros = np.zeros(p)
    lam_max = lambda_max(xm, yy) if p else 0.0
    if not lam_max > 0:
        return LassoFit(zeros, 0.0, False, float(yy.mean()))
    lambdas = penalty_path(lam_max, n_lambda)

    sse = np.zeros(lambdas.size)
    for held in folds:
        train = np.ones(n, dtype=bool)
        train[held] = False
        xt, yt = xm[train], yy[train]
        coefs = lasso_path(xt, yt, lambdas)
        intercepts = yt.mean() - coefs @ xt.mean(axis=0)
        pred = intercepts[:, None] + coefs @ xm[held].T
        sse += ((pred - yy[held]) ** 2).sum(axis=1)
    best = int(np.argmin(sse))

    full = lasso_path(xm, yy, lambdas[: best + 1])[-1]
    intercept = float(yy.mean() - xm.mean(axis=0) @ full)
    return LassoFit(full, float(lambdas[best]), bool(np.any(full != 0)), intercept)


def _check_fit(fit: LassoFit, chosen: SuperArm) -> NDArray[np.float64]:
    coef = np.asarray(fit.coefficients, dtype=float)
    if coef.size != len(chosen):
        raise InvalidInputError(
            f"fit has {coef.size} coefficients but {len(chosen)} arms were chosen"
        )
    return np.abs(coef)


def fractional_rewards(fit: LassoFit, chosen: SuperArm) -> NDArray[np.float64]:
    """``|coef_j| / max_k |coef_k|`` over the chosen arms; zeros if none selected."""
    mag = _check_fit(fit, chosen)
    top = mag.max() if mag.size else 0.0
    if not top > 0:
        return np.zeros(mag.size)
    r = mag / top
    r[mag == top] = 1.0
    return r


def binary_rewards(fit: LassoFit, chosen: SuperArm) -> NDArray[np.float64]:
    """Support indicator of the fitted coefficients."""
    return (_check_fit(fit, chosen) > 0).astype(float)
