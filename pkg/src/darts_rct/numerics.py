"""Dense linear-algebra kernels: SVD pseudoinverse, OLS, HC2 and pooled covariance.

Everything here is a pure function of its array arguments, so replications
running in separate processes can call into it freely.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from darts_rct.errors import InvalidInputError

PINV_RTOL = 1e-12
LEVERAGE_CAP = 1e-10


class NumericsWarning(UserWarning):
    """Degenerate input handled by a documented fallback."""


def as_matrix(m: ArrayLike, name: str = "matrix") -> NDArray[np.float64]:
    """Coerce to a finite 2-D float array, raising on NaN/inf."""
    a = np.asarray(m, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return a


def _truncated_svd(a: NDArray[np.float64], rtol: float):
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        r = 0
    else:
        r = int(np.sum(s > rtol * s[0]))
    return u[:, :r], s[:r], vt[:r]


def pseudoinverse(m: ArrayLike, tol: float = PINV_RTOL) -> NDArray[np.float64]:
    """Moore-Penrose pseudoinverse via the SVD.

    Singular values at or below ``tol * s_max`` are treated as exact zeros.

    Parameters
    ----------
    m : array_like, shape (r, c)
    tol : float
        Relative cutoff on singular values.

    Returns
    -------
    ndarray, shape (c, r)
    """
    a = as_matrix(m, "m")
    if a.size == 0:
        return np.zeros((a.shape[1], a.shape[0]))
    u, s, vt = _truncated_svd(a, tol)
    return (vt.T / s) @ u.T


@dataclass(frozen=True)
class OlsFit:
    coefficients: NDArray[np.float64]
    residuals: NDArray[np.float64]
    leverages: NDArray[np.float64]
    gram_inverse: NDArray[np.float64]
    rank: int

    @property
    def rank_deficient(self) -> bool:
        return self.rank < self.coefficients.size


def ols_fit(design: ArrayLike, response: ArrayLike, tol: float = PINV_RTOL) -> OlsFit:
    """Least squares with minimum-norm coefficients on rank-deficient designs.

    Uses the thin SVD ``X = U S V'`` so that ``(X'X)^+ = V S^-2 V'`` and the
    hat-matrix diagonal is the row norm of ``U`` restricted to the numerical rank.
    """
    x = as_matrix(design, "design")
    y = np.asarray(response, dtype=float).ravel()
    if x.shape[0] != y.size:
        raise InvalidInputError(
            f"design has {x.shape[0]} rows but response has {y.size} entries"
        )
    if y.size < 1:
        raise InvalidInputError("need at least one observation")
    if not np.all(np.isfinite(y)):
        raise InvalidInputError("response contains non-finite entries")
    u, s, vt = _truncated_svd(x, tol)
    coef = vt.T @ ((u.T @ y) / s)
    resid = y - x @ coef
    lev = np.einsum("ij,ij->i", u, u)
    gram_inv = (vt.T / s**2) @ vt
    return OlsFit(coef, resid, lev, gram_inv, int(s.size))


class Hc2Variance(NamedTuple):
    variance: float
    leverage_capped: bool


def hc2_covariance(fit: OlsFit, design: ArrayLike) -> tuple[NDArray[np.float64], bool]:
    """Full HC2 sandwich ``(X'X)^+ X' diag(e^2/(1-h)) X (X'X)^+``.

    Observations with leverage within 1e-10 of one get weight ``e^2 / 1e-10``;
    the returned flag reports whether that cap fired.
    """
    x = as_matrix(design, "design")
    one_minus_h = 1.0 - fit.leverages
    capped = bool(np.any(one_minus_h <= LEVERAGE_CAP))
    w = fit.residuals**2 / np.maximum(one_minus_h, LEVERAGE_CAP)
    # bread @ X' is (k, n); the meat collapses to a weighted outer product
    bx = fit.gram_inverse @ x.T
    cov = (bx * w) @ bx.T
    return cov, capped


def hc2_variance(fit: OlsFit, design: ArrayLike, coef_index: int) -> Hc2Variance:
    """HC2 variance of a single coefficient, plus the leverage-cap flag."""
    if not 0 <= coef_index < fit.coefficients.size:
        raise InvalidInputError(
            f"coef_index {coef_index} out of range for {fit.coefficients.size} coefficients"
        )
    x = as_matrix(design, "design")
    one_minus_h = 1.0 - fit.leverages
    capped = bool(np.any(one_minus_h <= LEVERAGE_CAP))
    w = fit.residuals**2 / np.maximum(one_minus_h, LEVERAGE_CAP)
    row = fit.gram_inverse[coef_index] @ x.T
    return Hc2Variance(float(np.sum(w * row**2)), capped)


def _sample_cov(x: NDArray[np.float64]) -> NDArray[np.float64]:
    n = x.shape[0]
    if n < 2:
        return np.zeros((x.shape[1], x.shape[1]))
    xc = x - x.mean(axis=0)
    return xc.T @ xc / (n - 1)


def pooled_covariance(x: ArrayLike, assignment: ArrayLike) -> NDArray[np.float64]:
    """Within-group pooled sample covariance for a two-arm split.

    When either arm has fewer than two units the whole-sample covariance is
    returned instead and a :class:`NumericsWarning` is emitted.
    """
    a = as_matrix(x, "x")
    z = np.asarray(assignment).astype(bool).ravel()
    if z.size != a.shape[0]:
        raise InvalidInputError("assignment length does not match rows of x")
    n1 = int(z.sum())
    n0 = z.size - n1
    if n1 == 0 or n0 == 0:
        raise InvalidInputError("both groups must be non-empty")
    if n1 < 2 or n0 < 2:
        warnings.warn(
            "a group has fewer than 2 units; using whole-sample covariance",
            NumericsWarning,
            stacklevel=2,
        )
        return _sample_cov(a)
    s1 = _sample_cov(a[z])
    s0 = _sample_cov(a[~z])
    pooled = ((n1 - 1) * s1 + (n0 - 1) * s0) / (n1 + n0 - 2)
    return 0.5 * (pooled + pooled.T)


def sample_covariance(x: ArrayLike) -> NDArray[np.float64]:
    """Whole-sample covariance with the ``n - 1`` divisor (columns are variables)."""
    return _sample_cov(as_matrix(x, "x"))
