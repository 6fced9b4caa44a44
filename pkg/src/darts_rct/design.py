"""Balanced treatment assignment: complete randomization and rerandomization.

Rerandomization draws candidate half-half splits, keeps the one with the
smallest Mahalanobis imbalance and then flips a fair coin between it and
its mirror image, so every unit is treated with probability exactly 1/2.
"""

from __future__ import annotations

import numpy as np
from numpy.typing import ArrayLike, NDArray

from darts_rct.errors import InvalidInputError
from darts_rct.numerics import as_matrix, pseudoinverse, sample_covariance


def _check_even(n: int) -> None:
    if n < 2 or n % 2:
        raise InvalidInputError(f"batch size must be a positive even number, got {n}")


def as_assignment(z: ArrayLike) -> NDArray[np.int8]:
    a = np.asarray(z)
    if a.ndim != 1 or not np.all((a == 0) | (a == 1)):
        raise InvalidInputError("assignment must be a 0/1 vector")
    if 2 * int(a.sum()) != a.size:
        raise InvalidInputError("assignment must treat exactly half the units")
    return a.astype(np.int8)


def mahalanobis_distance(
    x: ArrayLike, z: ArrayLike, sigma_pinv: ArrayLike
) -> float:
    """Quadratic form of the treated-minus-control covariate mean gap."""
    xm = as_matrix(x, "x")
    zz = np.asarray(z).astype(bool)
    if xm.shape[1] == 0:
        return 0.0
    gap = xm[zz].mean(axis=0) - xm[~zz].mean(axis=0)
    s = np.asarray(sigma_pinv, dtype=float).reshape(xm.shape[1], xm.shape[1])
    return float(max(gap @ s @ gap, 0.0))


def draw_balanced(n: int, size: int, rng: np.random.Generator) -> NDArray[np.int8]:
    """``size`` independent uniform half-half assignments, one per row."""
    _check_even(n)
    keys = rng.random((size, n))
    ranks = keys.argsort(axis=1).argsort(axis=1)
    return (ranks < n // 2).astype(np.int8)


def candidate_distances(
    x: NDArray[np.float64], candidates: NDArray[np.int8], sigma_pinv: NDArray[np.float64]
) -> NDArray[np.float64]:
    """Mahalanobis imbalance of every candidate row, vectorised."""
    if x.shape[1] == 0:
        return np.zeros(candidates.shape[0])
    n = x.shape[0]
    half = n // 2
    treated_sum = candidates @ x
    gaps = treated_sum / half - (x.sum(axis=0) - treated_sum) / (n - half)
    d = np.einsum("ij,jk,ik->i", gaps, sigma_pinv, gaps)
    return np.maximum(d, 0.0)


def rerandomize(
    x: ArrayLike,
    n_candidates: int,
    rng: np.random.Generator,
    return_distance: bool = False,
):
    """Minimum-imbalance assignment among ``n_candidates`` draws, mirror-flipped.

    The covariance in the imbalance metric is the whole-batch sample
    covariance (pseudo-inverted), computed once so that every candidate is
    scored by the same quadratic form.  Ties keep the earliest candidate.

    Returns
    -------
    z : ndarray of int8
        The accepted assignment.
    distance : float
        Only when ``return_distance``; imbalance of the accepted assignment
        (identical for ``z`` and its mirror).
    """
    xm = as_matrix(x, "x")
    n = xm.shape[0]
    _check_even(n)
    if n_candidates < 1:
        raise InvalidInputError("n_candidates must be >= 1")
    cands = draw_balanced(n, n_candidates, rng)
    sinv = pseudoinverse(sample_covariance(xm)) if xm.shape[1] else np.zeros((0, 0))
    d = candidate_distances(xm, cands, sinv)
    best = int(np.argmin(d))
    z = cands[best]
    if rng.random() < 0.5:
        z = 1 - z
    z = z.astype(np.int8)
    if return_distance:
        return z, float(d[best])
    return z


def complete_randomization(n: int, rng: np.random.Generator) -> NDArray[np.int8]:
    """Uniform draw over all assignments treating exactly ``n / 2`` units."""
    _check_even(n)
    z = np.zeros(n, dtype=np.int8)
    z[rng.permutation(n)[: n // 2]] = 1
    return z
