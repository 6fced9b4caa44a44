from collections import Counter
from itertools import combinations

import numpy as np
import pytest
from scipy.stats import chisquare

from darts_rct.design import (
    as_assignment,
    complete_randomization,
    draw_balanced,
    mahalanobis_distance,
    rerandomize,
)
from darts_rct.errors import InvalidInputError
from darts_rct.numerics import pseudoinverse, sample_covariance


def test_balanced_means_zero_distance():
    x = np.array([[1.0], [2.0], [2.0], [1.0]])
    assert mahalanobis_distance(x, [1, 1, 0, 0], [[1.0]]) == 0.0


def test_scalar_distance():
    # treated mean 2, control mean 0, Sigma = 4
    x = np.array([2.0, 2.0, 0.0, 0.0])
    assert mahalanobis_distance(x, [1, 1, 0, 0], [[0.25]]) == pytest.approx(1.0)


def test_label_symmetry():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((10, 3))
    s = pseudoinverse(sample_covariance(x))
    z = draw_balanced(10, 1, rng)[0]
    assert mahalanobis_distance(x, z, s) == pytest.approx(mahalanobis_distance(x, 1 - z, s))


def test_zero_columns_uniform_assignment():
    z, d = rerandomize(np.zeros((6, 0)), 10, np.random.default_rng(1), return_distance=True)
    assert d == 0.0
    assert z.sum() == 3


def test_brute_force_n4():
    x = np.array([0.0, 0.0, 1.0, 1.0])
    best = {
        frozenset(c) for c in combinations(range(4), 2)
        if x[list(c)].mean() == x[[i for i in range(4) if i not in c]].mean()
    }
    assert best == {frozenset({0, 2}), frozenset({0, 3}), frozenset({1, 2}), frozenset({1, 3})}
    for seed in range(20):
        z, d = rerandomize(x, 200, np.random.default_rng(seed), return_distance=True)
        assert d == 0.0
        assert frozenset(np.flatnonzero(z)) in best


def test_marginal_probability_half():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((8, 2))
    zs = np.array([rerandomize(x, 50, rng) for _ in range(10_000)])
    assert np.all(np.abs(zs.mean(axis=0) - 0.5) < 0.02)


def test_mirror_symmetry():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((6, 1))
    counts = Counter(tuple(rerandomize(x, 5, rng)) for _ in range(6000))
    pairs = []
    for z, c in counts.items():
        mirror = tuple(1 - np.array(z))
        if z < mirror:
            pairs.append((c, counts.get(mirror, 0)))
    obs = np.array(pairs, dtype=float)
    # within each pair both members are equally likely
    stat = chisquare(obs.ravel(), np.repeat(obs.sum(axis=1) / 2, 2), ddof=len(pairs) - 1)
    assert stat.pvalue > 0.001


def test_rerandomization_reduces_imbalance():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((100, 5))
    s = pseudoinverse(sample_covariance(x))
    rr = [rerandomize(x, 100, rng, return_distance=True)[1] for _ in range(1000)]
    cr = [mahalanobis_distance(x, complete_randomization(100, rng), s) for _ in range(1000)]
    assert np.median(rr) < np.median(cr)


def test_rerandomization_never_hurts_dim():
    rng = np.random.default_rng(5)
    n = 50
    x = rng.standard_normal((n, 3))
    y0 = x @ [1.0, -1.0, 0.5] + rng.standard_normal(n)
    y1 = y0 + 2.0

    def dim(z):
        return y1[z == 1].mean() - y0[z == 0].mean()

    rr = [dim(rerandomize(x, 100, rng)) for _ in range(1000)]
    cr = [dim(complete_randomization(n, rng)) for _ in range(1000)]
    assert np.std(rr) <= 1.02 * np.std(cr)


def test_complete_randomization():
    rng = np.random.default_rng(6)
    draws = [tuple(complete_randomization(2, rng)) for _ in range(4000)]
    c = Counter(draws)
    assert set(c) == {(1, 0), (0, 1)}
    assert abs(c[(1, 0)] / 4000 - 0.5) < 0.03
    assert all(complete_randomization(10, rng).sum() == 5 for _ in range(50))
    a = complete_randomization(40, np.random.default_rng(1))
    b = complete_randomization(40, np.random.default_rng(2))
    assert not np.array_equal(a, b)


def test_draw_balanced_rows():
    c = draw_balanced(10, 500, np.random.default_rng(7))
    assert c.shape == (500, 10)
    assert np.all(c.sum(axis=1) == 5)
    assert np.all(np.abs(c.mean(axis=0) - 0.5) < 0.1)


def test_deterministic():
    x = np.random.default_rng(0).standard_normal((20, 2))
    a = rerandomize(x, 100, np.random.default_rng(9))
    b = rerandomize(x, 100, np.random.default_rng(9))
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("n", [0, 3, 7])
def test_odd_batch_rejected(n):
    with pytest.raises(InvalidInputError):
        complete_randomization(n, np.random.default_rng(0))


def test_as_assignment_checks():
    assert as_assignment([1, 0]).dtype == np.int8
    with pytest.raises(InvalidInputError):
        as_assignment([1, 1, 0])
    with pytest.raises(InvalidInputError):
        as_assignment([2, 0])
