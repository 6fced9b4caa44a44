import numpy as np
import pytest

from darts_rct.bandit import SuperArm
from darts_rct.errors import InvalidInputError
from darts_rct.reward import (
    LassoFit,
    binary_rewards,
    fractional_rewards,
    lambda_max,
    lasso_cv,
    lasso_fit,
    lasso_path,
    penalty_path,
)


def orthonormal_design(n, p, rng):
    """Centred columns with ``X'X / n = I`` (already standardized)."""
    a = rng.standard_normal((n, p))
    a -= a.mean(axis=0)
    q, _ = np.linalg.qr(a)
    return q * np.sqrt(n)


def soft(v, lam):
    return np.sign(v) * np.maximum(np.abs(v) - lam, 0.0)


def arms(k):
    return SuperArm(tuple(range(k)), 0.0)


class TestLasso:
    @pytest.mark.parametrize("seed", range(5))
    def test_soft_threshold_on_orthonormal_design(self, seed):
        rng = np.random.default_rng(seed)
        x = orthonormal_design(60, 6, rng)
        y = x @ rng.normal(0, 1, 6) + rng.standard_normal(60)
        for lam in (0.01, 0.3, 0.8):
            fit = lasso_fit(x, y, lam)
            np.testing.assert_allclose(fit.coefficients, soft(x.T @ (y - y.mean()) / 60, lam), atol=1e-6)

    def test_null_threshold(self):
        rng = np.random.default_rng(0)
        x, y = rng.standard_normal((30, 5)), rng.standard_normal(30)
        lm = lambda_max(x, y)
        fit = lasso_fit(x, y, lm)
        assert not fit.selected_any
        np.testing.assert_array_equal(fit.coefficients, 0.0)
        assert lasso_fit(x, y, 0.99 * lm).selected_any

    @pytest.mark.parametrize("seed", range(4))
    def test_kkt(self, seed):
        rng = np.random.default_rng(seed)
        n, p = 80, 30
        x = rng.standard_normal((n, p)) + 0.5 * rng.standard_normal((n, 1))
        y = x[:, :5] @ [3.0, -2.0, 1.0, 0.5, 0.2] + rng.standard_normal(n)
        xs = (x - x.mean(0)) / x.std(0)
        yc = y - y.mean()
        lams = penalty_path(lambda_max(x, y), 25)
        path = lasso_path(x, y, lams) * x.std(0)
        for lam, b in zip(lams, path):
            grad = xs.T @ (yc - xs @ b) / n
            nz = b != 0
            assert np.all(np.abs(grad[~nz]) <= lam + 1e-6)
            np.testing.assert_allclose(grad[nz], lam * np.sign(b[nz]), atol=1e-6)

    def test_constant_column_is_zero(self):
        rng = np.random.default_rng(1)
        x = np.column_stack([rng.standard_normal(40), np.ones(40)])
        y = 2 * x[:, 0] + rng.standard_normal(40)
        fit = lasso_cv(x, y, 5, np.random.default_rng(0))
        assert fit.coefficients[1] == 0.0
        assert fit.coefficients[0] > 1.0

    def test_original_scale(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((500, 2)) * [10.0, 0.1]
        y = 0.3 * x[:, 0] + 20.0 * x[:, 1] + 0.01 * rng.standard_normal(500)
        fit = lasso_cv(x, y, 5, np.random.default_rng(0))
        np.testing.assert_allclose(fit.coefficients, [0.3, 20.0], rtol=1e-2)

    def test_cv_deterministic(self):
        rng = np.random.default_rng(3)
        x, y = rng.standard_normal((60, 8)), rng.standard_normal(60)
        a = lasso_cv(x, y, 5, np.random.default_rng(4))
        b = lasso_cv(x, y, 5, np.random.default_rng(4))
        np.testing.assert_array_equal(a.coefficients, b.coefficients)

    def test_pure_noise_mostly_empty(self):
        empty = 0
        for seed in range(40):
            rng = np.random.default_rng(seed)
            fit = lasso_cv(rng.standard_normal((200, 50)), rng.standard_normal(200), 5,
                           np.random.default_rng(1000 + seed))
            empty += not fit.selected_any
        assert empty > 20

    def test_bad_folds(self):
        with pytest.raises(InvalidInputError):
            lasso_cv(np.ones((4, 2)), np.arange(4.0), 1)


class TestRewards:
    def test_fractional(self):
        r = fractional_rewards(LassoFit(np.array([2.0, -1.0, 0.0]), 0.1, True), arms(3))
        np.testing.assert_allclose(r, [1.0, 0.5, 0.0])

    def test_all_zero(self):
        fit = LassoFit(np.zeros(3), 1.0, False)
        np.testing.assert_array_equal(fractional_rewards(fit, arms(3)), 0.0)
        np.testing.assert_array_equal(binary_rewards(fit, arms(3)), 0.0)

    def test_single_arm(self):
        assert fractional_rewards(LassoFit(np.array([-0.3]), 0.1, True), arms(1))[0] == 1.0

    def test_binary(self):
        fit = LassoFit(np.array([2.0, -1.0, 0.0]), 0.1, True)
        np.testing.assert_array_equal(binary_rewards(fit, arms(3)), [1.0, 1.0, 0.0])
        dense = LassoFit(np.array([0.1, -4.0]), 0.1, True)
        np.testing.assert_array_equal(binary_rewards(dense, arms(2)), [1.0, 1.0])

    def test_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            fractional_rewards(LassoFit(np.ones(2), 0.1, True), arms(3))

    def test_range_and_max(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            c = rng.standard_normal(7) * (rng.random(7) < 0.6)
            r = fractional_rewards(LassoFit(c, 0.1, bool(np.any(c))), arms(7))
            assert np.all((0 <= r) & (r <= 1))
            if np.any(c):
                assert r.max() == 1.0

    def test_signal_beats_noise_on_sparse_linear(self):
        gaps = []
        beta = np.where(np.arange(100) < 10, 2.0, 0.0) - np.where((np.arange(100) >= 10) & (np.arange(100) < 20), 2.0, 0.0)
        for seed in range(25):
            rng = np.random.default_rng(seed)
            x = rng.standard_normal((500, 100))
            y = x @ beta + rng.standard_normal(500)
            r = fractional_rewards(lasso_cv(x, y, 5, np.random.default_rng(seed)), arms(100))
            gaps.append(r[:20].mean() - r[20:].mean())
        assert np.mean(gaps) >= 0.2


def test_more_columns_than_rows():
    # the active Gram block goes singular along the path
    rng = np.random.default_rng(9)
    n, p = 16, 30
    x = rng.standard_normal((n, p))
    y = x[:, 0] * 3 + rng.standard_normal(n)
    lams = penalty_path(lambda_max(x, y), 50)
    path = lasso_path(x, y, lams) * x.std(0)
    xs = (x - x.mean(0)) / x.std(0)
    yc = y - y.mean()
    for lam, b in zip(lams, path):
        grad = xs.T @ (yc - xs @ b) / n
        assert np.all(np.abs(grad) <= lam + 1e-6)
    assert lasso_cv(x, y, 4, np.random.default_rng(0)).coefficients[0] > 0
