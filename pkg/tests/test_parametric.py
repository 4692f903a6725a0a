import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from drate.data import ObservationSet
from drate.errors import (
    DegenerateTargetError,
    EmptyArmError,
    PerturbationRangeError,
    RankDeficiencyError,
    SeparationError,
)
from drate.parametric import (
    LogisticFit,
    MisspecMode,
    MisspecSpec,
    apply_local_misspec,
    fit_linear,
    fit_logistic,
    predict_propensity_param,
    score_sup_norm,
)


def obs_1d(x, d):
    x = np.asarray(x, dtype=float)
    # validation requires p >= 2 only at load time; fitting accepts any design
    return ObservationSet(x.reshape(-1, 1), np.asarray(d, dtype=float), np.zeros(len(d)))


def loglik_1d(beta, x, d):
    eta = beta * x
    return float(np.sum(d * eta) - np.sum(np.logaddexp(0.0, eta)))


class TestLogistic:
    def test_degenerate_target(self):
        with pytest.raises(DegenerateTargetError):
            fit_logistic(obs_1d([1.0, 2.0, 3.0], [1, 1, 1]))

    def test_mle_matches_grid_search_oracle(self):
        # independent oracle: bounded 1-d maximization of the log-likelihood
        rng = np.random.default_rng(42)
        x = rng.standard_normal(50)
        p = 1.0 / (1.0 + np.exp(-1.3 * x))
        d = (rng.random(50) < p).astype(float)
        fit = fit_logistic(obs_1d(x, d))
        res = minimize_scalar(
            lambda b: -loglik_1d(b, x, d), bounds=(-20.0, 20.0), method="bounded",
            options={"xatol": 1e-10},
        )
        assert fit.converged
        assert abs(fit.beta_hat[0] - res.x) < 1e-4

    def test_separation_detected(self):
        x = np.array([-3.0, -2.0, -1.0, 1.0, 2.0, 3.0])
        d = (x > 0).astype(float)
        with pytest.raises(SeparationError):
            fit_logistic(obs_1d(x, d))

    def test_rank_deficient_design(self):
        rng = np.random.default_rng(0)
        col = rng.standard_normal(30)
        x = np.column_stack([col, 2.0 * col])
        d = (rng.random(30) < 0.5).astype(float)
        d[0], d[1] = 0.0, 1.0
        with pytest.raises(RankDeficiencyError):
            fit_logistic(ObservationSet(x, d, np.zeros(30)))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_score_stationarity(self, seed):
        rng = np.random.default_rng(seed)
        n = 80
        x = np.column_stack([np.ones(n), rng.standard_normal((n, 2))])
        eta = x @ np.array([0.3, -0.8, 0.5])
        d = (rng.random(n) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
        if d.min() == d.max():
            return
        obs = ObservationSet(x, d, np.zeros(n))
        try:
            fit = fit_logistic(obs)
        except SeparationError:
            return
        if fit.converged:
            assert score_sup_norm(obs, fit) < 1e-8

    def test_information_symmetric_psd(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((60, 3))
        d = (rng.random(60) < 0.5).astype(float)
        fit = fit_logistic(ObservationSet(x, d, np.zeros(60)))
        info = fit.information
        np.testing.assert_allclose(info, info.T, atol=1e-12)
        assert np.all(np.linalg.eigvalsh(info) > -1e-10)


class TestPredict:
    def fit_with_beta(self, beta):
        return LogisticFit(
            beta_hat=np.asarray(beta, dtype=float),
            information=np.eye(len(beta)),
            converged=True,
            iterations=1,
            log_likelihood=0.0,
        )

    def test_zero_index_gives_half(self):
        fit = self.fit_with_beta([1.0, -1.0])
        assert predict_propensity_param(fit, np.array([2.0, 2.0])) == 0.5

    def test_saturation_is_finite(self):
        # float64 has no value in (1 - 1e-20, 1): saturation to exactly 1.0 is
        # the honest outcome, and it must be finite with no overflow
        fit = self.fit_with_beta([50.0])
        v = float(predict_propensity_param(fit, np.array([1.0])))
        assert v >= 1.0 - 1e-20 and np.isfinite(v)
        big = float(predict_propensity_param(fit, np.array([200.0])))  # index 1e4
        assert np.isfinite(big)
        low = float(predict_propensity_param(fit, np.array([-200.0])))
        assert np.isfinite(low) and low >= 0.0

    def test_log3_gives_three_quarters(self):
        fit = self.fit_with_beta([np.log(3.0)])
        assert abs(float(predict_propensity_param(fit, np.array([1.0]))) - 0.75) < 1e-15


class TestLinear:
    def test_exact_interpolation(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((20, 3))
        gamma = np.array([1.0, -2.0, 0.5])
        d = np.ones(20)
        d[:5] = 0.0
        obs = ObservationSet(x, d, x @ gamma)
        fit = fit_linear(obs, "treated")
        np.testing.assert_allclose(fit.gamma_hat, gamma, atol=1e-10)
        assert fit.sigma2_hat < 1e-20
        assert fit.n_arm == 15

    def test_two_point_slope(self):
        obs = ObservationSet(
            np.array([[1.0], [2.0]]), np.array([1.0, 1.0]), np.array([2.0, 4.0])
        )
        fit = fit_linear(obs, "treated")
        assert abs(fit.gamma_hat[0] - 2.0) < 1e-12

    def test_residual_orthogonality(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((40, 3))
        d = (rng.random(40) < 0.6).astype(float)
        y = x @ np.array([1.0, 2.0, 3.0]) + rng.standard_normal(40)
        obs = ObservationSet(x, d, y)
        fit = fit_linear(obs, "control")
        mask = obs.treatments == 0.0
        resid = y[mask] - x[mask] @ fit.gamma_hat
        assert np.max(np.abs(x[mask].T @ resid)) < 1e-8

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        n = 30
        x = rng.standard_normal((n, 2))
        d = np.zeros(n)
        d[: n // 2] = 1.0
        y = x @ np.array([0.5, -1.0]) + rng.standard_normal(n)
        obs = ObservationSet(x, d, y)
        perm = rng.permutation(n)
        obs_p = ObservationSet(x[perm], d[perm], y[perm])
        f1 = fit_linear(obs, "treated")
        f2 = fit_linear(obs_p, "treated")
        np.testing.assert_allclose(f1.gamma_hat, f2.gamma_hat, atol=1e-8)

    def test_empty_arm(self):
        obs = ObservationSet(np.ones((3, 2)), np.ones(3), np.zeros(3))
        with pytest.raises(EmptyArmError):
            fit_linear(obs, "control")

    def test_arm_smaller_than_p(self):
        obs = ObservationSet(np.random.default_rng(1).standard_normal((4, 3)),
                             np.array([1.0, 0, 0, 0]), np.zeros(4))
        with pytest.raises(EmptyArmError, match="fewer than p"):
            fit_linear(obs, "treated")

    def test_sigma2_divisor_is_n_arm(self):
        x = np.array([[1.0], [1.0], [1.0]])
        y = np.array([0.0, 3.0, 0.0])
        obs = ObservationSet(x, np.ones(3), y)
        fit = fit_linear(obs, "treated")
        # gamma = mean(y) = 1, RSS = 1 + 4 + 1 = 6, divisor n_arm = 3
        assert abs(fit.sigma2_hat - 2.0) < 1e-12


class TestLocalMisspec:
    def grid(self):
        rng = np.random.default_rng(11)
        return rng.standard_normal((200, 3))

    def test_zero_delta_is_identity(self):
        truth = lambda x: 1.0 / (1.0 + np.exp(-x[:, 0]))
        f = apply_local_misspec(truth, MisspecSpec(MisspecMode.LOCAL_PS, delta=0.0))
        x = self.grid()
        np.testing.assert_array_equal(f(x), truth(x))

    def test_or_sin_vanishes_at_zero(self):
        truth = lambda x: x[:, 0] * 2.0
        f = apply_local_misspec(
            truth, MisspecSpec(MisspecMode.LOCAL_OR, delta=0.1, shape="sin_x1")
        )
        x = np.zeros((1, 3))
        assert f(x)[0] == truth(x)[0]

    def test_ps_leaving_unit_interval_errors(self):
        truth = lambda x: np.full(x.shape[0], 0.8)
        spec = MisspecSpec(MisspecMode.LOCAL_PS, delta=0.5, shape="x1_squared")
        f = apply_local_misspec(truth, spec)
        x = np.ones((1, 3))  # 0.8 * (1 + 0.5) = 1.2
        with pytest.raises(PerturbationRangeError):
            f(x)

    def test_unknown_shape_rejected(self):
        with pytest.raises(ValueError, match="unknown perturbation shape"):
            MisspecSpec(MisspecMode.LOCAL_PS, delta=0.1, shape="bogus")

    def test_delta_proportionality(self):
        # sup-distance to the truth on a fixed grid scales like delta
        truth = lambda x: 1.0 / (1.0 + np.exp(-0.5 * x[:, 0]))
        x = self.grid()
        base = truth(x)
        deltas = [0.2, 0.1, 0.05, 0.025]
        sups = []
        for delta in deltas:
            f = apply_local_misspec(truth, MisspecSpec(MisspecMode.LOCAL_PS, delta=delta))
            sups.append(np.max(np.abs(f(x) - base)))
        for i in range(len(deltas) - 1):
            ratio = sups[i] / sups[i + 1]
            assert abs(ratio - 2.0) < 0.4  # within 20% of the delta ratio

    def test_requires_local_mode(self):
        with pytest.raises(ValueError, match="local mode"):
            apply_local_misspec(lambda x: x[:, 0], MisspecSpec(MisspecMode.NONE))
