"""Kalman filter and Gramian-check tests."""

import numpy as np
import pytest

from vbam.gaussian import SpdMatrix, cholesky, frobenius_norm
from vbam.kalman import (
    GaussianState,
    StateSpaceModel,
    check_uniform_conditions,
    controllability_gramian,
    kf_predict,
    kf_update,
    observability_gramian,
)


def _state(m, p):
    return GaussianState(np.atleast_1d(np.asarray(m, float)), SpdMatrix(np.atleast_2d(p)))


class TestPredict:
    def test_identity_dynamics_no_noise_is_identity(self):
        model = StateSpaceModel(np.eye(2), np.zeros((2, 2)), np.eye(2))
        state = _state([1.0, -2.0], [[2.0, 0.3], [0.3, 1.0]])
        out = kf_predict(model, state)
        np.testing.assert_array_equal(out.m, state.m)
        np.testing.assert_array_equal(out.P.entries, state.P.entries)

    def test_scalar_hand_evaluation(self):
        # m' = 2 * 1 = 2;  P' = 2 * 1 * 2 + 0.5 = 4.5
        model = StateSpaceModel([[2.0]], [[0.5]], [[1.0]])
        out = kf_predict(model, _state([1.0], [[1.0]]))
        assert out.m[0] == 2.0
        assert out.P.entries[0, 0] == 4.5

    def test_random_walk_process_noise(self):
        model = StateSpaceModel.random_walk(2, 0.001**2)
        p0 = np.array([[2.0, 0.1], [0.1, 1.0]])
        out = kf_predict(model, _state([0.0, 0.0], p0))
        np.testing.assert_allclose(out.P.entries, p0 + 1e-6 * np.eye(2), atol=0)

    def test_dimension_mismatch(self):
        model = StateSpaceModel.random_walk(3, 0.0)
        with pytest.raises(ValueError):
            kf_predict(model, _state([1.0], [[1.0]]))


class TestUpdate:
    def test_zero_innovation_keeps_mean_shrinks_covariance(self):
        model = StateSpaceModel.random_walk(2, 0.0)
        pred = _state([1.0, 2.0], np.eye(2))
        out = kf_update(model, pred, np.array([1.0, 2.0]), SpdMatrix.identity(2))
        np.testing.assert_allclose(out.m, pred.m, atol=1e-14)
        assert np.all(np.linalg.eigvalsh(pred.P.entries - out.P.entries) > -1e-12)
        assert out.P.entries[0, 0] < pred.P.entries[0, 0]

    def test_scalar_conjugate_gaussian(self):
        # S = 1 + 1 = 2, K = 0.5, m = 0 + 0.5 * 2 = 1, P = 1 - 0.25 * 2 = 0.5
        model = StateSpaceModel([[1.0]], [[0.0]], [[1.0]])
        out = kf_update(model, _state([0.0], [[1.0]]), np.array([2.0]), SpdMatrix([[1.0]]))
        np.testing.assert_allclose(out.m, [1.0])
        np.testing.assert_allclose(out.P.entries, [[0.5]])

    def test_uninformative_measurement_keeps_prior(self):
        model = StateSpaceModel.random_walk(2, 0.0)
        pred = _state([1.0, -1.0], np.eye(2))
        out = kf_update(model, pred, np.array([100.0, 100.0]), SpdMatrix(1e12 * np.eye(2)))
        np.testing.assert_allclose(out.m, pred.m, atol=1e-9)
        np.testing.assert_allclose(out.P.entries, pred.P.entries, atol=1e-9)

    def test_joseph_form_equivalent(self):
        rng = np.random.default_rng(5)
        model = StateSpaceModel.random_walk(3, 0.0)
        a = rng.standard_normal((3, 3))
        pred = _state(rng.standard_normal(3), a @ a.T + np.eye(3))
        y = rng.standard_normal(3)
        sigma = SpdMatrix.diagonal([0.5, 1.0, 2.0])
        plain = kf_update(model, pred, y, sigma)
        joseph = kf_update(model, pred, y, sigma, joseph=True)
        np.testing.assert_allclose(plain.m, joseph.m, atol=1e-9)
        np.testing.assert_allclose(plain.P.entries, joseph.P.entries, atol=1e-9)

    def test_never_increases_covariance(self):
        rng = np.random.default_rng(6)
        model = StateSpaceModel.random_walk(3, 0.0)
        for _ in range(25):
            a = rng.standard_normal((3, 3))
            pred = _state(rng.standard_normal(3), a @ a.T + 0.1 * np.eye(3))
            sigma = SpdMatrix(np.diag(np.exp(rng.uniform(-2, 2, 3))))
            out = kf_update(model, pred, rng.standard_normal(3), sigma)
            # P' - P + jitter must be SPD
            cholesky(pred.P.entries - out.P.entries + 1e-12 * np.eye(3))

    def test_batch_equals_recursive_conjugate_posterior(self):
        # With A = I, Q = 0, H = I and fixed noise, n updates equal the
        # closed-form Gaussian posterior for n i.i.d. observations.
        rng = np.random.default_rng(7)
        d, n = 2, 40
        model = StateSpaceModel.random_walk(d, 0.0)
        sigma = np.array([[0.8, 0.2], [0.2, 1.5]])
        p0 = np.array([[2.0, 0.0], [0.0, 0.5]])
        m0 = np.array([1.0, -1.0])
        ys = rng.standard_normal((n, d)) + np.array([0.5, 2.0])

        state = _state(m0, p0)
        for y in ys:
            state = kf_update(model, kf_predict(model, state), y, SpdMatrix(sigma))

        n_prec = np.linalg.inv(p0) + n * np.linalg.inv(sigma)
        p_closed = np.linalg.inv(n_prec)
        m_closed = p_closed @ (
            np.linalg.inv(p0) @ m0 + np.linalg.inv(sigma) @ ys.sum(axis=0)
        )
        np.testing.assert_allclose(state.m, m_closed, atol=1e-8)
        np.testing.assert_allclose(state.P.entries, p_closed, atol=1e-8)

    def test_hundred_step_composition_stays_bounded(self):
        # Bounded measurements + bounded noise keep mean and covariance
        # bounded on the random-walk model.
        rng = np.random.default_rng(8)
        model = StateSpaceModel.random_walk(2, 1e-9)
        state = _state(np.zeros(2), np.eye(2))
        mu1, mu2 = 0.1, 10.0
        for _ in range(100):
            sigma = SpdMatrix(np.diag(rng.uniform(mu1, mu2, 2)))
            y = rng.uniform(-5, 5, 2)
            state = kf_update(model, kf_predict(model, state), y, sigma)
            assert np.linalg.norm(state.m) < 100.0
            assert frobenius_norm(state.P) < 100.0


def _gramian_oracle_obs(model, sigmas, window):
    """Direct summation with explicit matrix powers (independent route)."""
    m0, m_end = window
    ainv = np.linalg.inv(model.A)
    total = np.zeros((model.dim, model.dim))
    for j, k in enumerate(range(m0, m_end + 1)):
        phi = np.linalg.matrix_power(ainv, m_end - k)
        s_inv = np.linalg.inv(sigmas[j].entries if isinstance(sigmas[j], SpdMatrix) else sigmas[j])
        total += phi.T @ model.H.T @ s_inv @ model.H @ phi
    return total


class TestGramians:
    def test_observability_closed_form(self):
        length = 4
        model = StateSpaceModel.random_walk(3, 0.0)
        sigma = SpdMatrix(2.0**2 * np.eye(3))
        gram = observability_gramian(model, [sigma], (0, length))
        np.testing.assert_allclose(gram, (length + 1) / 4.0 * np.eye(3), atol=1e-12)

    def test_unobservable_when_h_zero(self):
        model = StateSpaceModel(np.eye(2), np.eye(2), np.zeros((2, 2)))
        gram = observability_gramian(model, [SpdMatrix.identity(2)], (0, 3))
        np.testing.assert_array_equal(gram, np.zeros((2, 2)))

    def test_alternating_noise_matches_direct_sum(self):
        model = StateSpaceModel.random_walk(2, 0.0)
        sigmas = [SpdMatrix((1.0 if i % 2 == 0 else 2.0) ** 2 * np.eye(2)) for i in range(5)]
        gram = observability_gramian(model, sigmas, (0, 4))
        expected = sum(1.0 / (1.0 if i % 2 == 0 else 2.0) ** 2 for i in range(5))
        np.testing.assert_allclose(gram, expected * np.eye(2), atol=1e-12)
        np.testing.assert_allclose(gram, _gramian_oracle_obs(model, sigmas, (0, 4)), atol=1e-12)

    def test_observability_nontrivial_dynamics_vs_oracle(self):
        rng = np.random.default_rng(9)
        a = np.array([[1.1, 0.2], [0.0, 0.9]])
        model = StateSpaceModel(a, np.zeros((2, 2)), np.array([[1.0, 0.0], [0.5, 1.0]]))
        sigmas = [SpdMatrix(np.diag(rng.uniform(0.5, 2.0, 2))) for _ in range(4)]
        gram = observability_gramian(model, sigmas, (3, 6))
        np.testing.assert_allclose(gram, _gramian_oracle_obs(model, sigmas, (3, 6)), atol=1e-10)

    def test_singular_dynamics_rejected(self):
        model = StateSpaceModel(np.zeros((2, 2)), np.eye(2), np.eye(2))
        with pytest.raises(np.linalg.LinAlgError):
            observability_gramian(model, [SpdMatrix.identity(2)], (0, 1))

    def test_controllability_closed_form(self):
        length = 4
        model = StateSpaceModel.random_walk(3, 0.25)
        gram = controllability_gramian(model, (0, length))
        np.testing.assert_allclose(gram, (length + 1) * 0.25 * np.eye(3), atol=1e-12)

    def test_uncontrollable_when_q_zero(self):
        model = StateSpaceModel(np.eye(2), np.zeros((2, 2)), np.eye(2))
        np.testing.assert_array_equal(controllability_gramian(model, (0, 3)), np.zeros((2, 2)))

    def test_scalar_doubling_dynamics(self):
        # window {k, k+1}: Phi(k+1, k) = 2 contributes 4, Phi(k+1, k+1) = 1
        # contributes 1.
        model = StateSpaceModel([[2.0]], [[1.0]], [[1.0]])
        gram = controllability_gramian(model, (3, 4))
        np.testing.assert_allclose(gram, [[5.0]], atol=0)


class TestUniformConditions:
    def test_random_walk_passes(self):
        model = StateSpaceModel.random_walk(2, 1e-9)
        report = check_uniform_conditions(model, 1e-12, 1e12, window_length=1)
        assert report.passed
        assert report.observability.beta1 > 0
        assert report.controllability.beta1 > 0

    def test_h_zero_fails_with_beta1_zero(self):
        model = StateSpaceModel(np.eye(2), np.eye(2), np.zeros((2, 2)))
        report = check_uniform_conditions(model, 0.1, 10.0)
        assert not report.passed
        assert report.observability.beta1 == 0.0

    def test_q_zero_fails_controllability(self):
        model = StateSpaceModel(np.eye(2), np.zeros((2, 2)), np.eye(2))
        report = check_uniform_conditions(model, 0.1, 10.0)
        assert not report.passed
        assert report.controllability.beta1 == 0.0
        assert report.observability.passed

    def test_probes_stay_within_extreme_bounds(self):
        model = StateSpaceModel.random_walk(2, 1e-3)
        base = check_uniform_conditions(model, 0.5, 2.0, window_length=3)
        probed = check_uniform_conditions(
            model, 0.5, 2.0, window_length=3, beta_probe_count=8,
            rng=np.random.default_rng(3),
        )
        assert probed.observability.beta1 >= base.observability.beta1 - 1e-12
        assert probed.observability.beta2 <= base.observability.beta2 + 1e-12
        assert probed.passed
