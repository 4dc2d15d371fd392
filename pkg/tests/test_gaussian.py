"""SPD algebra and variate-generation tests."""

import numpy as np
import pytest

from vbam.gaussian import (
    NotPositiveDefinite,
    SpdMatrix,
    cholesky,
    frobenius_norm,
    sample_mvn,
    sample_student_t,
    within_band,
)


class TestCholesky:
    def test_identity(self):
        np.testing.assert_array_equal(cholesky(np.eye(3)), np.eye(3))

    def test_diagonal(self):
        np.testing.assert_allclose(
            cholesky(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), atol=0
        )

    def test_reconstructs_random_spd(self):
        rng = np.random.default_rng(42)
        a = rng.standard_normal((5, 5))
        spd = a @ a.T + np.eye(5)
        chol = cholesky(spd)
        err = np.linalg.norm(chol @ chol.T - spd) / np.linalg.norm(spd)
        assert err < 1e-10

    def test_rejects_indefinite(self):
        with pytest.raises(NotPositiveDefinite):
            cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_spd_property_over_random_matrices(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            d = int(rng.integers(1, 8))
            a = rng.standard_normal((d, d))
            spd = SpdMatrix(a @ a.T + 1e-3 * np.eye(d))
            rel = np.linalg.norm(spd.chol @ spd.chol.T - spd.entries) / max(
                1.0, np.linalg.norm(spd.entries)
            )
            assert rel < 1e-10


class TestSpdMatrix:
    def test_symmetrizes_roundoff(self):
        m = np.array([[2.0, 1.0 + 1e-12], [1.0, 2.0]])
        spd = SpdMatrix(m)
        np.testing.assert_array_equal(spd.entries, spd.entries.T)

    def test_rejects_gross_asymmetry(self):
        with pytest.raises(ValueError):
            SpdMatrix(np.array([[1.0, 0.5], [0.0, 1.0]]))

    def test_rejects_non_square(self):
        with pytest.raises(ValueError):
            SpdMatrix(np.ones((2, 3)))

    def test_chol_cached_and_readonly(self):
        spd = SpdMatrix.identity(3)
        assert spd.chol is spd.chol
        with pytest.raises(ValueError):
            spd.entries[0, 0] = 5.0


class TestSampleMvn:
    def test_forced_zero_noise_returns_mean(self):
        mean = np.array([3.0, -1.0])
        out = sample_mvn(None, mean, SpdMatrix.identity(2), z=np.zeros(2))
        np.testing.assert_array_equal(out, mean)

    def test_sample_covariance_matches_requested(self):
        rng = np.random.default_rng(11)
        cov = SpdMatrix.diagonal([1.0, 4.0])
        draws = np.array([sample_mvn(rng, np.zeros(2), cov) for _ in range(100_000)])
        sample_cov = np.cov(draws.T)
        np.testing.assert_allclose(np.diag(sample_cov), [1.0, 4.0], rtol=0.05)

    def test_scale_multiplies_variance(self):
        rng = np.random.default_rng(12)
        draws = np.array(
            [sample_mvn(rng, np.zeros(2), SpdMatrix.identity(2), scale=4.0) for _ in range(100_000)]
        )
        np.testing.assert_allclose(draws.var(axis=0), [4.0, 4.0], rtol=0.05)

    def test_entrywise_moment_property(self):
        # each sample-covariance entry within 5 standard errors of the truth
        rng = np.random.default_rng(13)
        a = rng.standard_normal((3, 3))
        cov = SpdMatrix(a @ a.T + np.eye(3))
        n = 100_000
        chol = cov.chol
        draws = rng.standard_normal((n, 3)) @ chol.T
        sample_cov = np.cov(draws.T)
        sig = cov.entries
        se = np.sqrt(
            (np.outer(np.diag(sig), np.diag(sig)) + sig**2) / (n - 1)
        )
        assert np.all(np.abs(sample_cov - sig) <= 5 * se)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            sample_mvn(np.random.default_rng(0), np.zeros(3), SpdMatrix.identity(2))
        with pytest.raises(ValueError):
            sample_mvn(None, np.zeros(2), SpdMatrix.identity(2), z=np.zeros(3))


class TestSampleStudentT:
    def test_forced_zero_noise_returns_location(self):
        loc = np.array([1.0, 2.0, 3.0])
        out = sample_student_t(
            np.random.default_rng(0), loc, SpdMatrix.identity(3), dof=5.0, z=np.zeros(3)
        )
        np.testing.assert_array_equal(out, loc)

    def test_large_dof_matches_gaussian_moments(self):
        rng = np.random.default_rng(21)
        n = 100_000
        draws = np.array(
            [
                sample_student_t(rng, np.zeros(2), SpdMatrix.identity(2), dof=1e6)
                for _ in range(n)
            ]
        )
        assert np.all(np.abs(draws.mean(axis=0)) < 0.02)
        np.testing.assert_allclose(draws.var(axis=0), [1.0, 1.0], rtol=0.02)

    def test_dof_five_covariance(self):
        # var = dof / (dof - 2) = 5/3 per axis
        rng = np.random.default_rng(22)
        draws = np.array(
            [
                sample_student_t(rng, np.zeros(2), SpdMatrix.identity(2), dof=5.0)
                for _ in range(100_000)
            ]
        )
        np.testing.assert_allclose(draws.var(axis=0), 5.0 / 3.0, rtol=0.10)

    def test_rejects_bad_dof(self):
        with pytest.raises(ValueError):
            sample_student_t(None, np.zeros(2), SpdMatrix.identity(2), dof=0.0)


class TestFrobeniusNorm:
    def test_zero(self):
        assert frobenius_norm(np.zeros((3, 3))) == 0.0

    def test_identity(self):
        assert frobenius_norm(np.eye(4)) == 2.0

    def test_three_four_five(self):
        assert frobenius_norm(np.array([[3.0, 4.0], [0.0, 0.0]])) == 5.0

    def test_triangle_inequality(self):
        rng = np.random.default_rng(31)
        for _ in range(100):
            a = rng.standard_normal((4, 4))
            b = rng.standard_normal((4, 4))
            assert frobenius_norm(a + b) <= frobenius_norm(a) + frobenius_norm(b) + 1e-12


class TestWithinBand:
    def test_identity_inside(self):
        assert within_band(np.eye(3), 0.5, 2.0)

    def test_small_eigenvalue_below_band(self):
        assert not within_band(np.diag([1e-12, 1.0]), 1e-9, 1e9)

    def test_diag_two_three(self):
        assert within_band(np.diag([2.0, 3.0]), 1.0, 4.0)

    def test_rejects_bad_band(self):
        with pytest.raises(ValueError):
            within_band(np.eye(2), 2.0, 1.0)
        with pytest.raises(ValueError):
            within_band(np.eye(2), 0.0, 1.0)
