import math

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from trimix import (NotPositiveDefiniteError, SpdMatrix, logdet_pd,
                    matnorm_logdensity, matnorm_logdensity_many, matnorm_sample)
from conftest import rand_spd


def vec_mvn_logpdf(x, m, sigma, psi):
    """Oracle: density of vec(X) under N(vec(M), kron(Psi, Sigma))."""
    cov = np.kron(psi.values, sigma.values)
    return multivariate_normal(m.ravel(order="F"), cov).logpdf(x.ravel(order="F"))


class TestSpdMatrix:
    def test_symmetrizes_round_off(self, rng):
        base = rand_spd(4, rng).values
        noisy = base + rng.standard_normal((4, 4)) * 1e-13
        spd = SpdMatrix(noisy)
        np.testing.assert_array_equal(spd.values, spd.values.T)

    def test_rejects_asymmetric(self, rng):
        a = rand_spd(3, rng).values.copy()
        a[0, 1] += 0.2
        with pytest.raises(NotPositiveDefiniteError, match="asymmetric"):
            SpdMatrix(a)

    def test_rejects_indefinite(self):
        with pytest.raises(NotPositiveDefiniteError):
            SpdMatrix(np.diag([1.0, -1.0]))

    def test_logdet_matches_cholesky_construction(self, rng):
        spd = rand_spd(5, rng)
        assert spd.logdet == 2.0 * np.sum(np.log(np.diag(spd.chol)))

    def test_inverse(self, rng):
        spd = rand_spd(4, rng)
        np.testing.assert_allclose(spd.inverse().values @ spd.values,
                                   np.eye(4), atol=1e-10)


class TestLogdet:
    @pytest.mark.parametrize("dim", [1, 3, 6])
    def test_identity_is_zero(self, dim):
        assert logdet_pd(np.eye(dim)) == 0.0

    def test_diagonal(self):
        assert logdet_pd(np.diag([2.0, 3.0])) == pytest.approx(math.log(6.0), abs=1e-14)

    def test_matches_eigenvalue_oracle(self, rng):
        a = rand_spd(5, rng)
        expected = float(np.sum(np.log(np.linalg.eigvalsh(a.values))))
        assert logdet_pd(a) == pytest.approx(expected, abs=1e-10)


class TestLogDensity:
    def test_scalar_standard_normal_at_zero(self):
        one = SpdMatrix([[1.0]])
        value = matnorm_logdensity(np.zeros((1, 1)), np.zeros((1, 1)), one, one)
        assert value == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-14)

    def test_zero_quadratic_form(self, rng):
        x = rng.standard_normal((3, 4))
        value = matnorm_logdensity(x, x, SpdMatrix(np.eye(3)), SpdMatrix(np.eye(4)))
        assert value == pytest.approx(-6 * math.log(2 * math.pi), abs=1e-12)

    def test_matches_vectorized_mvn(self, rng):
        sigma, psi = rand_spd(2, rng), rand_spd(3, rng)
        x = rng.standard_normal((2, 3))
        m = rng.standard_normal((2, 3))
        ours = matnorm_logdensity(x, m, sigma.inverse(), psi.inverse())
        assert ours == pytest.approx(vec_mvn_logpdf(x, m, sigma, psi), abs=1e-10)

    def test_kronecker_equivalence_200_instances(self, rng):
        worst = 0.0
        for _ in range(200):
            p, q = rng.integers(1, 5, size=2)
            sigma, psi = rand_spd(p, rng), rand_spd(q, rng)
            x = rng.standard_normal((p, q)) * 2
            m = rng.standard_normal((p, q))
            ours = matnorm_logdensity(x, m, sigma.inverse(), psi.inverse())
            worst = max(worst, abs(ours - vec_mvn_logpdf(x, m, sigma, psi)))
        assert worst < 1e-8

    def test_scale_identifiability(self, rng):
        omega, gamma = rand_spd(3, rng), rand_spd(2, rng)
        x = rng.standard_normal((3, 2))
        m = rng.standard_normal((3, 2))
        base = matnorm_logdensity(x, m, omega, gamma)
        for c in (0.1, 3.7, 42.0):
            scaled = matnorm_logdensity(x, m, SpdMatrix(omega.values * c),
                                        SpdMatrix(gamma.values / c))
            assert scaled == pytest.approx(base, abs=1e-10)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError, match="shape"):
            matnorm_logdensity(np.zeros((2, 2)), np.zeros((2, 2)),
                               rand_spd(3, rng), rand_spd(2, rng))

    def test_batched_equals_loop(self, rng):
        omega, gamma = rand_spd(3, rng), rand_spd(2, rng)
        xs = rng.standard_normal((6, 3, 2))
        m = rng.standard_normal((3, 2))
        batched = matnorm_logdensity_many(xs, m, omega, gamma)
        looped = [matnorm_logdensity(x, m, omega, gamma) for x in xs]
        np.testing.assert_allclose(batched, looped, atol=1e-12)


class TestSampling:
    def test_identity_kronecker_unit_variance(self):
        rng = np.random.default_rng(7)
        eye2, eye3 = SpdMatrix(np.eye(2)), SpdMatrix(np.eye(3))
        draws = matnorm_sample(np.zeros((2, 3)), eye2, eye3, rng, size=10_000)
        assert abs(draws.var() - 1.0) < 0.05

    def test_deterministic_given_seed(self):
        m = np.arange(6.0).reshape(2, 3)
        sigma = SpdMatrix([[2.0, 0.3], [0.3, 1.0]])
        psi = SpdMatrix(np.diag([1.0, 2.0, 0.5]))
        a = matnorm_sample(m, sigma, psi, np.random.default_rng(123))
        b = matnorm_sample(m, sigma, psi, np.random.default_rng(123))
        np.testing.assert_array_equal(a, b)

    def test_clt_bound_on_mean(self):
        # sd = 2, so the 3-sigma band for the mean of 1e5 draws is 3 * 2/sqrt(1e5)
        rng = np.random.default_rng(11)
        draws = matnorm_sample(np.full((1, 1), 7.0), SpdMatrix([[4.0]]),
                               SpdMatrix([[1.0]]), rng, size=100_000)
        assert abs(draws.mean() - 7.0) < 3 * 2 / math.sqrt(100_000)

    def test_sample_covariance_matches_kronecker(self, rng):
        sigma, psi = rand_spd(2, rng), rand_spd(2, rng)
        draws = matnorm_sample(np.zeros((2, 2)), sigma, psi,
                               np.random.default_rng(5), size=40_000)
        # vec (column-major) stacking: entries (0,0),(1,0),(0,1),(1,1)
        flat = np.stack([draws[:, 0, 0], draws[:, 1, 0],
                         draws[:, 0, 1], draws[:, 1, 1]], axis=1)
        emp = np.cov(flat.T)
        np.testing.assert_allclose(emp, np.kron(psi.values, sigma.values),
                                   atol=0.12)
