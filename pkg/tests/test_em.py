import numpy as np
import pytest

from trimix import (DegenerateClusterError, MixtureParams, PenaltyConfig,
                    Responsibilities, SpdMatrix, ThreeWayData, classify, e_step,
                    fit, initialize, m_step, matnorm_logdensity,
                    normalize_identifiability, penalized_loglik, q_function)
from trimix.em import _initial_params
from conftest import rand_spd


def simple_params(rng, k=2, p=2, q=2, sep=6.0):
    means = np.stack([rng.standard_normal((p, q)) + sep * j for j in range(k)])
    return MixtureParams(np.full(k, 1.0 / k), means,
                         tuple(rand_spd(p, rng) for _ in range(k)),
                         tuple(rand_spd(q, rng) for _ in range(k)))


def two_cloud_data(rng, n=40, p=2, q=2, sep=10.0):
    half = n // 2
    labels = np.repeat([0, 1], half)
    x = rng.standard_normal((n, p, q))
    x[half:] += sep
    return ThreeWayData(x), labels


def flip_flop_mle(x, max_iter=500, tol=1e-12):
    """Oracle: unpenalized matrix-normal MLE via closed-form alternation."""
    n, p, q = x.shape
    m = x.mean(axis=0)
    y = x - m
    sigma = np.eye(p)
    psi = np.eye(q)
    for _ in range(max_iter):
        psi_inv = np.linalg.inv(psi)
        sigma_new = np.einsum("iab,bc,idc->ad", y, psi_inv, y) / (n * q)
        sigma_inv = np.linalg.inv(sigma_new)
        psi_new = np.einsum("iab,ac,icd->bd", y, sigma_inv, y) / (n * p)
        delta = max(np.max(np.abs(sigma_new - sigma)), np.max(np.abs(psi_new - psi)))
        sigma, psi = sigma_new, psi_new
        if delta < tol:
            break
    return m, sigma, psi


class TestInitialize:
    def test_separated_clouds_recovered_exactly(self, rng):
        data, labels = two_cloud_data(rng)
        got = initialize(data, 2)
        # brute-force two-means oracle is exact here; compare partitions
        assert (np.array_equal(got, labels)
                or np.array_equal(got, 1 - labels))

    def test_n_equals_k_gives_singletons(self, rng):
        data = ThreeWayData(rng.standard_normal((3, 2, 2)))
        np.testing.assert_array_equal(initialize(data, 3), [0, 1, 2])

    def test_identical_units_deterministic_non_empty(self):
        data = ThreeWayData(np.ones((6, 2, 2)))
        first = initialize(data, 2)
        second = initialize(data, 2)
        np.testing.assert_array_equal(first, second)
        assert len(np.unique(first)) == 2

    def test_kmeans_plus_plus_deterministic_given_seed(self, rng):
        data, _ = two_cloud_data(rng)
        a = initialize(data, 2, seed=5, method="kmeans++")
        b = initialize(data, 2, seed=5, method="kmeans++")
        np.testing.assert_array_equal(a, b)

    def test_too_many_components(self, rng):
        data = ThreeWayData(rng.standard_normal((2, 1, 1)))
        with pytest.raises(ValueError):
            initialize(data, 3)


class TestEStep:
    def test_single_component_gives_ones(self, rng):
        data = ThreeWayData(rng.standard_normal((5, 2, 2)))
        params = MixtureParams(np.array([1.0]), rng.standard_normal((1, 2, 2)),
                               (rand_spd(2, rng),), (rand_spd(2, rng),))
        resp, _ = e_step(data, params)
        np.testing.assert_array_equal(resp.z, np.ones((5, 1)))

    def test_identical_components_split_evenly(self, rng):
        data = ThreeWayData(rng.standard_normal((5, 2, 2)))
        m = rng.standard_normal((2, 2))
        om, ga = rand_spd(2, rng), rand_spd(2, rng)
        params = MixtureParams(np.array([0.5, 0.5]), np.stack([m, m]),
                               (om, om), (ga, ga))
        resp, _ = e_step(data, params)
        np.testing.assert_allclose(resp.z, 0.5, atol=1e-12)

    def test_ten_sigma_separation_is_decisive(self):
        one = SpdMatrix([[1.0]])
        params = MixtureParams(np.array([0.5, 0.5]),
                               np.array([[[0.0]], [[10.0]]]),
                               (one, one), (one, one))
        data = ThreeWayData(np.zeros((1, 1, 1)))
        resp, _ = e_step(data, params)
        assert resp.z[0, 0] > 1 - 1e-6

    def test_rows_sum_to_one(self, rng):
        data = ThreeWayData(rng.standard_normal((30, 2, 2)) * 3)
        params = simple_params(rng, sep=1.0)
        resp, _ = e_step(data, params)
        assert np.max(np.abs(resp.z.sum(axis=1) - 1.0)) < 1e-12

    def test_loglik_matches_direct_sum(self, rng):
        data = ThreeWayData(rng.standard_normal((8, 2, 2)))
        params = simple_params(rng, sep=1.0)
        _, ll = e_step(data, params)
        direct = 0.0
        for i in range(data.n):
            mix = [params.tau[j] * np.exp(matnorm_logdensity(
                data.values[i], params.means[j], params.omegas[j],
                params.gammas[j])) for j in range(2)]
            direct += np.log(sum(mix))
        assert ll == pytest.approx(direct, abs=1e-8)


class TestClassify:
    def test_argmax(self):
        resp = Responsibilities(np.array([[0.2, 0.8], [0.9, 0.1]]))
        np.testing.assert_array_equal(classify(resp), [1, 0])

    def test_tie_breaks_to_smallest_index(self):
        resp = Responsibilities(np.array([[0.5, 0.5]]))
        assert classify(resp)[0] == 0

    def test_one_hot_identity(self, rng):
        labels = rng.integers(0, 3, size=12)
        resp = Responsibilities.from_labels(labels, 3)
        np.testing.assert_array_equal(classify(resp), labels)


class TestMStep:
    def test_unpenalized_single_component_matches_flip_flop_oracle(self, rng):
        x = rng.standard_normal((60, 3, 2)) @ np.diag([1.0, 2.0])
        data = ThreeWayData(x)
        resp = Responsibilities(np.ones((60, 1)))
        cfg = PenaltyConfig(0, 0, 0, kind="none").resolve(3, 2)
        params = m_step(data, resp, cfg, _initial_params(data, resp),
                        max_flipflop=200, flipflop_tol=1e-12)
        m_ref, sigma_ref, psi_ref = flip_flop_mle(x)
        np.testing.assert_allclose(params.means[0], m_ref, atol=1e-8)
        # the Kronecker product is the identifiable object
        kron_ours = np.kron(np.linalg.inv(params.gammas[0].values),
                            np.linalg.inv(params.omegas[0].values))
        np.testing.assert_allclose(kron_ours, np.kron(psi_ref, sigma_ref),
                                   atol=1e-6)

    def test_hard_responsibilities_give_per_cluster_mles(self, rng):
        data, labels = two_cloud_data(rng, n=60)
        resp = Responsibilities.from_labels(labels, 2)
        cfg = PenaltyConfig(0, 0, 0, kind="none").resolve(2, 2)
        params = m_step(data, resp, cfg, _initial_params(data, resp),
                        max_flipflop=200, flipflop_tol=1e-12)
        for j in range(2):
            sub = data.values[labels == j]
            m_ref, sigma_ref, psi_ref = flip_flop_mle(sub)
            np.testing.assert_allclose(params.means[j], m_ref, atol=1e-8)
            kron_ours = np.kron(np.linalg.inv(params.gammas[j].values),
                                np.linalg.inv(params.omegas[j].values))
            np.testing.assert_allclose(kron_ours, np.kron(psi_ref, sigma_ref),
                                       atol=1e-6)
        np.testing.assert_allclose(params.tau, [0.5, 0.5], atol=1e-12)

    @pytest.mark.parametrize("kind,lambdas", [
        ("none", (0.0, 0.0, 0.0)),
        ("group-row", (0.8, 0.5, 0.4)),
        ("entrywise", (0.5, 0.5, 0.4)),
    ])
    def test_q_function_never_decreases(self, rng, kind, lambdas):
        data = ThreeWayData(rng.standard_normal((40, 2, 3)) * 2)
        cfg = PenaltyConfig(*lambdas, kind=kind).resolve(2, 3)
        labels = initialize(data, 2)
        resp = Responsibilities.from_labels(labels, 2)
        params = _initial_params(data, resp)
        for _ in range(4):
            new_params = m_step(data, resp, cfg, params)
            q_old = q_function(data, resp, params, cfg)
            q_new = q_function(data, resp, new_params, cfg)
            assert q_new >= q_old - 1e-8
            params = new_params
            resp, _ = e_step(data, params)

    def test_soft_count_floor_raises(self, rng):
        data = ThreeWayData(rng.standard_normal((50, 2, 2)))
        z = np.full((50, 2), [0.999, 0.001])
        cfg = PenaltyConfig(0, 0, 0, kind="none").resolve(2, 2)
        resp_obj = Responsibilities(z)
        with pytest.raises(DegenerateClusterError) as err:
            m_step(data, resp_obj, cfg, simple_params(rng))
        assert err.value.component == 1


class TestNormalize:
    def test_unit_determinant_is_identity_map(self, rng):
        gamma = SpdMatrix(np.diag([2.0, 0.5]))  # det 1
        params = MixtureParams(np.array([1.0]), np.zeros((1, 2, 2)),
                               (rand_spd(2, rng),), (gamma,))
        out = normalize_identifiability(params)
        np.testing.assert_allclose(out.gammas[0].values, gamma.values, atol=1e-14)

    def test_scale_cancellation_two_i(self, rng):
        params = MixtureParams(np.array([1.0]), np.zeros((1, 2, 2)),
                               (SpdMatrix(np.eye(2)),), (SpdMatrix(2 * np.eye(2)),))
        out = normalize_identifiability(params)
        np.testing.assert_allclose(out.gammas[0].values, np.eye(2), atol=1e-14)
        np.testing.assert_allclose(out.omegas[0].values, 2 * np.eye(2), atol=1e-14)
        x = rng.standard_normal((2, 2))
        before = matnorm_logdensity(x, np.zeros((2, 2)), params.omegas[0],
                                    params.gammas[0])
        after = matnorm_logdensity(x, np.zeros((2, 2)), out.omegas[0],
                                   out.gammas[0])
        assert after == pytest.approx(before, abs=1e-12)

    def test_density_invariance_100_points(self, rng):
        params = simple_params(rng, k=3, p=3, q=2)
        out = normalize_identifiability(params)
        for g in out.gammas:
            assert abs(g.logdet) < 1e-8
        for _ in range(100):
            x = rng.standard_normal((3, 2)) * 2
            for j in range(3):
                before = matnorm_logdensity(x, params.means[j], params.omegas[j],
                                            params.gammas[j])
                after = matnorm_logdensity(x, out.means[j], out.omegas[j],
                                           out.gammas[j])
                assert abs(after - before) < 1e-10

    def test_zero_patterns_preserved(self, rng):
        gamma = SpdMatrix(np.diag([3.0, 1.0, 0.4]))
        omega = SpdMatrix(np.array([[2.0, 0.0], [0.0, 1.0]]))
        params = MixtureParams(np.array([1.0]), np.zeros((1, 2, 3)),
                               (omega,), (gamma,))
        out = normalize_identifiability(params)
        assert np.all((out.gammas[0].values == 0) == (gamma.values == 0))
        assert np.all((out.omegas[0].values == 0) == (omega.values == 0))


class TestFit:
    def test_single_component_unpenalized_mle(self, rng):
        x = rng.standard_normal((50, 2, 2)) + 3
        data = ThreeWayData(x)
        result = fit(data, 1, PenaltyConfig(0, 0, 0, kind="none"))
        assert result.converged
        assert np.all(np.diff(result.pen_loglik_trace) > -1e-8)
        m_ref, sigma_ref, psi_ref = flip_flop_mle(x)
        np.testing.assert_allclose(result.params.means[0], m_ref, atol=1e-6)

    def test_two_clouds_recovered(self, rng):
        data, labels = two_cloud_data(rng, n=60)
        result = fit(data, 2, PenaltyConfig(0.5, 0.5, 0.5))
        assert result.converged
        got = result.labels
        assert (np.array_equal(got, labels) or np.array_equal(got, 1 - labels))

    def test_lambda_zero_group_matches_closed_form_mean_update(self, rng):
        data, _ = two_cloud_data(rng, n=60, sep=6.0)
        a = fit(data, 2, PenaltyConfig(0, 0, 0, kind="none"))
        b = fit(data, 2, PenaltyConfig(0, 0, 0, kind="group-row"))
        assert a.loglik == pytest.approx(b.loglik, abs=1e-4)

    def test_label_permutation_invariance(self, rng):
        data = ThreeWayData(rng.standard_normal((30, 2, 2)) * 2)
        params = simple_params(rng, sep=3.0)
        perm = [1, 0]
        permuted = MixtureParams(params.tau[perm], params.means[perm],
                                 tuple(params.omegas[j] for j in perm),
                                 tuple(params.gammas[j] for j in perm))
        cfg = PenaltyConfig(0.3, 0.3, 0.3)
        assert penalized_loglik(data, params, cfg) == pytest.approx(
            penalized_loglik(data, permuted, cfg), abs=1e-10)
        resp_a, _ = e_step(data, params)
        resp_b, _ = e_step(data, permuted)
        np.testing.assert_allclose(resp_a.z, resp_b.z[:, perm], atol=1e-12)

    def test_degenerate_run_flagged_not_raised(self, rng):
        # K larger than the structure supports with a tiny floor-busting group
        x = rng.standard_normal((20, 1, 1))
        x[0] += 100.0
        data = ThreeWayData(x)
        result = fit(data, 2, PenaltyConfig(0, 0, 0, kind="none"),
                     init_labels=np.r_[1, np.zeros(19, dtype=int)])
        assert result.degenerate and not result.converged
        assert "collapsed" in result.message

    def test_trace_is_recorded_and_monotone(self, rng):
        data, _ = two_cloud_data(rng, n=40, sep=4.0)
        result = fit(data, 2, PenaltyConfig(1.0, 1.0, 0.5))
        assert result.iterations == len(result.pen_loglik_trace)
        assert np.all(np.diff(result.pen_loglik_trace) > -1e-8)

    def test_final_gamma_unit_determinant(self, rng):
        data, _ = two_cloud_data(rng, n=40)
        result = fit(data, 2, PenaltyConfig(0.5, 0.5, 0.5))
        for g in result.params.gammas:
            assert abs(g.logdet) < 1e-8

    def test_labels_are_argmax_of_resp(self, rng):
        data, _ = two_cloud_data(rng, n=40)
        result = fit(data, 2, PenaltyConfig(0.2, 0.2, 0.2))
        np.testing.assert_array_equal(result.labels,
                                      np.argmax(result.resp.z, axis=1))
