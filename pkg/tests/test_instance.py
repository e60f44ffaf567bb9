import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedalt.exceptions import InfeasibleInstanceError, InputError
from fedalt.instance import (AER, IER, ClientDataset, FederatedDataset, LogisticLoss, QuadraticLoss,
                             average_global_model, empirical_min_eigenvalue, generate_assouad_instance,
                             generate_logistic_instance, generate_quadratic_instance, heterogeneity_R2,
                             local_erm, loss_grad, loss_value, regularity_constants)
from fedalt.optim import ProjectionDomain


def logistic(d=1, radius=2.0, c_X=1.0):
    return LogisticLoss.build(c_X, ProjectionDomain.ball(d, radius))


def quadratic(d=2, radius=10.0, rho=1.0):
    return QuadraticLoss.build(rho, ProjectionDomain.ball(d, radius), np.zeros((1, d)))


class TestLossValue:
    def test_logistic_at_zero_is_log2(self):
        model = logistic(d=3)
        for y in (-1.0, 1.0):
            assert loss_value(model, np.zeros(3), (np.array([0.3, -0.7, 1.0]), y)) == pytest.approx(math.log(2))

    def test_logistic_scalar(self):
        # ln(1 + e^-1)
        assert loss_value(logistic(), np.array([1.0]), (np.array([1.0]), 1.0)) == pytest.approx(0.313262, abs=1e-6)

    def test_quadratic_values(self):
        model = quadratic()
        z = np.array([3.0, 4.0])
        assert loss_value(model, z, z) == 0.0
        assert loss_value(model, np.zeros(2), z) == 12.5

    def test_dimension_mismatch(self):
        with pytest.raises(InputError):
            loss_value(quadratic(d=2), np.zeros(3), np.zeros(2))
        with pytest.raises(InputError):
            loss_grad(logistic(d=2), np.zeros(2), (np.zeros(3), 1.0))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_logistic_within_loss_bound(self, seed):
        # needs c_X D sqrt(d) >= 2 ln 2 for a centered ball
        rng = np.random.default_rng(seed)
        d = int(rng.integers(1, 5))
        model = logistic(d=d, radius=1.0, c_X=1.0)
        w = model.domain.project(rng.normal(size=d) * 2)
        x = rng.uniform(-1, 1, size=d)
        y = rng.choice([-1.0, 1.0])
        v = loss_value(model, w, (x, y))
        assert 0.0 <= v <= model.constants.loss_sup


class TestLossGrad:
    def test_logistic_at_zero(self):
        x = np.array([0.5, -2.0])
        for y in (-1.0, 1.0):
            np.testing.assert_allclose(loss_grad(logistic(d=2), np.zeros(2), (x, y)), -y * x / 2)

    def test_quadratic(self):
        w, z = np.array([1.0, 2.0]), np.array([-1.0, 0.5])
        np.testing.assert_allclose(loss_grad(quadratic(), w, z), w - z)

    @pytest.mark.parametrize("kind", ["logistic", "quadratic"])
    def test_finite_differences(self, kind):
        rng = np.random.default_rng(7)
        d, h = 3, 1e-5
        model = logistic(d=d) if kind == "logistic" else quadratic(d=d)
        for _ in range(100):
            w = rng.normal(size=d)
            x = rng.uniform(-1, 1, size=d)
            z = (x, rng.choice([-1.0, 1.0])) if kind == "logistic" else x
            fd = np.array([(loss_value(model, w + h * e, z) - loss_value(model, w - h * e, z)) / (2 * h)
                           for e in np.eye(d)])
            g = loss_grad(model, w, z)
            assert np.linalg.norm(fd - g) <= 1e-5 * max(np.linalg.norm(g), 1e-3)


class TestLocalERM:
    def test_single_point(self):
        model = quadratic()
        S = ClientDataset(np.array([[1.0, 1.0]]))
        w = np.array([0.0, 2.0])
        assert local_erm(model, w, S) == loss_value(model, w, S.x[0])

    def test_two_points(self):
        model = QuadraticLoss.build(1.0, ProjectionDomain.ball(1, 5.0), np.zeros((1, 1)))
        S = ClientDataset(np.array([[0.0], [2.0]]))
        assert local_erm(model, np.array([1.0]), S) == pytest.approx(0.5)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(0)
        model = logistic(d=2)
        x, y = rng.uniform(-1, 1, (20, 2)), rng.choice([-1.0, 1.0], 20)
        perm = rng.permutation(20)
        w = np.array([0.3, -0.4])
        a = local_erm(model, w, ClientDataset(x, y))
        b = local_erm(model, w, ClientDataset(x[perm], y[perm]))
        assert a == pytest.approx(b, rel=1e-14)

    def test_empty_rejected(self):
        with pytest.raises(InputError):
            ClientDataset(np.zeros((0, 2)))


class TestAverageAndHeterogeneity:
    def test_average_global_model(self):
        v = np.array([1.0, -2.0])
        np.testing.assert_allclose(average_global_model([0.2, 0.8], [v, v]), v)
        np.testing.assert_allclose(average_global_model([0.5, 0.5], [[1.0], [-1.0]]), [0.0])
        np.testing.assert_allclose(average_global_model([0.75, 0.25], [[0.0], [4.0]]), [1.0])

    def test_R2_examples(self):
        assert heterogeneity_R2([0.5, 0.5], [[1.0], [-1.0]], AER) == 1.0
        assert heterogeneity_R2([0.5, 0.5], [[1.0], [-1.0]], IER) == 1.0
        assert heterogeneity_R2([0.75, 0.25], [[0.0], [4.0]], AER) == pytest.approx(3.0)
        assert heterogeneity_R2([0.75, 0.25], [[0.0], [4.0]], IER) == pytest.approx(9.0)
        assert heterogeneity_R2([0.3, 0.7], [[2.0, 1.0]] * 2) == 0.0

    def test_weights_must_sum_to_one(self):
        with pytest.raises(InputError):
            average_global_model([0.5, 0.6], [[0.0], [1.0]])

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_aer_not_above_ier_and_center_is_minimizer(self, seed):
        rng = np.random.default_rng(seed)
        m, d = int(rng.integers(1, 6)), int(rng.integers(1, 4))
        p = rng.dirichlet(np.ones(m))
        optima = rng.normal(size=(m, d))
        aer = heterogeneity_R2(p, optima, AER)
        assert aer <= heterogeneity_R2(p, optima, IER) + 1e-12
        w_avg = average_global_model(p, optima)
        for _ in range(20):
            c = w_avg + rng.normal(size=d)
            assert p @ np.sum((optima - c) ** 2, axis=1) >= aer - 1e-12


class TestRegularityConstants:
    def test_logistic_constant_values(self):
        c = regularity_constants(4, 1.0, 2.0)
        assert c.beta == 1.0 and c.sigma2 == 1.0
        assert c.loss_sup == pytest.approx(1.0 * 2.0 * 2.0)

    def test_mu_formula(self):
        a = 1.0 * 2.0 * math.sqrt(4)
        assert regularity_constants(4, 1.0, 2.0).mu == pytest.approx((math.exp(a / 2) + math.exp(-a)) ** -2)
        # the formula at a = 0 gives (1 + 1)^-2
        assert (math.exp(0) + math.exp(0)) ** -2 == 0.25

    def test_rejects_nonpositive(self):
        with pytest.raises(InputError):
            regularity_constants(0, 1.0, 1.0)
        with pytest.raises(InputError):
            regularity_constants(2, 0.0, 1.0)

    def test_hessian_lower_bound(self):
        rng = np.random.default_rng(3)
        for d in (1, 2, 3, 4):
            model = logistic(d=d, radius=1.0)
            mu0 = model.constants.mu
            for n in (5, 20, 50):
                x, y = model.sample(np.zeros(d), n, rng)
                S = ClientDataset(x, y)
                lower = mu0 * empirical_min_eigenvalue(S)
                for _ in range(10):
                    w = model.domain.project(rng.normal(size=d))
                    assert np.linalg.eigvalsh(model.hessian(w, x, y))[0] >= lower - 1e-12


class TestGenerators:
    def test_homogeneous(self):
        inst, _ = generate_logistic_instance(4, 10, 3, target_R2=0.0, seed=1)
        assert np.all(inst.optima == inst.optima[0])

    def test_two_clients_symmetric(self):
        inst, _ = generate_logistic_instance(2, 10, 1, target_R2=1.0, seed=5)
        np.testing.assert_allclose(np.sort(inst.optima[:, 0]), [-1.0, 1.0], atol=1e-12)
        assert heterogeneity_R2(inst.weights, inst.optima) == pytest.approx(1.0, rel=1e-9)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 8), st.integers(1, 4), st.floats(1e-4, 10.0), st.sampled_from([AER, IER]),
           st.integers(0, 10 ** 6))
    def test_planted_R2_round_trip(self, m, d, R2, mode, seed):
        n_list = list(range(3, 3 + m))
        inst, _ = generate_quadratic_instance(m, n_list, d, target_R2=R2, mode=mode, seed=seed)
        assert heterogeneity_R2(inst.weights, inst.optima, mode) == pytest.approx(R2, rel=1e-9)
        assert all(inst.domain.contains(w) for w in inst.optima)
        np.testing.assert_allclose(inst.weights, np.array(n_list) / sum(n_list))

    def test_label_frequency(self):
        inst, data = generate_logistic_instance(1, 4000, 2, target_R2=0.0, seed=2)
        freq = np.mean(data.clients[0].y == 1.0)
        assert abs(freq - 0.5) <= 3 / math.sqrt(4000)

    def test_features_bounded(self):
        _, data = generate_logistic_instance(3, 50, 2, c_X=0.7, target_R2=0.5, seed=4)
        assert all(np.max(np.abs(S.x)) <= 0.7 for S in data.clients)
        _, data = generate_logistic_instance(3, 50, 2, c_X=0.7, seed=4, feature_dist="rademacher")
        assert all(np.all(np.abs(S.x) == 0.7) for S in data.clients)

    def test_quadratic_support(self):
        inst, data = generate_quadratic_instance(3, 200, 3, target_R2=2.0, rho=0.5, seed=9)
        for i, S in enumerate(data.clients):
            np.testing.assert_allclose(np.linalg.norm(S.x - inst.optima[i], axis=1), 0.5)
            assert np.linalg.norm(S.x.mean(axis=0) - inst.optima[i]) <= 3 * 0.5 / math.sqrt(200)

    def test_quadratic_rho_zero(self):
        inst, data = generate_quadratic_instance(2, 5, 2, target_R2=1.0, rho=0.0, seed=0)
        for i, S in enumerate(data.clients):
            np.testing.assert_array_equal(S.x, np.tile(inst.optima[i], (5, 1)))

    def test_bit_reproducible(self):
        a = generate_logistic_instance(3, [4, 5, 6], 2, target_R2=0.3, seed=11)
        b = generate_logistic_instance(3, [4, 5, 6], 2, target_R2=0.3, seed=11)
        np.testing.assert_array_equal(a[0].optima, b[0].optima)
        for s, t in zip(a[1].clients, b[1].clients):
            np.testing.assert_array_equal(s.x, t.x)
            np.testing.assert_array_equal(s.y, t.y)

    def test_infeasible(self):
        with pytest.raises(InfeasibleInstanceError):
            generate_quadratic_instance(3, 5, 2, target_R2=100.0, seed=0, domain_radius=1.0)
        with pytest.raises(InfeasibleInstanceError):
            generate_quadratic_instance(1, 5, 2, target_R2=1.0, seed=0)

    def test_bad_sizes(self):
        with pytest.raises(InputError):
            generate_quadratic_instance(2, [3], 2)
        with pytest.raises(InputError):
            generate_quadratic_instance(2, [3, 0], 2)

    def test_n_equal_one_allowed(self):
        _, data = generate_quadratic_instance(3, 1, 2, target_R2=0.1, seed=0)
        assert data.n_list.tolist() == [1, 1, 1]


class TestAssouad:
    def base(self, d, radius=5.0):
        return QuadraticLoss.build(1.0, ProjectionDomain.ball(d, radius), np.zeros((1, d)))

    def test_zero_deltas(self):
        inst = generate_assouad_instance(3, 10, 2, [0, 0, 0], self.base(2))
        assert np.all(inst.optima == 0)

    def test_sign_vectors(self):
        inst = generate_assouad_instance(6, 10, 1, [0.5] * 6, self.base(1), seed=3)
        assert set(np.unique(inst.optima)) <= {-0.5, 0.5}
        inst = generate_assouad_instance(4, 10, 3, [0.1, 0.2, 0.3, 0.4], self.base(3), seed=3)
        np.testing.assert_allclose(np.sum(inst.optima ** 2, axis=1), np.array([0.1, 0.2, 0.3, 0.4]) ** 2 * 3)

    def test_deterministic(self):
        a = generate_assouad_instance(4, 10, 3, [1.0] * 4, self.base(3), seed=8)
        b = generate_assouad_instance(4, 10, 3, [1.0] * 4, self.base(3), seed=8)
        np.testing.assert_array_equal(a.optima, b.optima)

    def test_infeasible(self):
        with pytest.raises(InfeasibleInstanceError):
            generate_assouad_instance(2, 10, 4, [1.0, 3.0], self.base(4, radius=5.0))


class TestDatasets:
    def test_default_weights(self):
        data = FederatedDataset.from_clients([ClientDataset(np.zeros((n, 2))) for n in (1, 3)])
        np.testing.assert_allclose(data.weights, [0.25, 0.75])
        assert data.N == 4 and data.m == 2

    def test_replace(self):
        S = ClientDataset(np.arange(6.0).reshape(3, 2))
        T = S.replace(1, np.array([9.0, 9.0]))
        np.testing.assert_array_equal(T.x[1], [9.0, 9.0])
        np.testing.assert_array_equal(S.x[1], [2.0, 3.0])
