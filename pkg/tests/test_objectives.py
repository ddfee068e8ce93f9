import numpy as np
import pytest

from dasgd.core import RngStream
from dasgd.objectives import (
    LogisticObjective,
    NoisyQuadratic,
    TinyMlpObjective,
    estimate_L,
    estimate_variance,
    grad_check,
    load_dataset_csv,
)


@pytest.fixture
def quad():
    return NoisyQuadratic.diagonal([1.0, 4.0], noise_sigma=0.0)


@pytest.fixture
def logistic():
    return LogisticObjective(dim=6, n_samples=200, dataset_seed=5)


@pytest.fixture
def mlp():
    return TinyMlpObjective(in_dim=3, hidden=5, n_samples=128, dataset_seed=5)


class TestNoisyQuadratic:
    def test_gradient_is_linear(self, quad):
        x = np.array([2.0, -1.0])
        assert np.allclose(quad.full_grad(x), np.array([2.0, -4.0]))

    def test_gap_identity(self):
        rng = RngStream(0, purpose="test").generator()
        A = np.array([[2.0, 0.5], [0.5, 1.0]])
        obj = NoisyQuadratic(A, np.array([1.0, -1.0]))
        for _ in range(20):
            x = rng.standard_normal(2)
            assert obj.full_loss(x) - obj.f_inf_hint == pytest.approx(
                obj.gap(x), rel=1e-12, abs=1e-12)

    def test_minimizer(self, quad):
        assert np.allclose(quad.full_grad(quad.x_star), 0.0)
        assert quad.L == 4.0

    def test_noise_level_independent_of_x(self):
        obj = NoisyQuadratic.diagonal([1.0, 2.0, 3.0], noise_sigma=0.5)
        rng = RngStream(1, purpose="test").generator()
        for x in (np.zeros(3), np.ones(3) * 10):
            sq = [
                float(np.sum((obj.stoch_grad(x, obj.draw_batch(rng, 4))
                              - obj.full_grad(x)) ** 2))
                for _ in range(4000)
            ]
            assert np.mean(sq) == pytest.approx(obj.sigma_sq, rel=0.1)

    def test_rejects_bad_matrix(self):
        with pytest.raises(ValueError):
            NoisyQuadratic(np.array([[1.0, 2.0], [0.0, 1.0]]), np.zeros(2))
        with pytest.raises(ValueError):
            NoisyQuadratic(np.array([[-1.0]]), np.zeros(1))


class TestUnbiasedness:
    def test_quadratic(self):
        obj = NoisyQuadratic.diagonal([1.0, 3.0], noise_sigma=0.3)
        rng = RngStream(2, purpose="test").generator()
        x = np.array([0.5, -0.5])
        n = 10_000
        draws = np.stack([obj.stoch_grad(x, obj.draw_batch(rng, 1))
                          for _ in range(n)])
        se = draws.std(axis=0, ddof=1) / np.sqrt(n)
        assert (np.abs(draws.mean(axis=0) - obj.full_grad(x)) <= 5 * se).all()

    def test_logistic(self, logistic):
        rng = RngStream(2, purpose="test").generator()
        x = 0.3 * np.ones(logistic.dim)
        n = 10_000
        draws = np.stack([logistic.stoch_grad(x, logistic.draw_batch(rng, 4))
                          for _ in range(n)])
        se = draws.std(axis=0, ddof=1) / np.sqrt(n)
        assert (np.abs(draws.mean(axis=0) - logistic.full_grad(x)) <= 5 * se).all()


class TestDrawBatch:
    def test_deterministic_given_stream(self, logistic):
        a = [logistic.draw_batch(RngStream(9, 1).generator(), 8) for _ in range(3)]
        b = [logistic.draw_batch(RngStream(9, 1).generator(), 8) for _ in range(3)]
        assert all((x == y).all() for x, y in zip(a, b))

    def test_full_batch_is_whole_dataset(self, logistic):
        rng = RngStream(0).generator()
        batch = logistic.draw_batch(rng, logistic.n_samples)
        assert (batch == np.arange(logistic.n_samples)).all()


class TestGradCheck:
    def test_quadratic_exact(self, quad):
        rng = RngStream(3, purpose="test").generator()
        for _ in range(5):
            assert grad_check(quad, rng.standard_normal(2)) <= 1e-9

    def test_logistic_at_zero(self, logistic):
        assert grad_check(logistic, np.zeros(logistic.dim)) <= 1e-7

    def test_mlp_random_points(self, mlp):
        rng = RngStream(3, purpose="test").generator()
        for _ in range(5):
            x = 0.5 * rng.standard_normal(mlp.dim)
            assert grad_check(mlp, x, h=1e-5) <= 1e-5

    def test_rejects_bad_step(self, quad):
        with pytest.raises(ValueError):
            grad_check(quad, np.zeros(2), h=0.0)


class TestEstimateL:
    def test_diag_quadratic_converges_from_below(self, quad):
        rng = RngStream(4, purpose="test").generator()
        est = estimate_L(quad, n_pairs=10_000, radius=1.0, rng=rng)
        assert est <= 4.0 + 1e-9
        assert est >= 3.9

    def test_identity(self):
        obj = NoisyQuadratic.diagonal([1.0, 1.0, 1.0])
        est = estimate_L(obj, n_pairs=100)
        assert est == pytest.approx(1.0, rel=1e-9)

    def test_mlp_monotone_in_pairs(self, mlp):
        # same stream prefix: more pairs can only raise the max
        est_small = estimate_L(mlp, n_pairs=50, rng=RngStream(5).generator())
        est_big = estimate_L(mlp, n_pairs=500, rng=RngStream(5).generator())
        assert 0.0 < est_small <= est_big < np.inf


class TestEstimateVariance:
    def test_quadratic_recovers_injected_noise(self):
        obj = NoisyQuadratic.diagonal(np.linspace(1, 2, 10), noise_sigma=0.1)
        rng = RngStream(6, purpose="test").generator()
        points = [rng.standard_normal(10) for _ in range(4)]
        sigma_sq, beta = estimate_variance(obj, points, n_samples=400, rng=rng)
        assert sigma_sq == pytest.approx(0.1 ** 2 * 10, rel=0.2)
        assert beta <= 0.02

    def test_noise_free(self, quad):
        sigma_sq, beta = estimate_variance(
            quad, [np.zeros(2), np.ones(2)], n_samples=8)
        assert sigma_sq == 0.0 and beta == 0.0

    def test_full_batch_logistic_has_zero_variance(self, logistic):
        points = [np.zeros(logistic.dim), 0.1 * np.ones(logistic.dim)]
        sigma_sq, beta = estimate_variance(
            logistic, points, n_samples=8, batch_size=logistic.n_samples)
        assert sigma_sq == 0.0 and beta == 0.0

    def test_identical_gradient_norms_fall_back(self):
        obj = NoisyQuadratic.diagonal([1.0, 1.0], noise_sigma=0.2)
        # both probes on the same sphere: ||grad||^2 identical
        points = [np.array([1.0, 0.0]), np.array([0.0, 1.0])]
        sigma_sq, beta = estimate_variance(obj, points, n_samples=200,
                                           rng=RngStream(7).generator())
        assert beta == 0.0
        assert sigma_sq == pytest.approx(obj.sigma_sq, rel=0.3)

    def test_needs_two_points(self, quad):
        with pytest.raises(ValueError):
            estimate_variance(quad, [np.zeros(2)], n_samples=8)


class TestMlpDataset:
    def test_loss_finite_and_deterministic(self, mlp):
        x = mlp.initial_point()
        assert np.isfinite(mlp.full_loss(x))
        again = TinyMlpObjective(in_dim=3, hidden=5, n_samples=128, dataset_seed=5)
        assert mlp.full_loss(x) == again.full_loss(x)

    def test_parameter_packing(self, mlp):
        assert mlp.dim == 5 * 3 + 5 + 5 + 1


class TestCsvImport:
    def test_roundtrip(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text(
            "feature_0,feature_1,label\n0.5,-1.0,1\n-0.25,2.0,0\n"
        )
        X, y = load_dataset_csv(path)
        assert X.shape == (2, 2)
        assert (y == np.array([1.0, 0.0])).all()
        obj = LogisticObjective(features=X, labels=y, reg=0.0)
        assert obj.dim == 2 and obj.n_samples == 2

    def test_rejects_missing_columns(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            load_dataset_csv(path)
