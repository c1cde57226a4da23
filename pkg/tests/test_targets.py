import numpy as np
import pytest
from scipy import stats

from wvgd import oracle
from wvgd.core import RngStream, finite_difference_gradient
from wvgd.targets import (
    DATASET_NAMES,
    DATASET_SHAPES,
    CholeskyError,
    ConjugateGaussianTarget,
    GaussianMixtureTarget,
    GpHyperTarget,
    LogRegTarget,
    binarize_target,
    load_dataset,
    make_synthetic_dataset,
    make_synthetic_quasiperiodic,
    quasi_periodic_kernel,
    read_numeric_csv,
    sample_random_mixture,
    standardize,
    write_csv,
)


def fd_agrees(target, points, rtol=1e-4, atol=1e-6):
    g = target.grad_log_joint(points)
    for z, gz in zip(points, g):
        fd = finite_difference_gradient(lambda w: target.log_joint(w[None])[0], z, 1e-5)
        np.testing.assert_allclose(gz, fd, rtol=rtol, atol=atol)


class TestMixture:
    def test_random_mixture_shape(self):
        for s in range(20):
            tg = sample_random_mixture(RngStream(s))
            assert tg.weights.shape == (5,)
            assert tg.weights.sum() == pytest.approx(1.0, abs=1e-12)
            assert np.all((tg.scales >= 0.1) & (tg.scales <= 1.0))

    def test_normalized(self, mixtures):
        q = oracle.Quadrature1D(-10.0, 10.0, 16384)
        for tg in mixtures:
            lo, hi = oracle.window_for(tg)
            qq = oracle.Quadrature1D(min(lo, -10.0), max(hi, 10.0), 16384)
            assert qq.integrate(tg.density) == pytest.approx(1.0, abs=1e-6)
        assert q.integrate(sample_random_mixture(RngStream(1)).density) == pytest.approx(1.0, abs=1e-6)

    def test_matches_scipy(self):
        tg = GaussianMixtureTarget([0.3, 0.7], [-1.0, 2.0], [0.5, 1.5])
        x = np.linspace(-4, 5, 41)
        ref = 0.3 * stats.norm(-1, 0.5).pdf(x) + 0.7 * stats.norm(2, 1.5).pdf(x)
        np.testing.assert_allclose(tg.density(x), ref, rtol=1e-12)

    def test_gradient(self, mixtures):
        gen = RngStream(2).generator()
        for tg in mixtures:
            fd_agrees(tg, gen.normal(0, 2, (10, 1)))

    def test_invalid(self):
        with pytest.raises(ValueError):
            GaussianMixtureTarget([0.5, 0.5], [0.0, 1.0], [1.0, 0.0])

    def test_far_tail_finite(self):
        tg = sample_random_mixture(RngStream(0))
        assert np.all(np.isfinite(tg.log_joint(np.array([[-200.0], [300.0]]))))


class TestConjugate:
    def test_posterior(self):
        m, s = ConjugateGaussianTarget(0.4).posterior
        assert m == pytest.approx(0.2) and s == pytest.approx(np.sqrt(0.5))

    def test_gradient(self):
        fd_agrees(ConjugateGaussianTarget(0.4), np.linspace(-2, 2, 7)[:, None])


@pytest.fixture
def logreg():
    gen = RngStream(5).generator()
    X = gen.normal(size=(30, 4))
    y = (gen.uniform(size=30) < 0.5).astype(float)
    return LogRegTarget(X, y)


class TestLogReg:
    def test_log_likelihood_at_zero(self, logreg):
        assert logreg.log_likelihood(np.zeros(4))[0] == pytest.approx(30 * np.log(0.5))

    def test_gradient_at_zero(self, logreg):
        np.testing.assert_allclose(logreg.grad_log_joint(np.zeros(4))[0], logreg.features.T @ (logreg.labels - 0.5))

    def test_gradient_fd(self, logreg):
        fd_agrees(logreg, RngStream(6).generator().normal(size=(50, 4)))

    def test_stable_for_large_weights(self, logreg):
        assert np.all(np.isfinite(logreg.log_joint(np.full((1, 4), 1e3))))

    def test_prior_normalized(self):
        tg = LogRegTarget(np.zeros((1, 1)), np.array([1.0]))
        # with a zero feature the likelihood is 1/2 and the prior integrates to 1
        q = oracle.Quadrature1D(-12, 12, 8192)
        assert q.integrate(lambda w: np.exp(tg.log_joint(w[:, None]))) == pytest.approx(0.5, abs=1e-10)

    def test_dimension_mismatch(self, logreg):
        with pytest.raises(ValueError):
            logreg.log_joint(np.zeros((2, 3)))

    def test_bad_labels(self):
        with pytest.raises(ValueError):
            LogRegTarget(np.zeros((2, 1)), np.array([0.0, 2.0]))

    def test_nan_features(self):
        with pytest.raises(ValueError):
            LogRegTarget(np.array([[np.nan]]), np.array([1.0]))


class TestDatasets:
    def test_median_binarization(self):
        np.testing.assert_array_equal(binarize_target("boston", [1, 2, 3, 4]), [0, 0, 1, 1])

    def test_iris_first_class(self):
        np.testing.assert_array_equal(binarize_target("iris", [0, 1, 2, 0]), [1, 0, 0, 1])

    def test_standardize(self):
        X = RngStream(1).generator().normal(3.0, 5.0, (40, 3))
        X[:, 1] = 7.0
        Z, keep = standardize(X)
        assert Z.shape == (40, 2) and keep.tolist() == [True, False, True]
        np.testing.assert_allclose(Z.mean(axis=0), 0.0, atol=1e-9)
        np.testing.assert_allclose(Z.std(axis=0), 1.0, atol=1e-9)

    @pytest.mark.parametrize("name", DATASET_NAMES)
    def test_synthetic_shapes(self, name):
        header, data = make_synthetic_dataset(name, RngStream(0))
        n, p, _ = DATASET_SHAPES[name]
        assert data.shape == (n, p + 1) and len(header) == p + 1

    def test_load_roundtrip_and_reproducible(self, tmp_path):
        header, data = make_synthetic_dataset("diabetes", RngStream(0))
        path = tmp_path / "diabetes.csv"
        write_csv(path, header, data)
        a = load_dataset("diabetes", path, 50, RngStream(3))
        b = load_dataset("diabetes", path, 50, RngStream(3))
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.labels, b.labels)
        assert a.features.shape == (50, 10)
        assert a.metadata["rows"] == b.metadata["rows"]

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_dataset("iris", tmp_path / "nope.csv", 10, RngStream(0))

    def test_non_numeric(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("a,b\n1,x\n")
        with pytest.raises(ValueError, match="non-numeric"):
            read_numeric_csv(p)

    def test_subset_too_large(self, tmp_path):
        p = tmp_path / "small.csv"
        p.write_text("a,y\n1,0\n2,1\n3,0\n")
        with pytest.raises(ValueError, match="exceeds"):
            load_dataset("boston", p, 10, RngStream(0))


class TestGp:
    @pytest.fixture
    def gp(self):
        return make_synthetic_quasiperiodic(20, RngStream(0))

    def test_synthetic(self, gp):
        assert gp.times.shape == (20,) and gp.observations.shape == (20,)
        again = make_synthetic_quasiperiodic(20, RngStream(0))
        np.testing.assert_array_equal(gp.observations, again.observations)

    def test_needs_enough_points(self):
        with pytest.raises(ValueError):
            make_synthetic_quasiperiodic(10, RngStream(0))

    def test_white_noise_limit(self, gp):
        logB = np.log(3.0)
        theta = np.array([[-40.0, 0.0, 0.0, logB]])
        B = 3.0
        y = gp.observations
        ref = -0.5 * np.sum(y**2) / B - 0.5 * y.size * np.log(2 * np.pi * B)
        assert gp.log_marginal_likelihood(theta)[0] == pytest.approx(ref, rel=1e-6)

    def test_covariance_spd(self, gp):
        gen = RngStream(1).generator()
        for theta in gen.normal(0, 2, (20, 4)):
            K = gp.covariance(theta)[0]
            np.testing.assert_allclose(K, K.T)
            assert np.linalg.eigvalsh(K).min() > 0

    def test_fd_step_consistency(self, gp):
        theta = np.array([0.1, -0.6, 0.5, -1.5])
        f = lambda th: gp.log_joint(th[None])[0]
        g5 = finite_difference_gradient(f, theta, 1e-5)
        g4 = finite_difference_gradient(f, theta, 1e-4)
        np.testing.assert_allclose(g5, g4, rtol=1e-3, atol=1e-6)

    def test_linear_exponent(self):
        tau = np.array([-1.0, 1.0])
        k = quasi_periodic_kernel(tau, 1.0, 0.0, 1.0, "linear")
        np.testing.assert_allclose(k, np.exp(-0.5))

    def test_squared_exponent(self):
        np.testing.assert_allclose(quasi_periodic_kernel(np.array([2.0]), 2.0, 0.0, 1.0), 2.0 * np.exp(-2.0))

    def test_validation(self):
        with pytest.raises(ValueError):
            GpHyperTarget([0.0, 0.0], [1.0, 2.0])

    def test_cholesky_failure(self, gp):
        # a kernel with a negative diagonal cannot be rescued by jitter
        bad = GpHyperTarget(gp.times, gp.observations)
        K = -np.eye(gp.times.size)
        with pytest.raises(CholeskyError):
            bad._single_lml(K)
