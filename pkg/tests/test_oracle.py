import numpy as np
import pytest
from scipy import stats

from wvgd import oracle
from wvgd.core import RngStream
from wvgd.targets import GaussianMixtureTarget


@pytest.fixture
def quad(normal):
    return oracle.default_quadrature(normal)


class TestQuadrature:
    def test_gaussian_mass(self, normal, quad):
        assert quad.integrate(normal.density) == pytest.approx(1.0, abs=1e-12)

    def test_node_doubling_converged(self, normal, quad):
        val, ok = quad.integrate_checked(lambda z: z**2 * normal.density(z))
        assert ok and val == pytest.approx(1.0, abs=1e-10)

    def test_subinterval(self, normal, quad):
        assert quad.integrate(normal.density, -np.inf, 1.0) == pytest.approx(stats.norm.cdf(1.0), abs=1e-12)

    def test_window(self):
        tg = GaussianMixtureTarget([0.5, 0.5], [-1.0, 2.0], [0.5, 0.25])
        assert oracle.window_for(tg) == (-5.0, 6.0)


class TestQuadratureLoss:
    def test_single_particle_variance(self, normal, quad):
        assert oracle.quadrature_loss([0.0], normal.density, quad) == pytest.approx(1.0, abs=1e-8)

    def test_bias_variance(self, normal, quad):
        assert oracle.quadrature_loss([0.5], normal.density, quad) == pytest.approx(1.25, abs=1e-8)

    def test_two_point_optimum(self, normal, quad):
        a = np.sqrt(2 / np.pi)
        assert oracle.quadrature_loss([-a, a], normal.density, quad) == pytest.approx(1 - 2 / np.pi, abs=1e-6)

    def test_unsorted_raises(self, normal, quad):
        with pytest.raises(ValueError):
            oracle.quadrature_loss([1.0, 0.0], normal.density, quad)

    def test_gradient_is_cell_integral(self, mixtures):
        # the boundary terms cancel, so dL/dz_j equals the interior integral
        for tg in mixtures:
            q = oracle.default_quadrature(tg)
            z = np.sort(tg.mean + np.array([-1.0, 0.2, 1.1]))
            np.testing.assert_allclose(oracle.quadrature_loss_gradient(z, tg.density, q),
                                       oracle.cell_cost_gradient(z, tg.density, q), atol=1e-6)


class TestLloyd:
    def test_one_point_is_mean(self, normal, quad):
        assert oracle.lloyd_1d(normal.density, 1, quad).positions[0] == pytest.approx(0.0, abs=1e-9)

    def test_two_point_normal(self, normal, quad):
        z = oracle.lloyd_1d(normal.density, 2, quad).positions
        np.testing.assert_allclose(z, [-0.79788, 0.79788], atol=1e-5)

    def test_bimodal_one_per_mode(self):
        tg = GaussianMixtureTarget([0.5, 0.5], [-3.0, 3.0], [1.0, 1.0])
        z = oracle.lloyd_1d(tg.density, 2, oracle.default_quadrature(tg)).positions
        assert z[0] < -2 and z[1] > 2
        assert z[0] == pytest.approx(-z[1], abs=1e-6)

    def test_monotone_loss(self, mixtures):
        for tg in mixtures:
            res = oracle.lloyd_1d(tg.density, 4, oracle.default_quadrature(tg), n_starts=1)
            assert np.all(np.diff(res.loss_history) <= 1e-12)

    def test_beats_random_configurations(self, mixtures):
        tg = mixtures[0]
        q = oracle.default_quadrature(tg)
        best = oracle.lloyd_1d(tg.density, 3, q).loss
        gen = RngStream(99).generator()
        for _ in range(100):
            z = np.sort(gen.normal(tg.mean, 2.0, 3))
            assert best <= oracle.quadrature_loss(z, tg.density, q) + 1e-12


class TestTruncatedMoments:
    def test_half_line(self):
        m = oracle.truncated_moments_entropy(0.0, 1.0, (0.0, np.inf))
        assert m.Z == pytest.approx(0.5, abs=1e-10)
        assert m.mean == pytest.approx(np.sqrt(2 / np.pi), abs=1e-8)
        assert m.entropy == pytest.approx(0.72579, abs=1e-5)

    def test_against_scipy(self):
        a, b = -0.3, 1.7
        ref = stats.truncnorm(a, b)
        m = oracle.truncated_moments_entropy(0.0, 1.0, (a, b))
        assert m.mean == pytest.approx(ref.mean(), abs=1e-9)
        assert m.var == pytest.approx(ref.var(), abs=1e-9)
        assert m.entropy == pytest.approx(ref.entropy(), abs=1e-8)

    def test_untruncated(self):
        m = oracle.truncated_moments_entropy(0.0, 1.0, (-np.inf, np.inf))
        assert m.Z == pytest.approx(1.0, abs=1e-12)
        assert m.mean == pytest.approx(0.0, abs=1e-12)
        assert m.var == pytest.approx(1.0, abs=1e-10)
        assert m.entropy == pytest.approx(0.5 * np.log(2 * np.pi * np.e), abs=1e-10)

    def test_mirror_symmetry(self):
        a = oracle.truncated_moments_entropy(0.0, 1.0, (0.0, np.inf)).entropy
        b = oracle.truncated_moments_entropy(0.0, 1.0, (-np.inf, 0.0)).entropy
        assert a == pytest.approx(b, abs=1e-12)

    def test_underflow(self):
        with pytest.raises(ValueError):
            oracle.truncated_moments_entropy(0.0, 1.0, (60.0, np.inf))


class TestConjugateEvidence:
    def test_closed_form(self):
        assert oracle.conjugate_evidence(1.0, 1.0, 0.4) == pytest.approx(stats.norm(0, np.sqrt(2)).logpdf(0.4), abs=1e-12)
        assert oracle.conjugate_evidence(1.0, 1.0, 0.4) == pytest.approx(-1.30551, abs=1e-5)

    def test_matches_quadrature(self):
        from wvgd.targets import ConjugateGaussianTarget

        tg = ConjugateGaussianTarget(0.4)
        val = oracle.log_evidence_1d(tg.log_joint, oracle.Quadrature1D(-12, 12, 8192))
        assert val == pytest.approx(oracle.conjugate_evidence(1.0, 1.0, 0.4), abs=1e-10)

    def test_maximized_at_zero_and_decreasing(self):
        xs = np.linspace(0, 3, 31)
        vals = [oracle.conjugate_evidence(1.0, 1.0, x) for x in xs]
        assert np.all(np.diff(vals) < 0)
        assert oracle.conjugate_evidence(1.0, 1.0, -0.7) == pytest.approx(oracle.conjugate_evidence(1.0, 1.0, 0.7))

    def test_bad_std(self):
        with pytest.raises(ValueError):
            oracle.conjugate_evidence(0.0, 1.0, 0.0)
