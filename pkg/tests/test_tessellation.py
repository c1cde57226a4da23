import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from wvgd import oracle
from wvgd.core import ParticleEnsemble, RngStream, SquaredEuclideanCost
from wvgd.tessellation import (
    StarvedCellError,
    Tessellation,
    assign_cell,
    estimate_weights,
    restricted_log_density,
)
from wvgd.varfit import VariationalComponent

from .conftest import se_close


def tess(points):
    return Tessellation.from_particles(np.asarray(points, dtype=float))


def comps_at(t, log_std=0.0):
    return [VariationalComponent.at_particle(z, j, log_std) for j, z in enumerate(t.particles)]


class TestAssignCell:
    def test_nearer_particle(self):
        assert assign_cell(tess([[-1.0], [1.0]]), [0.2]) == 1

    def test_tie_lowest_index(self):
        assert assign_cell(tess([[-1.0], [1.0]]), [0.0]) == 0

    def test_three_point_tie(self):
        assert assign_cell(tess([[0, 0], [3, 0], [0, 3]]), [2.0, 2.0]) == 1

    def test_empty(self):
        t = Tessellation.__new__(Tessellation)
        object.__setattr__(t, "ensemble", type("E", (), {"n": 0, "dim": 1, "particles": np.zeros((0, 1))})())
        object.__setattr__(t, "cost", SquaredEuclideanCost())
        with pytest.raises(ValueError):
            assign_cell(t, [0.0])

    def test_partition_of_unity(self):
        gen = RngStream(0).generator()
        t = tess(gen.normal(size=(6, 3)))
        z = gen.normal(scale=3.0, size=(10_000, 3))
        ind = np.stack([t.indicator(j, z) for j in range(t.n)])
        np.testing.assert_array_equal(ind.sum(axis=0), np.ones(10_000))

    @settings(max_examples=30, deadline=None)
    @given(st.floats(1e-3, 1e3), st.integers(0, 1000))
    def test_cost_scale_invariance(self, scale, seed):
        gen = RngStream(seed).generator()
        p = gen.normal(size=(5, 2))
        z = gen.normal(size=(200, 2))
        a = Tessellation(ParticleEnsemble(p)).assign(z)
        b = Tessellation(ParticleEnsemble(p), SquaredEuclideanCost(scale)).assign(z)
        np.testing.assert_array_equal(a, b)

    def test_voronoi(self):
        gen = RngStream(1).generator()
        p = gen.normal(size=(4, 2))
        z = gen.normal(size=(500, 2))
        d = np.linalg.norm(z[:, None, :] - p[None], axis=-1)
        np.testing.assert_array_equal(tess(p).assign(z), d.argmin(axis=1))


class TestRestrictedLogDensity:
    def test_inside(self, normal):
        val = restricted_log_density(tess([[0.0], [2.0]]), normal, 0, [0.5])
        assert val[0] == pytest.approx(-0.5**2 / 2 - np.log(np.sqrt(2 * np.pi)), abs=1e-12)
        assert val[0] == pytest.approx(-1.0439, abs=1e-4)

    def test_outside(self, normal):
        assert restricted_log_density(tess([[0.0], [2.0]]), normal, 1, [0.5])[0] == -np.inf

    def test_bad_index(self, normal):
        with pytest.raises(IndexError):
            restricted_log_density(tess([[0.0], [2.0]]), normal, 2, [0.5])


class TestEstimateWeights:
    def test_symmetric(self, normal):
        t = tess([[-1.0], [1.0]])
        w = estimate_weights(t, normal, comps_at(t), 2000, RngStream(0))
        np.testing.assert_allclose(w.weights, [0.5, 0.5], atol=0.02)
        assert w.weights.sum() == pytest.approx(1.0, abs=1e-12)

    def test_asymmetric(self, normal):
        t = tess([[0.0], [2.0]])
        w = estimate_weights(t, normal, comps_at(t), 2000, RngStream(1))
        np.testing.assert_allclose(w.weights, [stats.norm.cdf(1), stats.norm.sf(1)], atol=0.02)

    def test_single_cell_exact(self, mixtures):
        t = tess([[0.3]])
        w = estimate_weights(t, mixtures[0], comps_at(t), 100, RngStream(2))
        np.testing.assert_array_equal(w.weights, [1.0])

    def test_min_samples(self, normal):
        t = tess([[0.0], [2.0]])
        with pytest.raises(ValueError):
            estimate_weights(t, normal, comps_at(t), 50, RngStream(0))

    def test_agrees_with_quadrature(self, mixtures):
        for k, tg in enumerate(mixtures):
            z = np.sort(tg.mean + np.array([-0.8, 0.1, 0.9]))
            t = tess(z[:, None])
            w = estimate_weights(t, tg, comps_at(t, np.log(2.0)), 2000, RngStream(k))
            ref = oracle.cell_masses(z, tg.density, oracle.default_quadrature(tg))
            assert se_close(w.weights, ref, w.std_errors, floor=0.0)

    def test_ess_flags_narrow_proposal(self, mixtures):
        tg = mixtures[0]
        z = np.sort(tg.mean + np.array([-0.8, 0.1, 0.9]))
        t = tess(z[:, None])
        narrow = estimate_weights(t, tg, comps_at(t, -0.5), 2000, RngStream(0))
        wide = estimate_weights(t, tg, comps_at(t, np.log(2.0)), 2000, RngStream(0))
        assert narrow.ess.min() < 0.05 * 2000 < wide.ess.min()

    def test_se_shrinks_like_root_n(self, normal):
        t = tess([[0.0], [1.5]])
        se = [estimate_weights(t, normal, comps_at(t), n, RngStream(3)).std_errors[0] for n in (400, 6400)]
        assert se[0] / se[1] == pytest.approx(4.0, rel=0.25)

    def test_starved_cell(self, normal):
        t = tess([[0.0], [1.0]])
        far = [VariationalComponent.at_particle([0.0], 0), VariationalComponent([-40.0], [-3.0], 1)]
        with pytest.raises(StarvedCellError) as e:
            estimate_weights(t, normal, far, 200, RngStream(0))
        assert e.value.index == 1

    def test_deterministic(self, mixtures):
        t = tess([[-1.0], [0.5]])
        a = estimate_weights(t, mixtures[1], comps_at(t), 500, RngStream(4)).weights
        b = estimate_weights(t, mixtures[1], comps_at(t), 500, RngStream(4)).weights
        np.testing.assert_array_equal(a, b)

    def test_log_evidence(self, normal):
        t = tess([[-1.0], [0.3], [1.2]])
        w = estimate_weights(t, normal, comps_at(t), 4000, RngStream(5))
        assert w.log_evidence == pytest.approx(0.0, abs=0.05)
