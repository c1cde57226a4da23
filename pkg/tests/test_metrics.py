import numpy as np
import pytest
from scipy import stats

from wvgd import oracle
from wvgd.core import RngStream
from wvgd.dynamics import init_state, run
from wvgd.metrics import (
    BANDWIDTH_BOUNDS,
    fit_kde_bandwidth,
    kde_density,
    l2_error,
    refresh_normalizers,
    score_grid,
    score_kde,
    score_wvgd,
    wvgd_density,
)
from wvgd.tessellation import estimate_weights
from wvgd.varfit import VariationalComponent


def fitted(target, z0, steps=300, seed=0):
    res = run(init_state(np.asarray(z0, dtype=float)[:, None]), target, n_steps=steps, rng=RngStream(seed), record_every=0)
    st = refresh_normalizers(res.state, 4000, RngStream(seed).spawn(1))
    w = estimate_weights(st.tessellation(), target, st.components, 2000, RngStream(seed).spawn(2))
    return st, w


class TestWvgdDensity:
    def test_normalized(self, mixtures):
        for k, tg in enumerate(mixtures[:3]):
            st, w = fitted(tg, tg.mean + np.array([-1.0, 0.0, 1.0]), seed=k)
            q = oracle.Quadrature1D(*oracle.window_for(tg), 4001)
            assert q.integrate(lambda x: wvgd_density(st, w, x)) == pytest.approx(1.0, abs=0.02)

    def test_single_gaussian(self):
        st = init_state(np.array([[0.2]]))
        c = VariationalComponent(np.array([0.3]), np.array([-0.5]), 0)
        st = st.__class__(st.ensemble, (c,))
        z = np.linspace(-3, 3, 11)
        np.testing.assert_allclose(wvgd_density(st, np.ones(1), z), stats.norm.pdf(z, 0.3, np.exp(-0.5)), rtol=1e-12)

    def test_positive_inside(self, mixtures):
        st, w = fitted(mixtures[0], mixtures[0].mean + np.array([-1.0, 1.0]))
        grid = np.linspace(mixtures[0].mean - 2, mixtures[0].mean + 2, 101)
        assert np.all(wvgd_density(st, w, grid) > 0)

    def test_score_nonnegative(self, mixtures):
        st, w = fitted(mixtures[1], mixtures[1].mean + np.array([-1.0, 1.0]))
        assert score_wvgd(st, w, mixtures[1]).l2_error >= 0


class TestKde:
    def test_single_bump(self):
        z = np.linspace(-2, 2, 9)
        np.testing.assert_allclose(kde_density([0.5], 0.4, z), stats.norm.pdf(z, 0.5, 0.4), rtol=1e-12)

    def test_integrates_to_one(self):
        x = np.array([-1.0, 0.3, 2.0])
        q = oracle.Quadrature1D(-12, 12, 401)
        assert q.integrate(lambda z: kde_density(x, 0.6, z)) == pytest.approx(1.0, abs=1e-8)

    def test_symmetric(self):
        x = np.array([-1.5, -0.2, 0.2, 1.5])
        z = np.linspace(0, 4, 17)
        np.testing.assert_allclose(kde_density(x, 0.5, z), kde_density(x, 0.5, -z), rtol=1e-12)

    def test_positive_bandwidth(self):
        with pytest.raises(ValueError):
            kde_density([0.0], 0.0, 0.0)


class TestBandwidthFit:
    def test_beats_endpoints_and_scan(self, mixtures):
        for k, tg in enumerate(mixtures):
            x = np.sort(RngStream(k).generator().normal(tg.mean, 1.0, 15))
            grid = score_grid(tg)
            bw = fit_kde_bandwidth(x, tg.density, grid)
            err = lambda b: l2_error(kde_density(x, b, grid), tg.density, grid)
            assert err(bw) <= err(BANDWIDTH_BOUNDS[0]) + 1e-15
            assert err(bw) <= err(BANDWIDTH_BOUNDS[1]) + 1e-15
            scan = np.exp(np.linspace(*np.log(BANDWIDTH_BOUNDS), 20))
            best = scan[np.argmin([err(b) for b in scan])]
            assert err(bw) <= err(best) * 1.05

    def test_degenerate(self, normal):
        assert fit_kde_bandwidth(np.zeros(3), normal.density, score_grid(normal)) == BANDWIDTH_BOUNDS[0]

    def test_consistency(self, normal):
        errs = []
        for n in (10, 100, 1000):
            # average over seeds; a single small sample can land unusually close
            errs.append(np.mean([score_kde(RngStream(s).spawn(n).generator().standard_normal(n), normal)[0].l2_error
                                 for s in range(10)]))
        assert errs[0] > errs[1] > errs[2]


class TestL2:
    def test_self_zero(self, normal):
        grid = score_grid(normal)
        assert l2_error(normal.density, normal.density, grid) == 0.0

    def test_symmetric_and_positive(self, normal):
        grid = score_grid(normal)
        other = lambda z: stats.norm.pdf(z, 0.3, 1.2)
        a = l2_error(normal.density, other, grid)
        assert a > 0 and a == pytest.approx(l2_error(other, normal.density, grid), rel=1e-14)

    def test_matches_closed_form(self):
        # int (N(0,1) - N(m,1))^2 = (1 - exp(-m^2/4)) / sqrt(pi)
        grid = np.linspace(-12, 12, 2048)
        m = 0.7
        ref = (1 - np.exp(-m**2 / 4)) / np.sqrt(np.pi)
        assert l2_error(stats.norm(0, 1).pdf, stats.norm(m, 1).pdf, grid) == pytest.approx(ref, rel=1e-5)
