"""Ground plots, variogram fitting, ordinary kriging, and ensembling."""

import math

import numpy as np
import pytest

from forestcensus.errors import NonPositiveVariance, SingularSystem, TooFewPlots
from forestcensus.grid import Grid, RasterHeader, SampleType
from forestcensus.spatial import (
    GroundPlot,
    VariogramModel,
    census_variance,
    ensemble,
    error_report,
    fit_variogram,
    krige,
    kriging_weights,
    sample_plots,
)


def template(width, height, gt):
    header = RasterHeader(width, height, SampleType.FLOAT32, geotransform=gt)
    return Grid(header, np.zeros((height, width), dtype=np.float32))


class TestSamplePlots:
    def test_empty_forest_all_zero(self):
        plots = sample_plots(np.empty((0, 2)), [], (0, 0, 300, 300), 100.0)
        assert len(plots) == 9
        assert all(p.biomass_mg_ha == 0.0 for p in plots)

    def test_single_tree_inside_plot(self):
        # plot grid spacing 100 over 100x100 -> one plot at (50, 50)
        plots = sample_plots([(52.0, 50.0)], [1000.0], (0, 0, 100, 100), 100.0, radius_m=12.0)
        assert len(plots) == 1
        area_ha = math.pi * 144.0 / 1e4
        assert plots[0].biomass_mg_ha == pytest.approx(1.0 / area_ha)

    def test_matches_brute_force_disc_scan(self, rng):
        pos = rng.uniform(0, 400, (300, 2))
        agb = rng.uniform(10, 2000, 300)
        plots = sample_plots(pos, agb, (0, 0, 400, 400), 120.0, radius_m=11.0)
        for p in plots:
            total = sum(
                a for (x, y), a in zip(pos, agb)
                if (x - p.x) ** 2 + (y - p.y) ** 2 <= 11.0**2
            )
            expect = total / 1000.0 / (math.pi * 121.0 / 1e4)
            assert p.biomass_mg_ha == pytest.approx(expect, rel=1e-9)

    def test_radius_range_enforced(self):
        with pytest.raises(ValueError, match="radius"):
            sample_plots([], [], (0, 0, 100, 100), 50.0, radius_m=30.0)
        plots = sample_plots([], [], (0, 0, 100, 100), 50.0, radius_m=30.0,
                             enforce_radius_range=False)
        assert plots


class TestVariogram:
    def grid_plots(self, values, spacing=30.0):
        n = values.shape[0]
        return [
            GroundPlot(spacing * (i % n), spacing * (i // n), 12.0, float(values[i // n, i % n]))
            for i in range(n * n)
        ]

    def test_constant_plots_near_zero_structure(self):
        plots = self.grid_plots(np.full((5, 5), 42.0))
        model = fit_variogram(plots)
        assert model.sill - model.nugget <= 1e-6
        assert model.nugget <= 1e-9

    def test_too_few_plots(self):
        plots = self.grid_plots(np.zeros((2, 2)))[:5]
        with pytest.raises(TooFewPlots):
            fit_variogram(plots)

    def test_gamma_at_zero_is_nugget(self):
        m = VariogramModel("exponential", nugget=1.5, sill=10.0, range_m=100.0)
        assert float(m(0.0)) == pytest.approx(1.5)
        assert float(m(1e9)) == pytest.approx(10.0, rel=1e-6)

    def test_recovers_range_from_known_field(self):
        # Gaussian field with exponential covariance psill*exp(-3h/range)
        rng = np.random.default_rng(7)
        spacing, n = 25.0, 14
        xs, ys = np.meshgrid(np.arange(n) * spacing, np.arange(n) * spacing)
        pts = np.column_stack([xs.ravel(), ys.ravel()])
        true_range, psill = 150.0, 9.0
        d = np.hypot(pts[:, 0:1] - pts[None, :, 0], pts[:, 1:2] - pts[None, :, 1])
        cov = psill * np.exp(-3.0 * d / true_range)
        chol = np.linalg.cholesky(cov + 1e-10 * np.eye(len(pts)))
        errors = []
        for _ in range(5):
            z = chol @ rng.standard_normal(len(pts)) + 50.0
            plots = [GroundPlot(p[0], p[1], 12.0, v) for p, v in zip(pts, z)]
            model = fit_variogram(plots)
            errors.append(abs(model.range_m - true_range) / true_range)
        assert np.median(errors) <= 0.5


class TestKrige:
    PLOTS = [
        GroundPlot(10.0, 10.0, 12.0, 100.0),
        GroundPlot(90.0, 20.0, 12.0, 140.0),
        GroundPlot(50.0, 85.0, 12.0, 80.0),
    ]
    MODEL = VariogramModel("exponential", nugget=0.0, sill=400.0, range_m=120.0)

    def test_exact_interpolation_at_plot(self):
        # 1x1 template whose pixel center is exactly the first plot
        t = template(1, 1, (9.5, 10.5, 1.0, -1.0))
        mean, var = krige(self.PLOTS, self.MODEL, t)
        assert mean.samples[0, 0] == pytest.approx(100.0, abs=1e-4)
        assert var.samples[0, 0] == pytest.approx(0.0, abs=1e-6 * self.MODEL.sill)

    def test_constant_plots_constant_surface(self):
        plots = [GroundPlot(p.x, p.y, p.radius_m, 55.0) for p in self.PLOTS]
        t = template(12, 9, (0.0, 100.0, 10.0, -10.0))
        mean, _ = krige(plots, self.MODEL, t)
        assert np.allclose(mean.samples, 55.0, atol=1e-4)

    def test_weights_sum_to_one_everywhere(self, rng):
        t = template(20, 20, (0.0, 100.0, 5.0, -5.0))
        for _ in range(40):
            x, y = rng.uniform(0, 100, 2)
            w, mu, _, _ = kriging_weights(self.PLOTS, self.MODEL, float(x), float(y))
            assert abs(w.sum() - 1.0) < 1e-9

    def test_three_plot_system_matches_independent_solver(self):
        # independent dense solve of the 4x4 ordinary-kriging system
        query = (40.0, 30.0)
        pts = np.array([(p.x, p.y) for p in self.PLOTS])
        z = np.array([p.biomass_mg_ha for p in self.PLOTS])
        gamma = lambda h: 0.0 + 400.0 * (1.0 - np.exp(-3.0 * h / 120.0))
        a = np.ones((4, 4))
        for i in range(3):
            for j in range(3):
                a[i, j] = gamma(np.hypot(*(pts[i] - pts[j])))
        a[3, 3] = 0.0
        b = np.ones(4)
        for i in range(3):
            b[i] = gamma(np.hypot(pts[i, 0] - query[0], pts[i, 1] - query[1]))
        sol = np.linalg.solve(a, b)
        expect_pred = sol[:3] @ z
        expect_var = sol[:3] @ b[:3] + sol[3]

        w, mu, pred, var = kriging_weights(self.PLOTS, self.MODEL, *query)
        assert np.allclose(w, sol[:3], atol=1e-9)
        assert pred == pytest.approx(expect_pred, abs=1e-9)
        assert var == pytest.approx(expect_var, abs=1e-9)

    def test_duplicate_plots_rejected(self):
        plots = self.PLOTS + [GroundPlot(10.0, 10.0, 12.0, 101.0)]
        t = template(2, 2, (0.0, 100.0, 50.0, -50.0))
        with pytest.raises(SingularSystem):
            krige(plots, self.MODEL, t)

    def test_variance_nonnegative(self, rng):
        t = template(25, 25, (0.0, 100.0, 4.0, -4.0))
        _, var = krige(self.PLOTS, self.MODEL, t)
        assert np.all(var.samples >= 0.0)

    def test_nonzero_nugget_smooths_but_variance_positive(self):
        model = VariogramModel("exponential", nugget=30.0, sill=400.0, range_m=120.0)
        t = template(1, 1, (9.5, 10.5, 1.0, -1.0))
        _, var = krige(self.PLOTS, model, t)
        assert var.samples[0, 0] > 0.0


class TestEnsemble:
    def test_equal_variances_average(self):
        est = ensemble(10.0, 2.0, 20.0, 2.0)
        assert est.weights == (0.5, 0.5)
        assert est.combined[0] == pytest.approx(15.0)
        assert est.combined[1] == pytest.approx(1.0)

    def test_infinite_variance_limit(self):
        est = ensemble(10.0, 1.0, 99.0, 1e12)
        assert est.combined[0] == pytest.approx(10.0, abs=1e-9)

    def test_closed_form_example(self):
        # inverse-variance arithmetic: (10, 1) and (14, 4) -> (10.8, 0.8)
        est = ensemble(10.0, 1.0, 14.0, 4.0)
        assert est.combined[0] == pytest.approx(10.8)
        assert est.combined[1] == pytest.approx(0.8)

    def test_permutation_symmetry(self):
        a = ensemble(10.0, 1.0, 14.0, 4.0)
        b = ensemble(14.0, 4.0, 10.0, 1.0)
        assert a.combined == b.combined

    def test_combined_variance_below_components(self, rng):
        for _ in range(50):
            v1, v2 = rng.uniform(0.1, 100, 2)
            est = ensemble(0.0, float(v1), 1.0, float(v2))
            assert est.combined[1] <= min(v1, v2) + 1e-12

    def test_nonpositive_variance_rejected(self):
        with pytest.raises(NonPositiveVariance):
            ensemble(1.0, 0.0, 2.0, 1.0)


class TestCensusVariance:
    def test_monotone_in_recall(self, rng):
        agb = rng.uniform(10, 3000, 500)
        variances = [census_variance(agb, 4.0, r) for r in (0.5, 0.7, 0.9, 0.99, 1.0)]
        assert variances == sorted(variances, reverse=True)
        assert variances[-1] == 0.0


class TestErrorReport:
    def test_exact_estimate_zero_bias(self):
        rep = error_report(120.0, 120.0, variance=4.0)
        assert rep.bias_mg_ha == 0.0
        assert rep.rmse_pct == 0.0
        assert rep.within_ci is True

    def test_out_of_ci(self):
        rep = error_report(130.0, 100.0, variance=1.0)
        assert rep.within_ci is False
        assert rep.rmse_pct == pytest.approx(30.0)
