"""Sparse ground-plot simulation, ordinary kriging, and estimate ensembling.

This module reproduces the classical inventory workflow the drone census
competes with: circular plots on a regular grid, an exponential variogram
fitted to plot biomass, ordinary kriging of the biomass surface, and
inverse-variance ensembling of the census and interpolated estimates.

Variogram convention: gamma(h) = nugget + (sill - nugget) * (1 - exp(-3h/range)),
evaluated as-written everywhere including h = 0 (so gamma(0) = nugget).
With a zero nugget, kriging interpolates the plot values exactly and has
zero variance there.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit

from .errors import NonPositiveVariance, SingularSystem, TooFewPlots
from .grid import Grid, SampleType

DEFAULT_PLOT_RADIUS = 12.0  # meters, mid-range of field practice
MIN_PLOTS_FOR_VARIOGRAM = 10


@dataclass(frozen=True)
class GroundPlot:
    """One circular field plot and its measured biomass density."""

    x: float
    y: float
    radius_m: float
    biomass_mg_ha: float


@dataclass(frozen=True)
class VariogramModel:
    kind: str
    nugget: float
    sill: float
    range_m: float

    def __post_init__(self):
        if self.kind != "exponential":
            raise ValueError("only the exponential variogram is supported")
        if self.nugget < 0 or self.sill <= self.nugget or self.range_m <= 0:
            raise ValueError("need nugget >= 0, sill > nugget, range > 0")

    def __call__(self, h):
        h = np.asarray(h, dtype=np.float64)
        return self.nugget + (self.sill - self.nugget) * (1.0 - np.exp(-3.0 * h / self.range_m))


@dataclass(frozen=True)
class EnsembleEstimate:
    census: tuple[float, float]  # (mean Mg/ha, variance)
    interpolated: tuple[float, float]
    combined: tuple[float, float]
    weights: tuple[float, float]


@dataclass(frozen=True)
class ErrorReport:
    bias_mg_ha: float
    rmse_pct: float
    within_ci: bool | None


def sample_plots(positions, agb_kg, bounds, spacing_m, radius_m=DEFAULT_PLOT_RADIUS,
                 enforce_radius_range=True):
    """Simulate a regular-grid ground campaign over a known tree list.

    positions: (n, 2) stem coordinates; agb_kg: (n,) per-tree biomass;
    bounds: (min_x, min_y, max_x, max_y).  Plot centers sit on a grid at
    `spacing_m` starting half a spacing from the edge.  Plot biomass is
    the summed AGB of stems inside the disc divided by the disc area.
    """
    if enforce_radius_range and not 7.0 <= radius_m <= 15.0:
        raise ValueError(
            f"plot radius {radius_m} m outside field practice [7, 15]; "
            "pass enforce_radius_range=False to override"
        )
    if spacing_m <= 0:
        raise ValueError("spacing must be positive")
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    agb_kg = np.asarray(agb_kg, dtype=np.float64)
    x0, y0, x1, y1 = bounds
    xs = np.arange(x0 + spacing_m / 2.0, x1, spacing_m)
    ys = np.arange(y0 + spacing_m / 2.0, y1, spacing_m)
    area_ha = math.pi * radius_m**2 / 1e4
    plots = []
    for y in ys:
        for x in xs:
            if positions.size:
                d2 = (positions[:, 0] - x) ** 2 + (positions[:, 1] - y) ** 2
                inside = d2 <= radius_m**2
                total_mg = float(agb_kg[inside].sum()) / 1000.0
            else:
                total_mg = 0.0
            plots.append(GroundPlot(float(x), float(y), radius_m, total_mg / area_ha))
    return plots


def empirical_semivariogram(plots, n_bins=10):
    """Binned (distance, semivariance, pair count) from plot values."""
    pts = np.asarray([(p.x, p.y) for p in plots], dtype=np.float64)
    z = np.asarray([p.biomass_mg_ha for p in plots], dtype=np.float64)
    n = len(plots)
    iu = np.triu_indices(n, k=1)
    d = np.hypot(pts[iu[0], 0] - pts[iu[1], 0], pts[iu[0], 1] - pts[iu[1], 1])
    sq = 0.5 * (z[iu[0]] - z[iu[1]]) ** 2
    cutoff = d.max() / 2.0 if d.size else 1.0
    edges = np.linspace(0.0, cutoff, n_bins + 1)
    lags, gammas, counts = [], [], []
    for i in range(n_bins):
        sel = (d > edges[i]) & (d <= edges[i + 1])
        if sel.any():
            lags.append(d[sel].mean())
            gammas.append(sq[sel].mean())
            counts.append(int(sel.sum()))
    return np.asarray(lags), np.asarray(gammas), np.asarray(counts)


def fit_variogram(plots, n_bins=10):
    """Least-squares exponential fit to the empirical semivariogram."""
    if len(plots) < MIN_PLOTS_FOR_VARIOGRAM:
        raise TooFewPlots(f"{len(plots)} plots; need >= {MIN_PLOTS_FOR_VARIOGRAM}")
    lags, gammas, _ = empirical_semivariogram(plots, n_bins=n_bins)
    if lags.size == 0:
        raise TooFewPlots("no pairwise distances to bin")
    span = float(lags.max())
    psill0 = max(float(gammas.max() - gammas.min()), 1e-9)
    p0 = (max(float(gammas.min()), 0.0), psill0, span / 2.0)

    def model(h, nugget, psill, range_m):
        return nugget + psill * (1.0 - np.exp(-3.0 * h / range_m))

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", OptimizeWarning)
            popt, _ = curve_fit(
                model, lags, gammas, p0=p0,
                bounds=([0.0, 1e-12, span * 1e-3], [np.inf, np.inf, span * 100.0]),
                maxfev=20000,
            )
        nugget, psill, range_m = (float(v) for v in popt)
    except (RuntimeError, ValueError):
        nugget, psill, range_m = p0[0], max(p0[1], 1e-9), max(p0[2], 1e-6)
    return VariogramModel("exponential", nugget, nugget + max(psill, 1e-12), range_m)


def _kriging_matrix(pts, model):
    n = len(pts)
    dx = pts[:, 0:1] - pts[:, 0:1].T
    dy = pts[:, 1:2] - pts[:, 1:2].T
    a = np.empty((n + 1, n + 1), dtype=np.float64)
    a[:n, :n] = model(np.hypot(dx, dy))
    a[n, :] = 1.0
    a[:, n] = 1.0
    a[n, n] = 0.0
    return a


def krige(plots, model, template, chunk=65536):
    """Ordinary kriging of plot biomass onto a grid template.

    Returns (mean, variance) Float32 grids on the template geometry.
    Weights sum to one at every cell; the variance is w . gamma0 + mu,
    clamped at zero against rounding.
    """
    if len(plots) < 3:
        raise TooFewPlots(f"{len(plots)} plots; kriging needs >= 3")
    pts = np.asarray([(p.x, p.y) for p in plots], dtype=np.float64)
    if len(np.unique(pts, axis=0)) != len(pts):
        raise SingularSystem("duplicate plot coordinates")
    z = np.asarray([p.biomass_mg_ha for p in plots], dtype=np.float64)
    n = len(plots)
    a = _kriging_matrix(pts, model)
    try:
        from scipy.linalg import lu_factor, lu_solve

        lu = lu_factor(a)
        if not np.isfinite(lu[0]).all():
            raise SingularSystem("kriging system is singular")

        def solve(rhs):
            return lu_solve(lu, rhs)

    except np.linalg.LinAlgError as e:  # pragma: no cover - lu_factor rarely raises
        raise SingularSystem(str(e)) from None

    h = template.header
    cols = np.arange(h.width, dtype=np.float64)
    rows = np.arange(h.height, dtype=np.float64)
    cx = h.geotransform[0] + (cols + 0.5) * h.geotransform[2]
    cy = h.geotransform[1] + (rows + 0.5) * h.geotransform[3]
    xx, yy = np.meshgrid(cx, cy)
    qx = xx.ravel()
    qy = yy.ravel()
    mean = np.empty(qx.shape[0], dtype=np.float64)
    var = np.empty(qx.shape[0], dtype=np.float64)
    for start in range(0, qx.shape[0], chunk):
        sl = slice(start, min(start + chunk, qx.shape[0]))
        d = np.hypot(qx[sl][None, :] - pts[:, 0:1], qy[sl][None, :] - pts[:, 1:2])
        b = np.empty((n + 1, d.shape[1]), dtype=np.float64)
        b[:n] = model(d)
        b[n] = 1.0
        sol = solve(b)
        if not np.isfinite(sol).all():
            raise SingularSystem("kriging solution is not finite")
        w = sol[:n]
        mu = sol[n]
        mean[sl] = w.T @ z
        var[sl] = np.einsum("ij,ij->j", w, b[:n]) + mu
    var = np.maximum(var, 0.0)
    out_header = replace(h, sample_type=SampleType.FLOAT32, nodata=float("nan"))
    mean_grid = Grid(out_header, mean.reshape(h.height, h.width).astype(np.float32))
    var_grid = Grid(out_header, var.reshape(h.height, h.width).astype(np.float32))
    return mean_grid, var_grid


def kriging_weights(plots, model, x, y):
    """Weights, Lagrange multiplier, prediction and variance at one point."""
    pts = np.asarray([(p.x, p.y) for p in plots], dtype=np.float64)
    z = np.asarray([p.biomass_mg_ha for p in plots], dtype=np.float64)
    n = len(plots)
    a = _kriging_matrix(pts, model)
    b = np.empty(n + 1)
    b[:n] = model(np.hypot(pts[:, 0] - x, pts[:, 1] - y))
    b[n] = 1.0
    sol = np.linalg.solve(a, b)
    w, mu = sol[:n], float(sol[n])
    return w, mu, float(w @ z), max(float(w @ b[:n] + mu), 0.0)


def census_variance(agb_kg, area_ha, recall=0.9):
    """Variance model for the drone census biomass density (Mg/ha)^2.

    Treats detection as Bernoulli(recall) per tree and propagates the
    plug-in per-tree biomass: var = (1-recall)/recall * sum((agb_i/1000)^2)
    / area^2.  Decreases monotonically as recall rises; zero at recall 1.
    """
    if not 0.0 < recall <= 1.0:
        raise ValueError("recall must be in (0, 1]")
    agb_mg = np.asarray(agb_kg, dtype=np.float64) / 1000.0
    return float((1.0 - recall) / recall * np.sum(agb_mg**2) / area_ha**2)


def ensemble(census_mean, census_var, interp_mean, interp_var):
    """Inverse-variance weighting of the census and interpolated estimates."""
    if census_var <= 0 or interp_var <= 0:
        raise NonPositiveVariance(f"variances ({census_var}, {interp_var})")
    w1 = 1.0 / census_var
    w2 = 1.0 / interp_var
    total = w1 + w2
    combined_mean = (census_mean * w1 + interp_mean * w2) / total
    combined_var = 1.0 / total
    return EnsembleEstimate(
        census=(census_mean, census_var),
        interpolated=(interp_mean, interp_var),
        combined=(combined_mean, combined_var),
        weights=(w1 / total, w2 / total),
    )


def error_report(estimate_mg_ha, truth_mg_ha, variance=None):
    """Bias and percent error of an estimate against known truth."""
    bias = estimate_mg_ha - truth_mg_ha
    rmse_pct = 100.0 * abs(bias) / truth_mg_ha if truth_mg_ha else float("inf")
    within = None
    if variance is not None:
        within = abs(bias) <= 1.96 * math.sqrt(max(variance, 0.0))
    return ErrorReport(bias_mg_ha=bias, rmse_pct=rmse_pct, within_ci=within)
