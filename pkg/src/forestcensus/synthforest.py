"""Synthetic forest scenes with exact ground truth.

Trees are placed by Matérn type-II hard-core thinning of a Poisson process
(minimum spacing = hardcore_factor x mean crown diameter, with the parent
intensity inverted so the *realized* density matches the request).  Heights
are lognormal; DBH follows a height power law; crown diameter comes from
the inverse of the same crown-to-DBH bridge the estimation side uses, so
truth and estimate share one allometry registry and disagreements isolate
geometry errors.

Rendering: the DEM is a sum of low-frequency sinusoids; each crown is a
truncated paraboloid (apex = tree height, falling to crown_base_fraction x
height at the rim) composited by max(); spectral bands paint the species
centroid of the visible (tallest) crown plus Gaussian noise.

Everything is driven by a counter-based generator (Philox) keyed on the
scene seed, so output is deterministic across platforms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace as dc_replace

import numpy as np
from scipy.spatial import cKDTree

from .allometry import (
    SpeciesParams,
    agb,
    carbon_and_co2e,
    default_models,
    stand_totals,
    TreeBiomass,
)
from .grid import Grid, RasterHeader, SampleType
from .spectral import SpectralSignature

MAX_HARDCORE_FILL = 0.98  # of the Matérn-II jamming intensity


@dataclass(frozen=True)
class SpeciesMixEntry:
    params: SpeciesParams
    signature: SpectralSignature
    proportion: float


@dataclass(frozen=True)
class SynthParams:
    seed: int
    extent: tuple[float, float] = (200.0, 200.0)  # meters (width, height)
    resolution: float = 0.25  # m/px
    stems_per_ha: float = 150.0
    species_mix: tuple = ()
    height_mu: float = math.log(18.0)  # lognormal of height in meters
    height_sigma: float = 0.25
    height_range: tuple[float, float] = (5.0, 60.0)
    height_dbh_a: float = 0.8  # dbh_cm = a * height^b
    height_dbh_b: float = 1.3
    crown_base_fraction: float = 0.35  # crown rim height / tree height
    hardcore_factor: float = 0.4  # min spacing / mean crown diameter
    terrain_waves: int = 3
    terrain_amplitude: float = 8.0
    base_elevation: float = 500.0
    density_wave_amplitude: float = 0.0  # relative stem-density modulation
    density_wave_length: float = 400.0
    spectral_noise: float = 0.0
    ground_signature: tuple = (0.30, 0.25, 0.20, 0.32)
    crs_tag: str = "EPSG:32718"

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        if self.stems_per_ha < 0:
            raise ValueError("stems_per_ha must be >= 0")
        if self.species_mix:
            total = sum(e.proportion for e in self.species_mix)
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"species proportions sum to {total}, not 1")
        if not 0.0 <= self.crown_base_fraction < 1.0:
            raise ValueError("crown_base_fraction must be in [0, 1)")
        if not 0.0 <= self.density_wave_amplitude < 1.0:
            raise ValueError("density_wave_amplitude must be in [0, 1)")


def default_species_mix(crown_dbh_a=3.48, crown_dbh_b=1.20):
    """Three spectrally separated synthetic species with plausible wood.

    The crown-to-DBH bridge coefficients are scene knobs: they set how
    wide crowns are relative to stem diameter, and flow into the scene's
    signature file so estimation uses the same bridge.
    """
    rows = [
        (1, "emergente", (0.10, 0.35, 0.08, 0.75), 0.55, 0.45),
        (2, "dosel", (0.16, 0.28, 0.12, 0.60), 0.65, 0.35),
        (3, "palma", (0.22, 0.42, 0.10, 0.85), 0.45, 0.20),
    ]
    mix = []
    for sid, label, centroid, density, prop in rows:
        mix.append(
            SpeciesMixEntry(
                params=SpeciesParams(sid, label, density, crown_dbh_a, crown_dbh_b),
                signature=SpectralSignature(sid, label, centroid),
                proportion=prop,
            )
        )
    return tuple(mix)


@dataclass(frozen=True)
class TruthTree:
    tree_id: int
    x: float
    y: float
    height_m: float
    crown_diameter_m: float
    dbh_cm: float
    species_id: int
    agb_kg: float


@dataclass(frozen=True)
class GroundTruth:
    trees: tuple
    terrain: Grid
    params: SynthParams
    model_id: str
    totals: object  # StandCarbon

    @property
    def area_ha(self):
        return self.params.extent[0] * self.params.extent[1] / 1e4


def _streams(seed):
    children = np.random.SeedSequence(seed).spawn(6)
    return {
        name: np.random.Generator(np.random.Philox(child))
        for name, child in zip(
            ("probe", "positions", "marks", "attrs", "terrain", "noise"), children
        )
    }


def _draw_attributes(rng, n, params, by_id):
    """Species ids, heights, dbh and crown diameters for n trees."""
    mix = params.species_mix
    props = np.asarray([e.proportion for e in mix])
    ids = np.asarray([e.params.species_id for e in mix])
    species = rng.choice(ids, size=n, p=props)
    heights = np.exp(rng.normal(params.height_mu, params.height_sigma, size=n))
    heights = np.clip(heights, params.height_range[0], params.height_range[1])
    dbh = params.height_dbh_a * heights**params.height_dbh_b
    crowns = np.empty(n, dtype=np.float64)
    for sid in ids:
        sel = species == sid
        sp = by_id[sid]
        crowns[sel] = (dbh[sel] / sp.crown_dbh_a) ** (1.0 / sp.crown_dbh_b)
    return species, heights, dbh, crowns


def _density_factor(x, y, params, phases):
    if params.density_wave_amplitude == 0.0:
        return np.ones_like(np.asarray(x, dtype=np.float64))
    k = 2.0 * math.pi / params.density_wave_length
    wave = np.sin(k * x + phases[0]) * np.sin(k * y + phases[1])
    return 1.0 + params.density_wave_amplitude * wave


def generate(params, model=None):
    """Generate ground truth: tree list, terrain, and closed-form totals."""
    if model is None:
        model = default_models()["tropical_with_height"]
    if not params.species_mix:
        params = dc_replace(params, species_mix=default_species_mix())
    by_id = {e.params.species_id: e.params for e in params.species_mix}
    streams = _streams(params.seed)
    width_m, height_m = params.extent
    area_m2 = width_m * height_m
    terrain = _render_terrain(params, streams["terrain"])

    if params.stems_per_ha == 0 or area_m2 == 0:
        totals = stand_totals([], max(area_m2 / 1e4, 1e-9))
        return GroundTruth((), terrain, params, model.model_id, totals)

    # probe draw fixes the hard-core radius from the attribute distribution
    _, _, _, probe_crowns = _draw_attributes(streams["probe"], 2048, params, by_id)
    r_hc = params.hardcore_factor * float(probe_crowns.mean())

    lam_target = params.stems_per_ha / 1e4  # stems per m^2
    disc = math.pi * r_hc**2
    peak = lam_target * (1.0 + params.density_wave_amplitude) * disc
    if peak >= MAX_HARDCORE_FILL:
        raise ValueError(
            f"requested density {params.stems_per_ha}/ha is unreachable under "
            f"hard-core spacing {r_hc:.2f} m (fill {peak:.2f} >= {MAX_HARDCORE_FILL})"
        )

    def invert(lam):
        # parent intensity whose Matérn-II thinning realizes `lam`
        return -np.log1p(-lam * disc) / disc

    lam_parent_max = float(invert(lam_target * (1.0 + params.density_wave_amplitude)))
    rng_pos = streams["positions"]
    n_parents = rng_pos.poisson(lam_parent_max * area_m2)
    xs = rng_pos.uniform(0.0, width_m, size=n_parents)
    ys = rng_pos.uniform(0.0, height_m, size=n_parents)
    phases = rng_pos.uniform(0.0, 2.0 * math.pi, size=2)
    keep_p = invert(lam_target * _density_factor(xs, ys, params, phases)) / lam_parent_max
    kept = rng_pos.random(n_parents) < keep_p
    xs, ys = xs[kept], ys[kept]

    marks = streams["marks"].random(xs.shape[0])
    survive = np.ones(xs.shape[0], dtype=bool)
    if xs.shape[0] and r_hc > 0:
        tree_index = cKDTree(np.column_stack([xs, ys]))
        pairs = tree_index.query_pairs(r_hc, output_type="ndarray")
        if pairs.size:
            i, j = pairs[:, 0], pairs[:, 1]
            losers = np.where(
                (marks[i] < marks[j]) | ((marks[i] == marks[j]) & (i < j)), j, i
            )
            survive[losers] = False
    xs, ys = xs[survive], ys[survive]

    n = xs.shape[0]
    species, heights, dbh, crowns = _draw_attributes(streams["attrs"], n, params, by_id)
    trees = []
    biomasses = []
    for i in range(n):
        sp = by_id[int(species[i])]
        mass = agb(float(dbh[i]), float(heights[i]), sp.wood_density, model)
        trees.append(
            TruthTree(
                tree_id=i + 1,
                x=float(xs[i]),
                y=float(ys[i]),
                height_m=float(heights[i]),
                crown_diameter_m=float(crowns[i]),
                dbh_cm=float(dbh[i]),
                species_id=int(species[i]),
                agb_kg=mass,
            )
        )
        carbon, co2e = carbon_and_co2e(mass)
        biomasses.append(TreeBiomass(i + 1, float(dbh[i]), mass, carbon, co2e))
    totals = stand_totals(biomasses, area_m2 / 1e4)
    return GroundTruth(tuple(trees), terrain, params, model.model_id, totals)


def _scene_header(params):
    width = max(1, round(params.extent[0] / params.resolution))
    height = max(1, round(params.extent[1] / params.resolution))
    return RasterHeader(
        width=width,
        height=height,
        sample_type=SampleType.FLOAT32,
        nodata=None,
        geotransform=(0.0, height * params.resolution, params.resolution, -params.resolution),
        crs_tag=params.crs_tag,
    )


def _pixel_centers(header):
    xs = (np.arange(header.width, dtype=np.float64) + 0.5) * header.geotransform[2]
    ys = header.geotransform[1] + (np.arange(header.height, dtype=np.float64) + 0.5) * header.geotransform[3]
    return xs, ys


def _render_terrain(params, rng):
    header = _scene_header(params)
    xs, ys = _pixel_centers(header)
    z = np.full((header.height, header.width), params.base_elevation, dtype=np.float64)
    span = max(params.extent)
    for _ in range(params.terrain_waves):
        wavelength = rng.uniform(span / 4.0, span)
        theta = rng.uniform(0.0, 2.0 * math.pi)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        k = 2.0 * math.pi / wavelength
        amp = params.terrain_amplitude / max(params.terrain_waves, 1)
        # sin(a + b) expanded to outer products of per-axis vectors keeps
        # the trig on O(w + h) elements instead of O(w * h)
        a = k * np.cos(theta) * xs
        b = k * np.sin(theta) * ys + phase
        z += amp * (np.outer(np.cos(b), np.sin(a)) + np.outer(np.sin(b), np.cos(a)))
    return Grid(header, z.astype(np.float32))


def render(truth, threads=1):
    """Rasterize a ground truth into co-registered DSM/DEM/RGB-NIR grids.

    Returns a dict with keys dsm, dem, red, green, blue, nir.  All grids
    share one geotransform and CRS.  dsm >= dem everywhere by
    construction.
    """
    params = truth.params
    header = truth.terrain.header
    h, w = header.height, header.width
    res = params.resolution
    extent_h = header.geotransform[1]

    canopy = np.zeros((h, w), dtype=np.float32)
    species_px = np.zeros((h, w), dtype=np.uint8)
    base = params.crown_base_fraction
    for tree in truth.trees:
        radius = tree.crown_diameter_m / 2.0
        if radius <= 0:
            continue
        c0 = max(0, int((tree.x - radius) / res - 1))
        c1 = min(w, int((tree.x + radius) / res + 2))
        r0 = max(0, int((extent_h - tree.y - radius) / res - 1))
        r1 = min(h, int((extent_h - tree.y + radius) / res + 2))
        if c0 >= c1 or r0 >= r1:
            continue
        px = (np.arange(c0, c1, dtype=np.float64) + 0.5) * res
        py = extent_h - (np.arange(r0, r1, dtype=np.float64) + 0.5) * res
        d2 = (px[None, :] - tree.x) ** 2 + (py[:, None] - tree.y) ** 2
        inside = d2 <= radius**2
        z = tree.height_m * (1.0 - (1.0 - base) * d2 / radius**2)
        z = np.where(inside, z, 0.0).astype(np.float32)
        patch = canopy[r0:r1, c0:c1]
        taller = z > patch
        patch[taller] = z[taller]
        species_px[r0:r1, c0:c1][taller] = tree.species_id

    dem = truth.terrain
    dsm = Grid(header, dem.samples + canopy)

    sig_by_id = {e.signature.species_id: e.signature.centroid for e in params.species_mix}
    ground = params.ground_signature
    rng = _streams(params.seed)["noise"]
    bands = {}
    for bi, name in enumerate(("red", "green", "blue", "nir")):
        values = np.full((h, w), ground[bi], dtype=np.float32)
        for sid, centroid in sig_by_id.items():
            values[species_px == sid] = centroid[bi]
        if params.spectral_noise > 0:
            noise = rng.normal(0.0, params.spectral_noise, size=(h, w)).astype(np.float32)
            values = values + noise
        bands[name] = Grid(header, np.clip(values, 0.0, 1.0))
    return {"dsm": dsm, "dem": dem, **bands}


def signature_rows(params):
    """Signature-file rows (see spectral.load_signature_csv) for the mix."""
    rows = []
    for e in params.species_mix:
        rows.append(
            dict(
                species_id=e.params.species_id,
                label=e.params.label,
                centroid=e.signature.centroid,
                wood_density=e.params.wood_density,
                crown_dbh_a=e.params.crown_dbh_a,
                crown_dbh_b=e.params.crown_dbh_b,
            )
        )
    return rows
