"""End-to-end pipeline orchestration behind the CLI subcommands.

`run_inventory` turns co-registered rasters into the inventory artifact set
(chm.tif, species.tif, crowns.geojson, trees.csv, stand_carbon.json,
manifest.json).  `run_benchmark` generates synthetic scenes with known
truth and scores the drone census against sparse-plot kriging and their
ensemble.  All artifacts are deterministic for a fixed config; the
manifest lists every output with its checksum (manifest timings are the
one intentionally non-deterministic field).
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .allometry import (
    SpeciesParams,
    default_models,
    load_model_registry,
    stand_totals,
    tree_biomass,
)
from .chm import ChmParams, derive_chm
from .crowns import CrownParams, census, crown_labels, detect_treetops, watershed_crowns
from .economics import (
    DEFAULT_OFFSET_MODELS,
    DEFAULT_SURVEY_MODELS,
    OffsetCostModel,
    SurveyCostModel,
    compare,
    comparison_table,
    survey_cost,
)
from .errors import ConfigError
from .geotiff import read_geotiff, write_geotiff
from .grid import Grid
from .gridops import align
from .internal import read_internal, write_internal
from .reports import (
    crowns_geojson,
    dump_json,
    plots_csv,
    render_heatmap,
    stand_carbon_json,
    trees_csv,
)
from .spatial import (
    census_variance,
    ensemble,
    error_report,
    fit_variogram,
    krige,
    sample_plots,
)
from .spectral import (
    classify_pixels,
    load_signature_csv,
    majority_filter,
)
from .synthforest import SynthParams, default_species_mix, generate, render, signature_rows
from .grid import RasterHeader, SampleType


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------


def read_raster_file(path, band=None):
    data = Path(path).read_bytes()
    if data[:4] == b"CCR1":
        return read_internal(data)
    return read_geotiff(data, band=band)


def write_raster_file(path, grid):
    path = Path(path)
    if path.suffix == ".ccr":
        path.write_bytes(write_internal(grid))
    else:
        path.write_bytes(write_geotiff(grid))


def _sha256(data):
    return hashlib.sha256(data).hexdigest()


class _StageClock:
    def __init__(self):
        self.stages = []

    def run(self, name, fn, *args, **kwargs):
        t0 = time.perf_counter()
        result = fn(*args, **kwargs)
        self.stages.append({"stage": name, "seconds": round(time.perf_counter() - t0, 3)})
        return result


# ---------------------------------------------------------------------------
# Config -> parameter blocks
# ---------------------------------------------------------------------------


def _as_config_error(fn, *args, **kwargs):
    """Parameter-domain violations and unparseable referenced files are
    configuration errors, not stage bugs."""
    try:
        return fn(*args, **kwargs)
    except (ValueError, KeyError) as e:
        raise ConfigError(str(e)) from None


def chm_params_from(cfg):
    return _as_config_error(
        ChmParams,
        clamp_negative=cfg.get_bool("chm", "clamp_negative", True),
        max_plausible_height=cfg.get_float("chm", "max_height", 90.0),
        smooth_radius=cfg.get_int("chm", "smooth_radius", 1),
    )


def crown_params_from(cfg):
    return _as_config_error(
        CrownParams,
        min_tree_height=cfg.get_float("crowns", "min_tree_height", 3.0),
        window_fraction=cfg.get_float("crowns", "window_fraction", 0.10),
        min_window_radius=cfg.get_float("crowns", "min_window_radius", 1.0),
        crown_floor_fraction=cfg.get_float("crowns", "crown_floor_fraction", 0.3),
    )


def synth_params_from(cfg, seed=None):
    height_median = cfg.get_float("synth", "height_median", 18.0)
    mix = _as_config_error(
        default_species_mix,
        crown_dbh_a=cfg.get_float("synth", "crown_dbh_a", 3.48),
        crown_dbh_b=cfg.get_float("synth", "crown_dbh_b", 1.20),
    )
    return _as_config_error(
        SynthParams,
        seed=seed if seed is not None else cfg.get_int("synth", "seed", 0),
        species_mix=mix,
        extent=(
            cfg.get_float("synth", "extent_w", 200.0),
            cfg.get_float("synth", "extent_h", 200.0),
        ),
        resolution=cfg.get_float("synth", "resolution", 0.25),
        stems_per_ha=cfg.get_float("synth", "stems_per_ha", 150.0),
        height_mu=math.log(height_median),
        height_sigma=cfg.get_float("synth", "height_sigma", 0.25),
        height_range=(
            cfg.get_float("synth", "height_min", 5.0),
            cfg.get_float("synth", "height_max", 60.0),
        ),
        height_dbh_a=cfg.get_float("synth", "height_dbh_a", 0.8),
        height_dbh_b=cfg.get_float("synth", "height_dbh_b", 1.3),
        crown_base_fraction=cfg.get_float("synth", "crown_base_fraction", 0.35),
        hardcore_factor=cfg.get_float("synth", "hardcore_factor", 0.4),
        terrain_waves=cfg.get_int("synth", "terrain_waves", 3),
        terrain_amplitude=cfg.get_float("synth", "terrain_amplitude", 8.0),
        base_elevation=cfg.get_float("synth", "base_elevation", 500.0),
        density_wave_amplitude=cfg.get_float("synth", "density_wave_amplitude", 0.0),
        density_wave_length=cfg.get_float("synth", "density_wave_length", 400.0),
        spectral_noise=cfg.get_float("synth", "spectral_noise", 0.0),
        crs_tag=cfg.get("synth", "crs_tag", "EPSG:32718"),
    )


def load_cost_models_file(text):
    """Cost models CSV: one file for both survey and offset rows.

    Columns: kind,method,usd_per_ha,ha_per_mission,hours_per_mission,
    usd_per_tco2_low,usd_per_tco2_high,basis (blank where not applicable).
    """
    surveys, offsets = {}, []
    reader = csv.DictReader(io.StringIO(text))
    for row in reader:
        kind = (row.get("kind") or "").strip()
        if kind == "survey":
            model = SurveyCostModel(
                row["method"],
                float(row["usd_per_ha"]),
                float(row["ha_per_mission"]),
                float(row["hours_per_mission"]),
            )
            surveys[model.method] = model
        elif kind == "offset":
            offsets.append(
                OffsetCostModel(
                    row["method"],
                    float(row["usd_per_tco2_low"]),
                    float(row["usd_per_tco2_high"]),
                    basis=(row.get("basis") or "").strip(),
                )
            )
        else:
            raise ConfigError(f"cost models file: unknown kind {kind!r}")
    return surveys, offsets


# ---------------------------------------------------------------------------
# Shared census core
# ---------------------------------------------------------------------------


@dataclass
class InventoryResult:
    chm: Grid
    species: Grid
    labels: object
    crowns: list
    biomass_by_id: dict
    stand: object
    summary: object
    species_map_bypass: bool


def inventory_core(dsm, dem, cfg, *, bands=None, species_map=None,
                   signature_rows_list=None, threads=1):
    """Rasters in, inventory out; shared by the CLI and the benchmark."""
    chm_grid = derive_chm(dsm, dem, chm_params_from(cfg), threads=threads)

    species_params_by_id = {}
    signatures = []
    if signature_rows_list:
        for row in signature_rows_list:
            species_params_by_id[row["species_id"]] = SpeciesParams(
                row["species_id"], row["label"], row["wood_density"],
                row["crown_dbh_a"], row["crown_dbh_b"],
            )
        from .spectral import SpectralSignature

        signatures = [
            SpectralSignature(row["species_id"], row["label"], tuple(row["centroid"]))
            for row in signature_rows_list
        ]

    bypass = species_map is not None
    if bypass:
        if (species_map.header.width, species_map.header.height,
                species_map.header.geotransform) != (
                chm_grid.header.width, chm_grid.header.height,
                chm_grid.header.geotransform):
            species_map = align(chm_grid, species_map, "nearest").b
        species_grid = species_map
    else:
        if not signatures:
            raise ConfigError("classification requires a signatures file")
        aligned = [align(chm_grid, b, "bilinear").b for b in bands]
        species_grid = classify_pixels(
            *aligned, signatures,
            ndvi_canopy_threshold=cfg.get_float("spectral", "ndvi_threshold", 0.3),
        )
        radius = cfg.get_int("spectral", "majority_radius", 1)
        species_grid = majority_filter(species_grid, radius)

    crown_params = crown_params_from(cfg)
    tops = detect_treetops(chm_grid, crown_params)
    labels = crown_labels(chm_grid, tops, crown_params)
    records = watershed_crowns(chm_grid, tops, species_grid, crown_params)

    registry_text = None
    registry_path = cfg.get("inventory", "model_registry")
    if registry_path:
        registry_text = Path(registry_path).read_text()
    models = (
        _as_config_error(load_model_registry, registry_text)
        if registry_text
        else default_models()
    )
    model_id = cfg.get("inventory", "model", "tropical_with_height")
    if model_id not in models:
        raise ConfigError(f"unknown allometric model {model_id!r}")
    model = models[model_id]
    carbon_fraction = cfg.get_float("inventory", "carbon_fraction", 0.47)
    fallback = SpeciesParams(
        0, "unclassified", cfg.get_float("inventory", "default_wood_density", 0.6)
    )

    biomass_by_id = {}
    for rec in records:
        sp = species_params_by_id.get(rec.species_id, fallback)
        biomass_by_id[rec.tree_id] = tree_biomass(
            rec.tree_id, rec.crown_diameter_m, rec.top.height, sp, model,
            carbon_fraction,
        )
    area_ha = chm_grid.area_ha()
    stand = stand_totals(list(biomass_by_id.values()), area_ha)
    summary = census(records, area_ha)
    return InventoryResult(
        chm=chm_grid, species=species_grid, labels=labels, crowns=records,
        biomass_by_id=biomass_by_id, stand=stand, summary=summary,
        species_map_bypass=bypass,
    )


# ---------------------------------------------------------------------------
# Subcommand drivers
# ---------------------------------------------------------------------------


def _manifest(cfg, inputs, outputs, clock, notes=None):
    return {
        "config_hash": cfg.config_hash(),
        "config": cfg.canonical_dump().splitlines(),
        "versions": {"forestcensus": __version__, "numpy": np.__version__},
        "inputs": inputs,
        "outputs": outputs,
        "timings": clock.stages,
        "notes": notes or [],
    }


def _write_outputs(out_dir, artifacts):
    """Write {name: bytes} and return {name: sha256}."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    checksums = {}
    for name, data in artifacts.items():
        (out_dir / name).write_bytes(data)
        checksums[name] = _sha256(data)
    return checksums


def run_inventory(cfg, out_dir, threads=1):
    """Full inventory run from config paths; returns the manifest dict."""
    clock = _StageClock()
    inputs = {}

    def read_input(section_key, band=None, required=True):
        path = cfg.get("inventory", section_key)
        if path is None:
            if required:
                raise ConfigError(f"missing required config value [inventory] {section_key}")
            return None
        data = Path(path).read_bytes()
        inputs[path] = _sha256(data)
        if data[:4] == b"CCR1":
            return read_internal(data)
        return read_geotiff(data, band=band)

    dsm = clock.run("read_dsm", read_input, "dsm")
    dem = clock.run("read_dem", read_input, "dem")

    species_map = read_input("species_map", required=False)
    bands = None
    sig_rows = None
    sig_path = cfg.get("inventory", "signatures")
    if sig_path:
        text = Path(sig_path).read_text()
        inputs[sig_path] = _sha256(text.encode())
        sigs, sig_rows = _as_config_error(load_signature_csv, text)
        for row, s in zip(sig_rows, sigs):
            row["centroid"] = s.centroid
    if species_map is None:
        image_path = cfg.get("inventory", "image")
        if image_path:
            bands = [clock.run(f"read_band_{i}", read_input, "image", i) for i in range(4)]
        else:
            bands = [clock.run(f"read_{name}", read_input, name)
                     for name in ("red", "green", "blue", "nir")]

    result = clock.run(
        "inventory", inventory_core, dsm, dem, cfg,
        bands=bands, species_map=species_map, signature_rows_list=sig_rows,
        threads=threads,
    )

    artifacts = {
        "chm.tif": write_geotiff(result.chm),
        "species.tif": write_geotiff(result.species),
        "crowns.geojson": crowns_geojson(result.labels, result.chm.header, result.crowns).encode(),
        "trees.csv": trees_csv(result.crowns, result.biomass_by_id).encode(),
        "stand_carbon.json": stand_carbon_json(result.stand, result.summary).encode(),
    }
    if cfg.get_bool("inventory", "heatmaps", False):
        buf = io.BytesIO()
        render_heatmap(result.chm, "canopy").save(buf, format="PNG")
        artifacts["chm.png"] = buf.getvalue()

    checksums = clock.run("write_outputs", _write_outputs, out_dir, artifacts)
    notes = [
        f"dem resolution: {dem.header.pixel_size[0]:g} x {dem.header.pixel_size[1]:g} m/px",
        f"dsm resolution: {dsm.header.pixel_size[0]:g} x {dsm.header.pixel_size[1]:g} m/px",
    ]
    if result.species_map_bypass:
        notes.append("species_map bypass: spectral stage skipped")
    manifest = _manifest(cfg, inputs, checksums, clock, notes)
    manifest_text = dump_json(manifest)
    (Path(out_dir) / "manifest.json").write_text(manifest_text)
    return manifest


def _scene_bands(scene):
    return [scene["red"], scene["green"], scene["blue"], scene["nir"]]


def benchmark_one_seed(cfg, seed, threads=1, return_artifacts=False):
    """Census vs plot-kriging vs ensemble on one synthetic scene."""
    params = synth_params_from(cfg, seed=seed)
    truth = generate(params)
    scene = render(truth)
    rows = signature_rows(truth.params)

    result = inventory_core(
        scene["dsm"], scene["dem"], cfg,
        bands=_scene_bands(scene), signature_rows_list=rows, threads=threads,
    )
    truth_density = truth.totals.agb_mg_per_ha
    census_mean = result.stand.agb_mg_per_ha
    recall = cfg.get_float("benchmark", "recall", 0.9)
    cvar = census_variance(
        [b.agb_kg for b in result.biomass_by_id.values()],
        result.stand.area_ha, recall,
    )

    spacing = cfg.get_float("benchmark", "plot_spacing", 300.0)
    radius = cfg.get_float("benchmark", "plot_radius", 12.0)
    positions = [(t.x, t.y) for t in truth.trees]
    agb = [t.agb_kg for t in truth.trees]
    bounds = (0.0, 0.0, params.extent[0], params.extent[1])
    plots = sample_plots(positions, agb, bounds, spacing, radius)
    vario = fit_variogram(plots)
    template = _query_template(cfg, params)
    kmean, kvar = krige(plots, vario, template)
    interp_mean = float(kmean.samples.mean())
    interp_var = float(kvar.samples.mean()) / max(len(plots), 1)

    est = ensemble(census_mean, cvar, interp_mean, interp_var)
    reports = {
        "census": error_report(census_mean, truth_density, cvar),
        "interpolated": error_report(interp_mean, truth_density, interp_var),
        "ensemble": error_report(est.combined[0], truth_density, est.combined[1]),
    }

    def estimator(name, mean, variance, extra=None):
        rep = reports[name]
        out = {
            "agb_mg_per_ha": mean,
            "variance": variance,
            "bias_mg_ha": rep.bias_mg_ha,
            "abs_error_mg_ha": abs(rep.bias_mg_ha),
            "rmse_pct": rep.rmse_pct,
            "within_ci": rep.within_ci,
        }
        out.update(extra or {})
        return out

    run = {
        "seed": seed,
        "truth_agb_mg_per_ha": truth_density,
        "truth_tree_count": len(truth.trees),
        "census": estimator("census", census_mean, cvar,
                            {"tree_count": result.summary.tree_count}),
        "interpolated": estimator("interpolated", interp_mean, interp_var, {
            "n_plots": len(plots),
            "variogram": {
                "nugget": vario.nugget, "sill": vario.sill, "range_m": vario.range_m,
            },
        }),
        "ensemble": estimator("ensemble", est.combined[0], est.combined[1],
                              {"weights": list(est.weights)}),
    }
    if return_artifacts:
        return run, {"plots": plots, "kriging_mean": kmean, "kriging_variance": kvar}
    return run


def _query_template(cfg, params):
    cell = cfg.get_float("benchmark", "query_cell", 20.0)
    qw = max(1, round(params.extent[0] / cell))
    qh = max(1, round(params.extent[1] / cell))
    return Grid(
        RasterHeader(qw, qh, SampleType.FLOAT32,
                     geotransform=(0.0, params.extent[1], cell, -cell),
                     crs_tag=params.crs_tag),
        np.zeros((qh, qw), dtype=np.float32),
    )


def spacing_sweep(cfg, spacings, seeds):
    """Plot-kriging error per spacing (truth plots only; no raster pipeline).

    Scenes are generated once per seed and re-sampled at each spacing.
    """
    errors = {spacing: [] for spacing in spacings}
    radius = cfg.get_float("benchmark", "plot_radius", 12.0)
    for seed in seeds:
        params = synth_params_from(cfg, seed=seed)
        truth = generate(params)
        positions = [(t.x, t.y) for t in truth.trees]
        agb = [t.agb_kg for t in truth.trees]
        bounds = (0.0, 0.0, params.extent[0], params.extent[1])
        template = _query_template(cfg, params)
        for spacing in spacings:
            plots = sample_plots(positions, agb, bounds, spacing, radius)
            try:
                vario = fit_variogram(plots)
            except Exception:
                continue
            kmean, _ = krige(plots, vario, template)
            errors[spacing].append(
                abs(float(kmean.samples.mean()) - truth.totals.agb_mg_per_ha)
            )
    return [
        {
            "spacing_m": spacing,
            "seeds": len(errors[spacing]),
            "mean_abs_error_mg_ha": float(np.mean(errors[spacing])) if errors[spacing] else None,
        }
        for spacing in spacings
    ]


def run_benchmark(cfg, out_dir, threads=1):
    clock = _StageClock()
    n_seeds = cfg.get_int("benchmark", "seeds", 20)
    base_seed = cfg.get_int("benchmark", "base_seed", 1000)
    seeds = [base_seed + i for i in range(n_seeds)]
    runs = []
    spatial_artifacts = None
    for s in seeds:
        want = spatial_artifacts is None
        result = clock.run(f"seed_{s}", benchmark_one_seed, cfg, s, threads, want)
        if want:
            run, spatial_artifacts = result
        else:
            run = result
        runs.append(run)

    def mean_abs(kind):
        return float(np.mean([r[kind]["abs_error_mg_ha"] for r in runs]))

    payload = {
        "seeds": seeds,
        "runs": runs,
        "aggregate": {
            "census_mean_abs_error_mg_ha": mean_abs("census"),
            "interpolated_mean_abs_error_mg_ha": mean_abs("interpolated"),
            "ensemble_mean_abs_error_mg_ha": mean_abs("ensemble"),
        },
    }
    sweep_raw = cfg.get("benchmark", "spacing_sweep")
    if sweep_raw:
        spacings = [float(s) for s in sweep_raw.split(",") if s.strip()]
        payload["spacing_sweep"] = clock.run(
            "spacing_sweep", spacing_sweep, cfg, spacings, seeds
        )

    artifacts = {"benchmark.json": dump_json(payload).encode()}
    if spatial_artifacts is not None:
        # plot table and kriged surfaces of the first seed, for inspection
        artifacts["plots.csv"] = plots_csv(spatial_artifacts["plots"]).encode()
        artifacts["kriging_mean.tif"] = write_geotiff(spatial_artifacts["kriging_mean"])
        artifacts["kriging_variance.tif"] = write_geotiff(spatial_artifacts["kriging_variance"])
    checksums = clock.run("write_outputs", _write_outputs, out_dir, artifacts)
    manifest = _manifest(cfg, {}, checksums, clock)
    (Path(out_dir) / "manifest.json").write_text(dump_json(manifest))
    return payload


def run_synth(cfg, out_dir):
    """Generate a scene and write the six rasters plus truth and signatures."""
    clock = _StageClock()
    params = synth_params_from(cfg)
    truth = clock.run("generate", generate, params)
    scene = clock.run("render", render, truth)

    from .spectral import dump_signature_csv

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["tree_id", "x", "y", "height_m", "crown_diameter_m",
                     "dbh_cm", "species_id", "agb_kg"])
    for t in truth.trees:
        writer.writerow([
            t.tree_id, f"{t.x:.6g}", f"{t.y:.6g}", f"{t.height_m:.6g}",
            f"{t.crown_diameter_m:.6g}", f"{t.dbh_cm:.6g}", t.species_id,
            f"{t.agb_kg:.6g}",
        ])

    truth_json = {
        "seed": params.seed,
        "area_ha": truth.area_ha,
        "tree_count": len(truth.trees),
        "model_id": truth.model_id,
        "totals": {
            "agb_mg_per_ha": truth.totals.agb_mg_per_ha,
            "carbon_mg_per_ha": truth.totals.carbon_mg_per_ha,
            "co2e_t_per_ha": truth.totals.co2e_t_per_ha,
            "total_co2e_t": truth.totals.total_co2e_t,
        },
    }
    artifacts = {
        "dsm.tif": write_geotiff(scene["dsm"]),
        "dem.tif": write_geotiff(scene["dem"]),
        "red.tif": write_geotiff(scene["red"]),
        "green.tif": write_geotiff(scene["green"]),
        "blue.tif": write_geotiff(scene["blue"]),
        "nir.tif": write_geotiff(scene["nir"]),
        "truth.csv": buf.getvalue().encode(),
        "truth.json": dump_json(truth_json).encode(),
        "signatures.csv": dump_signature_csv(signature_rows(truth.params)).encode(),
    }
    checksums = clock.run("write_outputs", _write_outputs, out_dir, artifacts)
    manifest = _manifest(cfg, {}, checksums, clock)
    (Path(out_dir) / "manifest.json").write_text(dump_json(manifest))
    return manifest


def run_costs(cfg, out_dir):
    """Survey and offset cost report for a stand."""
    clock = _StageClock()
    tco2e = cfg.get_float("costs", "tco2e")
    stand_path = cfg.get("costs", "stand_carbon")
    if tco2e is None and stand_path:
        import json

        doc = _as_config_error(json.loads, Path(stand_path).read_text())
        tco2e = _as_config_error(lambda: float(doc["total_co2e_t"]))
    if tco2e is None:
        raise ConfigError("costs needs [costs] tco2e or stand_carbon path")
    area_ha = cfg.get_float("costs", "area_ha", 100.0)

    surveys = dict(DEFAULT_SURVEY_MODELS)
    offsets = list(DEFAULT_OFFSET_MODELS)
    models_path = cfg.get("costs", "models")
    if models_path:
        file_surveys, file_offsets = _as_config_error(
            load_cost_models_file, Path(models_path).read_text()
        )
        if file_surveys:
            surveys = file_surveys
        if file_offsets:
            offsets = file_offsets

    survey_rows = []
    for model in surveys.values():
        sc = survey_cost(area_ha, model)
        survey_rows.append({
            "method": sc.method, "area_ha": sc.area_ha, "usd": sc.usd,
            "missions": sc.missions, "hours": sc.hours,
        })
    offset_rows = compare(offsets, tco2e)
    payload = {
        "tco2e": tco2e,
        "area_ha": area_ha,
        "survey_costs": survey_rows,
        "offset_costs": [
            {"method": r.method, "usd_low": r.usd_low, "usd_high": r.usd_high,
             "usd_mid": r.usd_mid, "cheapest": r.cheapest}
            for r in offset_rows
        ],
    }
    text_table = comparison_table(offset_rows)
    artifacts = {
        "costs.json": dump_json(payload).encode(),
        "costs.txt": text_table.encode(),
    }
    _write_outputs(out_dir, artifacts)
    return payload, text_table
