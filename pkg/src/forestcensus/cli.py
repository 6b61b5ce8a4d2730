"""Command-line interface: one tool, four subcommands.

    forestcensus inventory --config run.cfg --output out/
    forestcensus benchmark --config bench.cfg --output out/
    forestcensus synth     --config scene.cfg --output scene/
    forestcensus costs     --tco2e 125 --output out/

Config files are [section] key=value text; every flag below overrides the
matching config key.  Exit codes: 0 success, 2 configuration error, 3
input parse error, 4 pipeline stage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import PipelineConfig
from .errors import ConfigError, ForestCensusError, Malformed, UnsupportedFeature
from .pipeline import run_benchmark, run_costs, run_inventory, run_synth

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PARSE = 3
EXIT_STAGE = 4

# flag dest -> (section, key)
_FLAG_MAP = {
    "dsm": ("inventory", "dsm"),
    "dem": ("inventory", "dem"),
    "image": ("inventory", "image"),
    "red": ("inventory", "red"),
    "green": ("inventory", "green"),
    "blue": ("inventory", "blue"),
    "nir": ("inventory", "nir"),
    "species_map": ("inventory", "species_map"),
    "signatures": ("inventory", "signatures"),
    "model_registry": ("inventory", "model_registry"),
    "model": ("inventory", "model"),
    "carbon_fraction": ("inventory", "carbon_fraction"),
    "heatmaps": ("inventory", "heatmaps"),
    "chm_clamp": ("chm", "clamp_negative"),
    "chm_max_height": ("chm", "max_height"),
    "chm_smooth_radius": ("chm", "smooth_radius"),
    "ndvi_threshold": ("spectral", "ndvi_threshold"),
    "majority_radius": ("spectral", "majority_radius"),
    "min_tree_height": ("crowns", "min_tree_height"),
    "window_fraction": ("crowns", "window_fraction"),
    "min_window_radius": ("crowns", "min_window_radius"),
    "crown_floor_fraction": ("crowns", "crown_floor_fraction"),
    "seed": ("synth", "seed"),
    "stems_per_ha": ("synth", "stems_per_ha"),
    "resolution": ("synth", "resolution"),
    "extent_w": ("synth", "extent_w"),
    "extent_h": ("synth", "extent_h"),
    "spectral_noise": ("synth", "spectral_noise"),
    "seeds": ("benchmark", "seeds"),
    "base_seed": ("benchmark", "base_seed"),
    "plot_spacing": ("benchmark", "plot_spacing"),
    "spacing_sweep": ("benchmark", "spacing_sweep"),
    "tco2e": ("costs", "tco2e"),
    "stand_carbon": ("costs", "stand_carbon"),
    "area_ha": ("costs", "area_ha"),
    "cost_models": ("costs", "models"),
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="forestcensus",
        description="Drone-survey forest inventory and carbon stock estimation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="path to [section] key=value config file")
        p.add_argument("--output", default="out", help="output directory")
        p.add_argument("--threads", type=int, default=1,
                       help="worker cap for tile-parallel stages (results are "
                            "identical for any value)")

    inv = sub.add_parser("inventory", help="run the raster-to-inventory pipeline")
    common(inv)
    inv.add_argument("--dsm")
    inv.add_argument("--dem")
    inv.add_argument("--image", help="4-band RGB-NIR GeoTIFF (bands r,g,b,nir)")
    inv.add_argument("--red")
    inv.add_argument("--green")
    inv.add_argument("--blue")
    inv.add_argument("--nir")
    inv.add_argument("--species-map", dest="species_map",
                     help="bypass classification with a ready species raster")
    inv.add_argument("--signatures")
    inv.add_argument("--model-registry", dest="model_registry")
    inv.add_argument("--model")
    inv.add_argument("--carbon-fraction", dest="carbon_fraction")
    inv.add_argument("--heatmaps", action="store_const", const="true")
    inv.add_argument("--chm-clamp", dest="chm_clamp")
    inv.add_argument("--chm-max-height", dest="chm_max_height")
    inv.add_argument("--chm-smooth-radius", dest="chm_smooth_radius")
    inv.add_argument("--ndvi-threshold", dest="ndvi_threshold")
    inv.add_argument("--majority-radius", dest="majority_radius")
    inv.add_argument("--min-tree-height", dest="min_tree_height")
    inv.add_argument("--window-fraction", dest="window_fraction")
    inv.add_argument("--min-window-radius", dest="min_window_radius")
    inv.add_argument("--crown-floor-fraction", dest="crown_floor_fraction")

    bench = sub.add_parser("benchmark", help="score census vs plot interpolation "
                                             "on synthetic scenes")
    common(bench)
    bench.add_argument("--seeds")
    bench.add_argument("--base-seed", dest="base_seed")
    bench.add_argument("--plot-spacing", dest="plot_spacing")
    bench.add_argument("--spacing-sweep", dest="spacing_sweep",
                       help="comma-separated plot spacings in meters")
    bench.add_argument("--stems-per-ha", dest="stems_per_ha")
    bench.add_argument("--spectral-noise", dest="spectral_noise")

    synth = sub.add_parser("synth", help="generate a synthetic scene with truth")
    common(synth)
    synth.add_argument("--seed")
    synth.add_argument("--stems-per-ha", dest="stems_per_ha")
    synth.add_argument("--resolution")
    synth.add_argument("--extent-w", dest="extent_w")
    synth.add_argument("--extent-h", dest="extent_h")
    synth.add_argument("--spectral-noise", dest="spectral_noise")

    costs = sub.add_parser("costs", help="survey and offset cost comparison")
    common(costs)
    costs.add_argument("--tco2e")
    costs.add_argument("--stand-carbon", dest="stand_carbon",
                       help="stand_carbon.json from an inventory run")
    costs.add_argument("--area-ha", dest="area_ha")
    costs.add_argument("--cost-models", dest="cost_models")

    return parser


def load_config(args):
    text = ""
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        text = path.read_text()
    overrides = {}
    for dest, target in _FLAG_MAP.items():
        value = getattr(args, dest, None)
        if value is not None:
            overrides[target] = value
    return PipelineConfig.load(text, overrides)


def _fail(exc, code):
    report = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, Malformed):
        report["offset"] = exc.offset
    print(json.dumps(report, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        if args.command == "inventory":
            manifest = run_inventory(cfg, args.output, threads=args.threads)
            print(f"inventory complete: {len(manifest['outputs'])} artifacts in {args.output}")
        elif args.command == "benchmark":
            payload = run_benchmark(cfg, args.output, threads=args.threads)
            agg = payload["aggregate"]
            print("benchmark complete:")
            for key in sorted(agg):
                print(f"  {key}: {agg[key]:.3f}")
        elif args.command == "synth":
            manifest = run_synth(cfg, args.output)
            print(f"scene written: {len(manifest['outputs'])} files in {args.output}")
        elif args.command == "costs":
            payload, table = run_costs(cfg, args.output)
            print(table, end="")
        return EXIT_OK
    except (ConfigError, FileNotFoundError) as exc:
        return _fail(exc, EXIT_CONFIG)
    except (Malformed, UnsupportedFeature) as exc:
        return _fail(exc, EXIT_PARSE)
    except ForestCensusError as exc:
        return _fail(exc, EXIT_STAGE)
    except ValueError as exc:
        return _fail(exc, EXIT_STAGE)


if __name__ == "__main__":
    sys.exit(main())
