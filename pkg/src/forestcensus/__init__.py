"""Drone-survey forest inventory and carbon stock estimation."""

__version__ = "0.1.0"

from .grid import Grid, Layout, RasterHeader, SampleType
from .geotiff import read_geotiff, write_geotiff
from .internal import read_internal, write_internal
from .chm import ChmParams, derive_chm, fill_pits
from .crowns import CrownParams, census, detect_treetops, watershed_crowns
from .allometry import (
    AllometricModel,
    SpeciesParams,
    agb,
    carbon_and_co2e,
    dbh_from_crown,
    stand_totals,
)
from .spatial import ensemble, fit_variogram, krige, sample_plots
from .spectral import classify_pixels, majority_filter, ndvi
from .synthforest import SynthParams, generate, render

__all__ = [
    "AllometricModel",
    "ChmParams",
    "CrownParams",
    "Grid",
    "Layout",
    "RasterHeader",
    "SampleType",
    "SpeciesParams",
    "SynthParams",
    "agb",
    "carbon_and_co2e",
    "census",
    "classify_pixels",
    "dbh_from_crown",
    "derive_chm",
    "detect_treetops",
    "ensemble",
    "fill_pits",
    "fit_variogram",
    "generate",
    "krige",
    "majority_filter",
    "ndvi",
    "read_geotiff",
    "read_internal",
    "render",
    "sample_plots",
    "stand_totals",
    "watershed_crowns",
    "write_geotiff",
    "write_internal",
    "__version__",
]
