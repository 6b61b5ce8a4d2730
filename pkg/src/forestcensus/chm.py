"""Canopy height model: DSM minus DEM, conditioned for crown delineation.

The DEM is always resampled onto the DSM grid (bilinear), never the other
way around, so the high-resolution surface detail survives.  Heights above
the plausibility cap are treated as georegistration blunders and become
nodata instead of poisoning biomass totals.  Median smoothing preserves
crown edges while removing mosaicking speckle.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .grid import Grid, SampleType
from .gridops import align, focal, map2


@dataclass(frozen=True)
class ChmParams:
    clamp_negative: bool = True
    max_plausible_height: float = 90.0  # above the tallest recorded tropical trees
    smooth_radius: int = 1

    def __post_init__(self):
        if self.max_plausible_height <= 0:
            raise ValueError("max_plausible_height must be > 0")
        if self.smooth_radius < 0:
            raise ValueError("smooth_radius must be >= 0")


def derive_chm(dsm, dem, params=ChmParams(), threads=1):
    """Per-pixel canopy height: dsm - dem, clamped, capped, median-smoothed.

    The subtraction is a single float32 operation per pixel with no
    reordering, so wherever both inputs are valid and within caps,
    chm + dem reproduces dsm exactly (before smoothing).
    """
    pair = align(dsm, dem, "bilinear")
    chm = map2(pair, np.subtract)
    arr = chm.samples.copy()
    valid = ~np.isnan(arr)
    if params.clamp_negative:
        arr[valid] = np.maximum(arr[valid], np.float32(0.0))
    over = valid & (arr > np.float32(params.max_plausible_height))
    arr[over] = np.nan
    out = Grid(chm.header, arr)
    if params.smooth_radius > 0:
        out = focal(out, params.smooth_radius, "median", threads=threads)
    return out


def fill_pits(chm, max_pit_depth):
    """Replace single-pixel pits with the median of their 8 neighbors.

    A pit is a valid pixel lower than all of its valid neighbors by more
    than `max_pit_depth`.  Filling one pixel can expose another, so passes
    repeat until no pits remain.
    """
    if max_pit_depth < 0:
        raise ValueError("max_pit_depth must be >= 0")
    arr = chm.as_float32()
    h, w = arr.shape
    touched = False
    for _ in range(1000):
        padded = np.pad(arr, 1, mode="constant", constant_values=np.nan)
        stack = np.empty((8, h, w), dtype=np.float32)
        i = 0
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dr == 0 and dc == 0:
                    continue
                stack[i] = padded[1 + dr : 1 + dr + h, 1 + dc : 1 + dc + w]
                i += 1
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            nmin = np.nanmin(stack, axis=0)
            nmed = np.nanmedian(stack, axis=0)
        pits = ~np.isnan(arr) & ~np.isnan(nmin) & (nmin - arr > max_pit_depth)
        if not pits.any():
            break
        arr[pits] = nmed[pits]
        touched = True
    if not touched:
        return chm
    header = replace(chm.header, sample_type=SampleType.FLOAT32, nodata=float("nan"))
    return Grid(header, arr)
