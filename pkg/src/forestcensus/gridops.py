"""Grid algebra: alignment/resampling, elementwise combine, neighborhood
statistics, and memory-bounded tiled traversal.

All numeric processing is 32-bit float.  Nodata propagates: any operation
that reads an invalid cell (or, for bilinear resampling, any invalid
neighbor) writes nodata.  Derived float grids use NaN as their nodata
value.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .errors import CrsMismatch, DisjointExtents
from .grid import Grid, SampleType, STRIPS

RESAMPLE_METHODS = ("nearest", "bilinear")
FOCAL_STATS = ("mean", "median", "max", "min")


@dataclass(frozen=True)
class GridPair:
    """Two grids on a common geometry; `alignment` records how b got there."""

    a: Grid
    b: Grid
    alignment: str  # "exact" or "resampled(<method>)"


@dataclass(frozen=True)
class TileCursor:
    """Tiling parameters for memory-bounded traversal.

    `overlap` is the halo in pixels added around each tile so neighborhood
    operations with support <= overlap are exact at tile seams.
    """

    tile_w: int = 512
    tile_h: int = 512
    overlap: int = 0

    def __post_init__(self):
        if self.tile_w < 1 or self.tile_h < 1:
            raise ValueError("tile dimensions must be >= 1")
        if self.overlap < 0:
            raise ValueError("overlap must be >= 0")


def _same_geometry(a, b):
    return (
        a.header.width == b.header.width
        and a.header.height == b.header.height
        and a.header.geotransform == b.header.geotransform
    )


def _extents_overlap(a, b):
    ax0, ay0, ax1, ay1 = a.header.bounds
    bx0, by0, bx1, by1 = b.header.bounds
    return ax0 < bx1 and bx0 < ax1 and ay0 < by1 and by0 < ay1


def align(a, b, method="bilinear"):
    """Resample b onto a's pixel grid.

    Identical geometries pass through untouched (alignment "exact").
    Bilinear output is Float32 with NaN nodata; any invalid or out-of-extent
    source neighbor yields nodata.  Nearest keeps b's sample type.
    """
    if method not in RESAMPLE_METHODS:
        raise ValueError(f"unknown resampling method {method!r}")
    if a.header.crs_tag != b.header.crs_tag:
        raise CrsMismatch(f"{a.header.crs_tag!r} != {b.header.crs_tag!r}")
    if not _extents_overlap(a, b):
        raise DisjointExtents(f"{a.header.bounds} vs {b.header.bounds}")
    if _same_geometry(a, b):
        return GridPair(a, b, "exact")

    ah = a.header
    cols = np.arange(ah.width, dtype=np.float64)
    rows = np.arange(ah.height, dtype=np.float64)
    xs = ah.geotransform[0] + (cols + 0.5) * ah.geotransform[2]
    ys = ah.geotransform[1] + (rows + 0.5) * ah.geotransform[3]
    bh = b.header
    u = (xs - bh.geotransform[0]) / bh.geotransform[2] - 0.5  # fractional col
    v = (ys - bh.geotransform[1]) / bh.geotransform[3] - 0.5  # fractional row
    uu, vv = np.meshgrid(u, v)
    valid_src = b.valid_mask()

    if method == "nearest":
        ci = np.floor(uu + 0.5).astype(np.int64)
        ri = np.floor(vv + 0.5).astype(np.int64)
        inside = (ci >= 0) & (ci < bh.width) & (ri >= 0) & (ri < bh.height)
        cis, ris = np.clip(ci, 0, bh.width - 1), np.clip(ri, 0, bh.height - 1)
        ok = inside & valid_src[ris, cis]
        out = np.where(ok, b.samples[ris, cis], 0)
        if not ok.all():
            if bh.sample_type is SampleType.FLOAT32:
                out = out.astype(np.float32)
                out[~ok] = np.nan
                nodata = float("nan") if bh.nodata is None else bh.nodata
            elif bh.nodata is not None:
                out[~ok] = bh.nodata
                nodata = bh.nodata
            else:
                raise ValueError(
                    "nearest resampling needs a nodata value to mark cells "
                    "outside the source extent"
                )
        else:
            nodata = bh.nodata
        header = replace(ah, sample_type=bh.sample_type, nodata=nodata)
        resampled = Grid(header, out.astype(bh.sample_type.dtype))
    else:
        # clamp-to-edge within the source extent (keeps constant fields
        # constant at borders); outside the extent -> nodata
        bw, bhgt = bh.width, bh.height
        inside = (uu >= -0.5) & (uu <= bw - 0.5) & (vv >= -0.5) & (vv <= bhgt - 0.5)
        ucl = np.clip(uu, 0.0, bw - 1.0)
        vcl = np.clip(vv, 0.0, bhgt - 1.0)
        c0 = np.minimum(np.floor(ucl), max(bw - 2, 0)).astype(np.int64)
        r0 = np.minimum(np.floor(vcl), max(bhgt - 2, 0)).astype(np.int64)
        fc = (ucl - c0).astype(np.float32)
        fr = (vcl - r0).astype(np.float32)
        srcf = b.as_float32()
        total = np.zeros(uu.shape, dtype=np.float32)
        ok = inside.copy()
        for dr, dc, w in (
            (0, 0, (1 - fr) * (1 - fc)),
            (0, 1, (1 - fr) * fc),
            (1, 0, fr * (1 - fc)),
            (1, 1, fr * fc),
        ):
            ccs = np.clip(c0 + dc, 0, bw - 1)
            rrs = np.clip(r0 + dr, 0, bhgt - 1)
            vals = srcf[rrs, ccs]
            # a neighbor only disqualifies the pixel if it contributes
            ok &= (w == 0) | ~np.isnan(vals)
            total += np.nan_to_num(vals) * w
        total[~ok] = np.nan
        header = replace(ah, sample_type=SampleType.FLOAT32, nodata=float("nan"))
        resampled = Grid(header, total)
    return GridPair(a, resampled, f"resampled({method})")


def map2(pair, f):
    """Elementwise combine of an aligned pair: out = f(a, b) where both
    valid, else nodata.  `f` must accept float32 arrays elementwise."""
    a, b = pair.a, pair.b
    if not _same_geometry(a, b):
        raise ValueError("map2 requires an aligned pair")
    af, bf = a.as_float32(), b.as_float32()
    valid = a.valid_mask() & b.valid_mask()
    with np.errstate(all="ignore"):
        out = np.asarray(f(af, bf), dtype=np.float32)
    out = np.where(valid, out, np.float32(np.nan))
    header = replace(a.header, sample_type=SampleType.FLOAT32, nodata=float("nan"))
    return Grid(header, out)


_NAN_STATS = {"mean": np.nanmean, "median": np.nanmedian, "max": np.nanmax, "min": np.nanmin}
_PLAIN_STATS = {"mean": np.mean, "median": np.median, "max": np.max, "min": np.min}


def _focal_array(arr, radius, stat):
    """Nodata-aware square-window statistic on a NaN-masked float32 array."""
    k = 2 * radius + 1
    h, w = arr.shape
    padded = np.pad(arr, radius, mode="constant", constant_values=np.nan)
    windows = np.lib.stride_tricks.sliding_window_view(padded, (k, k))
    flat = windows.reshape(h, w, k * k)
    nanfunc = _NAN_STATS[stat]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        if not np.isnan(arr).any() and h > 2 * radius and w > 2 * radius:
            # interior windows are fully valid; only the padded rim needs
            # the (much slower) NaN-aware reduction
            out = np.empty((h, w), dtype=np.float32)
            out[radius : h - radius, radius : w - radius] = _PLAIN_STATS[stat](
                flat[radius : h - radius, radius : w - radius], axis=-1
            )
            for band in (
                (slice(0, radius), slice(None)),
                (slice(h - radius, h), slice(None)),
                (slice(radius, h - radius), slice(0, radius)),
                (slice(radius, h - radius), slice(w - radius, w)),
            ):
                out[band] = nanfunc(flat[band], axis=-1)
            return out
        return nanfunc(flat, axis=-1).astype(np.float32)


def focal(grid, radius, stat, tiled=None, tile=512, threads=1):
    """Square-window neighborhood statistic over valid cells.

    Radius 0 is the identity.  All-nodata windows yield nodata.  Large
    grids are processed tile-by-tile with a halo of `radius`, which is
    bit-identical to global evaluation.
    """
    if stat not in FOCAL_STATS:
        raise ValueError(f"unknown focal stat {stat!r}")
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius == 0:
        return grid
    if tiled is None:
        tiled = grid.width * grid.height > tile * tile
    if tiled:
        cursor = TileCursor(tile_w=tile, tile_h=tile, overlap=radius)
        return for_each_tile(grid, cursor, lambda t: focal(t, radius, stat, tiled=False),
                             threads=threads)
    out = _focal_array(grid.as_float32(), radius, stat)
    header = replace(grid.header, sample_type=SampleType.FLOAT32, nodata=float("nan"))
    return Grid(header, out)


def for_each_tile(grid, cursor, f, threads=1):
    """Apply `f` to overlapping tiles and reassemble the core regions.

    Tiles cover the grid exactly once (excluding halos).  `f` receives a
    Grid of tile+halo extent and must return a Grid of identical shape.
    The result equals global application of `f` whenever f's support
    radius is <= cursor.overlap.  Scheduling may be parallel; assembly
    order is fixed, so the output is independent of `threads`.
    """
    h, w = grid.height, grid.width
    ox, oy, px, py = grid.header.geotransform
    jobs = []
    for r0 in range(0, h, cursor.tile_h):
        for c0 in range(0, w, cursor.tile_w):
            r1, c1 = min(r0 + cursor.tile_h, h), min(c0 + cursor.tile_w, w)
            er0, ec0 = max(0, r0 - cursor.overlap), max(0, c0 - cursor.overlap)
            er1, ec1 = min(h, r1 + cursor.overlap), min(w, c1 + cursor.overlap)
            jobs.append((r0, r1, c0, c1, er0, er1, ec0, ec1))

    def run(job):
        r0, r1, c0, c1, er0, er1, ec0, ec1 = job
        sub = grid.samples[er0:er1, ec0:ec1]
        header = replace(
            grid.header,
            width=ec1 - ec0,
            height=er1 - er0,
            geotransform=(ox + ec0 * px, oy + er0 * py, px, py),
            layout=STRIPS,
        )
        result = f(Grid(header, sub))
        if result.samples.shape != sub.shape:
            raise ValueError("tile function changed the tile shape")
        return result

    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]

    first = results[0]
    out = np.empty((h, w), dtype=first.samples.dtype)
    for job, res in zip(jobs, results):
        r0, r1, c0, c1, er0, er1, ec0, ec1 = job
        if res.header.sample_type is not first.header.sample_type:
            raise ValueError("tile function returned mixed sample types")
        out[r0:r1, c0:c1] = res.samples[r0 - er0 : r1 - er0, c0 - ec0 : c1 - ec0]
    header = replace(
        grid.header,
        sample_type=first.header.sample_type,
        nodata=first.header.nodata,
    )
    return Grid(header, out)
