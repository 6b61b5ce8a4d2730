"""In-memory georeferenced raster: the carrier type for every pipeline stage.

A Grid is a single-band, row-major 2D sample array plus a RasterHeader
describing its size, sample type, nodata value, and an affine geotransform.
The geotransform follows the GDAL convention: ``(origin_x, origin_y,
pixel_size_x, pixel_size_y)`` where the origin is the world coordinate of
the *outer corner* of pixel (0, 0) and pixel_size_y is negative for
north-up rasters.  The center of pixel (col, row) maps to::

    x = origin_x + (col + 0.5) * pixel_size_x
    y = origin_y + (row + 0.5) * pixel_size_y

Grids are immutable after construction (the sample buffer is frozen) and
safe to share across threads.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np


class SampleType(enum.Enum):
    """Pixel sample types supported by the raster subset."""

    UINT8 = "uint8"
    UINT16 = "uint16"
    FLOAT32 = "float32"

    @property
    def dtype(self):
        return np.dtype(self.value)

    @property
    def nbytes(self):
        return self.dtype.itemsize

    @classmethod
    def from_dtype(cls, dtype):
        dtype = np.dtype(dtype)
        for st in cls:
            if st.dtype == dtype:
                return st
        raise ValueError(f"unsupported sample dtype {dtype}")


@dataclass(frozen=True)
class Layout:
    """Storage layout of a raster file: row strips or fixed-size tiles.

    Layout records how a Grid was (or will be) laid out on disk.  It is
    storage metadata only and is excluded from Grid equality.
    """

    kind: str  # "strips" or "tiles"
    tile_w: int = 0
    tile_h: int = 0

    def __post_init__(self):
        if self.kind not in ("strips", "tiles"):
            raise ValueError(f"bad layout kind {self.kind!r}")
        if self.kind == "tiles":
            if self.tile_w < 16 or self.tile_h < 16:
                raise ValueError("tile dimensions must be >= 16")
            if self.tile_w % 16 or self.tile_h % 16:
                raise ValueError("tile dimensions must be multiples of 16")

    @classmethod
    def strips(cls):
        return cls("strips")

    @classmethod
    def tiles(cls, tile_w, tile_h):
        return cls("tiles", int(tile_w), int(tile_h))


STRIPS = Layout.strips()


def _nodata_equal(a, b):
    if a is None or b is None:
        return a is None and b is None
    fa, fb = float(a), float(b)
    if math.isnan(fa) or math.isnan(fb):
        return math.isnan(fa) and math.isnan(fb)
    return fa == fb


@dataclass(frozen=True)
class RasterHeader:
    """Shape, sample type, georeferencing and nodata of one raster band."""

    width: int
    height: int
    sample_type: SampleType
    nodata: float | int | None = None
    geotransform: tuple[float, float, float, float] = (0.0, 0.0, 1.0, -1.0)
    crs_tag: str = ""
    layout: Layout = STRIPS

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("raster dimensions must be >= 1")
        ox, oy, px, py = self.geotransform
        if not (px > 0):
            raise ValueError("pixel_size_x must be > 0")
        if py == 0:
            raise ValueError("pixel_size_y must be nonzero")

    # -- world <-> pixel -------------------------------------------------

    @property
    def pixel_size(self):
        """(abs size x, abs size y) in meters per pixel."""
        return (self.geotransform[2], abs(self.geotransform[3]))

    @property
    def pixel_area(self):
        """Area of one pixel in square meters."""
        sx, sy = self.pixel_size
        return sx * sy

    @property
    def bounds(self):
        """(min_x, min_y, max_x, max_y) of the covered extent."""
        ox, oy, px, py = self.geotransform
        xs = (ox, ox + self.width * px)
        ys = (oy, oy + self.height * py)
        return (min(xs), min(ys), max(xs), max(ys))

    def pixel_center(self, col, row):
        """World coordinates of the center of pixel (col, row)."""
        ox, oy, px, py = self.geotransform
        return (ox + (col + 0.5) * px, oy + (row + 0.5) * py)

    def world_to_pixel(self, x, y):
        """Fractional (col, row) such that integer values land on centers."""
        ox, oy, px, py = self.geotransform
        return ((x - ox) / px - 0.5, (y - oy) / py - 0.5)

    def semantically_equal(self, other):
        """Header equality ignoring storage layout."""
        return (
            self.width == other.width
            and self.height == other.height
            and self.sample_type == other.sample_type
            and _nodata_equal(self.nodata, other.nodata)
            and self.geotransform == other.geotransform
            and self.crs_tag == other.crs_tag
        )


@dataclass(frozen=True, eq=False)
class Grid:
    """A raster band in memory: header plus a (height, width) sample array.

    Equality is semantic and bit-exact: headers must match (minus storage
    layout) and the sample buffers must be byte-identical, which makes NaN
    payloads and signed zeros significant.  Nodata cells are excluded from
    all statistics computed by this package.
    """

    header: RasterHeader
    samples: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=self.header.sample_type.dtype)
        if arr.size != self.header.width * self.header.height:
            raise ValueError(
                f"sample count {arr.size} != width*height "
                f"{self.header.width * self.header.height}"
            )
        arr = np.ascontiguousarray(arr.reshape(self.header.height, self.header.width))
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)

    # -- construction helpers --------------------------------------------

    @classmethod
    def from_array(cls, arr, geotransform=(0.0, 0.0, 1.0, -1.0), nodata=None,
                   crs_tag="", layout=STRIPS):
        arr = np.asarray(arr)
        header = RasterHeader(
            width=arr.shape[1],
            height=arr.shape[0],
            sample_type=SampleType.from_dtype(arr.dtype),
            nodata=nodata,
            geotransform=geotransform,
            crs_tag=crs_tag,
            layout=layout,
        )
        return cls(header, arr)

    def with_samples(self, arr, nodata="keep", sample_type=None):
        """New grid on the same georeferencing with replaced samples."""
        arr = np.asarray(arr)
        st = sample_type or SampleType.from_dtype(arr.dtype)
        nd = self.header.nodata if nodata == "keep" else nodata
        header = replace(self.header, sample_type=st, nodata=nd)
        return Grid(header, arr)

    # -- queries -----------------------------------------------------------

    @property
    def width(self):
        return self.header.width

    @property
    def height(self):
        return self.header.height

    def valid_mask(self):
        """Boolean array, True where the sample is not nodata (and not NaN)."""
        arr = self.samples
        if arr.dtype.kind == "f":
            mask = ~np.isnan(arr)
        else:
            mask = np.ones(arr.shape, dtype=bool)
        nd = self.header.nodata
        if nd is not None and not (isinstance(nd, float) and math.isnan(nd)):
            mask &= arr != np.asarray(nd, dtype=arr.dtype)
        return mask

    def as_float32(self, invalid=np.nan):
        """Samples as float32 with nodata cells replaced by ``invalid``."""
        out = self.samples.astype(np.float32, copy=True)
        out[~self.valid_mask()] = invalid
        return out

    def area_ha(self):
        """Covered extent in hectares."""
        return self.width * self.height * self.header.pixel_area / 1e4

    def __eq__(self, other):
        if not isinstance(other, Grid):
            return NotImplemented
        return (
            self.header.semantically_equal(other.header)
            and self.samples.tobytes() == other.samples.tobytes()
        )

    def __hash__(self):
        return hash((self.header.width, self.header.height, self.header.sample_type))
