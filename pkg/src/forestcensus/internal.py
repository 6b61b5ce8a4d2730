"""Trivial internal raster format ("CCR1") for fixtures and scratch files.

Layout, all little-endian:

    magic       4s   b"CCR1"
    width       u32
    height      u32
    sample_type u8   0=UInt8, 1=UInt16, 2=Float32
    layout_kind u8   0=strips, 1=tiles
    tile_w      u16
    tile_h      u16
    has_nodata  u8
    nodata      f64
    geotransform 4 x f64
    crs_len     u16
    crs         crs_len bytes of UTF-8
    samples     width*height samples, row-major, little-endian
"""

from __future__ import annotations

import math
import struct

import numpy as np

from .errors import Malformed
from .grid import Grid, Layout, RasterHeader, SampleType, STRIPS

MAGIC = b"CCR1"
_SAMPLE_CODES = {SampleType.UINT8: 0, SampleType.UINT16: 1, SampleType.FLOAT32: 2}
_CODE_SAMPLES = {v: k for k, v in _SAMPLE_CODES.items()}
_HEAD = struct.Struct("<4sIIBBHHBd4dH")


def write_internal(grid):
    """Serialize a Grid losslessly to bytes."""
    h = grid.header
    nodata = h.nodata
    crs = h.crs_tag.encode("utf-8")
    head = _HEAD.pack(
        MAGIC,
        h.width,
        h.height,
        _SAMPLE_CODES[h.sample_type],
        1 if h.layout.kind == "tiles" else 0,
        h.layout.tile_w,
        h.layout.tile_h,
        0 if nodata is None else 1,
        0.0 if nodata is None else float(nodata),
        *h.geotransform,
        len(crs),
    )
    samples = grid.samples.astype(grid.samples.dtype.newbyteorder("<"), copy=False)
    return head + crs + samples.tobytes()


def read_internal(data):
    """Parse bytes produced by write_internal back into a Grid."""
    data = bytes(data)
    if len(data) < _HEAD.size:
        raise Malformed(0, "file shorter than CCR1 header")
    (magic, width, height, st_code, layout_kind, tile_w, tile_h,
     has_nodata, nodata, ox, oy, px, py, crs_len) = _HEAD.unpack_from(data, 0)
    if magic != MAGIC:
        raise Malformed(0, f"bad magic {magic!r}")
    if st_code not in _CODE_SAMPLES:
        raise Malformed(12, f"bad sample type code {st_code}")
    sample_type = _CODE_SAMPLES[st_code]
    if width < 1 or height < 1:
        raise Malformed(4, f"bad raster size {width}x{height}")
    if not (px > 0) or py == 0 or not all(map(math.isfinite, (ox, oy, px, py))):
        raise Malformed(22, "bad geotransform")
    crs_start = _HEAD.size
    if crs_start + crs_len > len(data):
        raise Malformed(crs_start, "CRS string truncated")
    try:
        crs = data[crs_start : crs_start + crs_len].decode("utf-8")
    except UnicodeDecodeError:
        raise Malformed(crs_start, "CRS string is not valid UTF-8") from None
    if layout_kind == 1:
        try:
            layout = Layout.tiles(tile_w, tile_h)
        except ValueError as e:
            raise Malformed(14, str(e)) from None
    elif layout_kind == 0:
        layout = STRIPS
    else:
        raise Malformed(13, f"bad layout kind {layout_kind}")
    body = crs_start + crs_len
    expected = width * height * sample_type.nbytes
    if len(data) - body != expected:
        raise Malformed(body, f"sample payload is {len(data) - body} bytes, expected {expected}")
    samples = np.frombuffer(
        data, dtype=sample_type.dtype.newbyteorder("<"), count=width * height, offset=body
    ).astype(sample_type.dtype)
    if sample_type is not SampleType.FLOAT32:
        nd = int(nodata) if has_nodata else None
    else:
        nd = float(nodata) if has_nodata else None
    header = RasterHeader(
        width=width,
        height=height,
        sample_type=sample_type,
        nodata=nd,
        geotransform=(ox, oy, px, py),
        crs_tag=crs,
        layout=layout,
    )
    return Grid(header, samples.reshape(height, width))
