"""GeoTIFF reader/writer for a small, auditable subset of TIFF 6.0.

Supported: single-band UInt8/UInt16/Float32 rasters (plus band extraction
from 3- and 4-band interleaved images), strip and tile layouts, compression
None or Deflate, optional horizontal-differencing predictor, GDAL nodata
tag, ModelPixelScale/ModelTiepoint georeferencing, and GeoKeys carried as
an opaque CRS string.  Everything else raises UnsupportedFeature; structural
corruption raises Malformed.  Both errors carry the byte offset involved.

The predictor is applied to the unsigned integer representation of each
sample (for Float32 that is the raw 32-bit pattern, matching libtiff's
behaviour for 32-bit data), row by row, channel by channel.

Decoding is total: any byte sequence either yields a Grid or raises one of
the two structured errors above.
"""

from __future__ import annotations

import math
import re
import struct
import zlib

import numpy as np

from .errors import Malformed, UnsupportedFeature
from .grid import Grid, Layout, RasterHeader, SampleType, STRIPS

# Baseline + GeoTIFF tags in the supported subset
TAG_IMAGE_WIDTH = 256
TAG_IMAGE_LENGTH = 257
TAG_BITS_PER_SAMPLE = 258
TAG_COMPRESSION = 259
TAG_PHOTOMETRIC = 262
TAG_STRIP_OFFSETS = 273
TAG_ORIENTATION = 274
TAG_SAMPLES_PER_PIXEL = 277
TAG_ROWS_PER_STRIP = 278
TAG_STRIP_BYTE_COUNTS = 279
TAG_PLANAR_CONFIG = 284
TAG_PREDICTOR = 317
TAG_TILE_WIDTH = 322
TAG_TILE_LENGTH = 323
TAG_TILE_OFFSETS = 324
TAG_TILE_BYTE_COUNTS = 325
TAG_SAMPLE_FORMAT = 339
TAG_MODEL_PIXEL_SCALE = 33550
TAG_MODEL_TIEPOINT = 33922
TAG_GEO_KEY_DIRECTORY = 34735
TAG_GEO_DOUBLE_PARAMS = 34736
TAG_GEO_ASCII_PARAMS = 34737
TAG_GDAL_NODATA = 42113

COMPRESSION_NONE = 1
COMPRESSION_DEFLATE = 8

# TIFF field types: size in bytes and struct format char
_TYPE_SIZES = {1: 1, 2: 1, 3: 2, 4: 4, 5: 8, 6: 1, 7: 1, 8: 2, 9: 4, 10: 8, 11: 4, 12: 8}
_TYPE_FMT = {1: "B", 2: "c", 3: "H", 4: "I", 6: "b", 7: "B", 8: "h", 9: "i", 11: "f", 12: "d"}

# Refuse to allocate rasters above this many sample bytes (fuzz safety).
MAX_RASTER_BYTES = 2**31

_GEOKEY_PROJECTED_CRS = 3072
_GEOKEY_GEOGRAPHIC_CRS = 2048
_GEOKEY_CITATION = 1026


class _Reader:
    """Bounds-checked cursor over the raw file bytes."""

    def __init__(self, data):
        self.data = data
        if len(data) < 8:
            raise Malformed(0, "file shorter than TIFF header")
        order = data[:2]
        if order == b"II":
            self.end = "<"
        elif order == b"MM":
            self.end = ">"
        else:
            raise Malformed(0, f"bad byte-order mark {order!r}")
        magic = self.u16(2)
        if magic == 43:
            raise UnsupportedFeature("BigTIFF", 2)
        if magic != 42:
            raise Malformed(2, f"bad TIFF magic {magic}")

    def _need(self, offset, n):
        if offset < 0 or offset + n > len(self.data):
            raise Malformed(offset, f"read of {n} bytes past end of file")

    def u16(self, offset):
        self._need(offset, 2)
        return struct.unpack_from(self.end + "H", self.data, offset)[0]

    def u32(self, offset):
        self._need(offset, 4)
        return struct.unpack_from(self.end + "I", self.data, offset)[0]

    def raw(self, offset, n):
        self._need(offset, n)
        return self.data[offset : offset + n]

    def values(self, ftype, count, offset):
        """Decode `count` values of TIFF field type `ftype` at `offset`."""
        if ftype == 2:  # ASCII: return raw bytes
            return self.raw(offset, count)
        if ftype in (5, 10):  # (S)RATIONAL: pairs of (S)LONG
            fmt = "i" if ftype == 10 else "I"
            self._need(offset, 8 * count)
            flat = struct.unpack_from(self.end + fmt * (2 * count), self.data, offset)
            return [flat[2 * i] / flat[2 * i + 1] if flat[2 * i + 1] else math.inf
                    for i in range(count)]
        fmt = _TYPE_FMT.get(ftype)
        if fmt is None:
            return None  # unknown field type: tag is skipped by the caller
        size = _TYPE_SIZES[ftype]
        self._need(offset, size * count)
        return list(struct.unpack_from(self.end + fmt * count, self.data, offset))


def _parse_ifd(rd, ifd_offset):
    """Return {tag: (values, entry_offset)} for the IFD at ifd_offset."""
    n = rd.u16(ifd_offset)
    entries = {}
    for i in range(n):
        eoff = ifd_offset + 2 + 12 * i
        tag = rd.u16(eoff)
        ftype = rd.u16(eoff + 2)
        count = rd.u32(eoff + 4)
        size = _TYPE_SIZES.get(ftype)
        if size is None:
            continue  # unknown field type: skip tag
        total = size * count
        if total > 2**28:
            raise Malformed(eoff + 4, f"tag {tag} claims {total} value bytes")
        voff = eoff + 8 if total <= 4 else rd.u32(eoff + 8)
        values = rd.values(ftype, count, voff)
        if values is not None:
            entries[tag] = (values, eoff)
    # trailing next-IFD offset must be readable (truncation check); extra
    # IFDs (overviews/pyramids) are ignored
    rd.u32(ifd_offset + 2 + 12 * n)
    return entries


def _tag_scalar(entries, tag, default=None):
    """First value of a tag as int; default when absent or non-integral."""
    if tag not in entries:
        return default
    values, _ = entries[tag]
    if isinstance(values, (bytes, bytearray)) or len(values) < 1:
        return default
    try:
        return int(values[0])
    except (OverflowError, ValueError, TypeError):
        return default


def _tag_int_list(entries, tag):
    """All values of a tag as ints (offset/count arrays); Malformed if not."""
    values, eoff = entries[tag]
    if isinstance(values, (bytes, bytearray)):
        values = list(values)
    out = []
    for v in values:
        try:
            out.append(int(v))
        except (OverflowError, ValueError, TypeError):
            raise Malformed(eoff, f"non-integer value in tag {tag}") from None
    return out


def _undo_predictor(arr):
    """Invert horizontal differencing in place-free fashion.

    `arr` is (rows, cols, channels) of an unsigned integer dtype; returns
    the accumulated array in the same dtype (modular arithmetic).
    """
    bits = arr.dtype.itemsize * 8
    acc = np.cumsum(arr, axis=1, dtype=np.uint64)
    return (acc & ((1 << bits) - 1)).astype(arr.dtype)


def _apply_predictor(arr):
    """Horizontal differencing along rows; inverse of _undo_predictor."""
    out = arr.copy()
    out[:, 1:, :] = arr[:, 1:, :] - arr[:, :-1, :]  # unsigned wraparound
    return out


def _decode_block(rd, offset, count, compression, expected_bytes, block_name):
    """Return the raw (decompressed) bytes of one strip or tile."""
    raw = rd.raw(offset, count)
    if compression == COMPRESSION_NONE:
        if count != expected_bytes:
            raise Malformed(offset, f"{block_name} has {count} bytes, expected {expected_bytes}")
        return raw
    try:
        d = zlib.decompressobj()
        out = d.decompress(raw, expected_bytes + 1)
    except zlib.error as e:
        raise Malformed(offset, f"deflate error in {block_name}: {e}") from None
    if len(out) != expected_bytes or d.decompress(b"", 1):
        raise Malformed(offset, f"{block_name} decompressed to wrong size")
    return out


def _block_to_array(data, rows, cols, spp, sample_type, predictor, byte_order):
    """Decode one strip/tile payload into a native (rows, cols, spp) array."""
    dt = sample_type.dtype
    udt = np.dtype(f"u{dt.itemsize}")
    arr = np.frombuffer(data, dtype=udt.newbyteorder(byte_order))
    arr = arr.astype(udt).reshape(rows, cols, spp)
    if predictor == 2:
        arr = _undo_predictor(arr)
    if sample_type is SampleType.FLOAT32:
        return arr.view(np.float32)
    return arr.view(dt)


def _tag_bytes(entries, tag):
    """Tag payload as bytes, tolerating fuzzed non-ASCII field types."""
    values = entries[tag][0]
    if isinstance(values, (bytes, bytearray)):
        return bytes(values)
    try:
        return bytes(int(v) & 0xFF for v in values)
    except (TypeError, ValueError):
        return b""


def _crs_from_geokeys(entries):
    """Derive the opaque CRS tag string from the GeoKey tags."""
    ascii_params = b""
    if TAG_GEO_ASCII_PARAMS in entries:
        ascii_params = _tag_bytes(entries, TAG_GEO_ASCII_PARAMS)
    keydir = entries.get(TAG_GEO_KEY_DIRECTORY)
    if keydir is not None:
        shorts, eoff = keydir
        if len(shorts) < 4 or len(shorts) < 4 + 4 * shorts[3]:
            raise Malformed(eoff, "GeoKeyDirectory shorter than its key count")
        keys = {}
        for i in range(shorts[3]):
            kid, loc, cnt, val = shorts[4 + 4 * i : 8 + 4 * i]
            keys[kid] = (loc, cnt, val)
        for kid in (_GEOKEY_PROJECTED_CRS, _GEOKEY_GEOGRAPHIC_CRS):
            if kid in keys and keys[kid][0] == 0:
                code = keys[kid][2]
                if code not in (0, 32767):
                    return f"EPSG:{code}"
        if _GEOKEY_CITATION in keys and keys[_GEOKEY_CITATION][0] == TAG_GEO_ASCII_PARAMS:
            _, cnt, start = keys[_GEOKEY_CITATION]
            chunk = ascii_params[start : start + cnt]
            return chunk.decode("ascii", "replace").rstrip("\x00").rstrip("|")
    if ascii_params:
        return ascii_params.decode("ascii", "replace").rstrip("\x00").rstrip("|")
    return ""


def _geotransform_from_tags(entries):
    scale = entries.get(TAG_MODEL_PIXEL_SCALE)
    tie = entries.get(TAG_MODEL_TIEPOINT)
    if scale is None or tie is None:
        return (0.0, 0.0, 1.0, -1.0)
    sv, soff = scale
    tv, toff = tie
    if len(sv) < 2:
        raise Malformed(soff, "ModelPixelScale needs at least 2 values")
    if len(tv) < 6:
        raise Malformed(toff, "ModelTiepoint needs at least 6 values")
    sx, sy = float(sv[0]), float(sv[1])
    if not (sx > 0) or not math.isfinite(sx) or not math.isfinite(sy) or sy == 0:
        raise Malformed(soff, f"bad pixel scale ({sv[0]}, {sv[1]})")
    ti, tj, _, tx, ty = (float(v) for v in tv[:5])
    if not all(math.isfinite(v) for v in (ti, tj, tx, ty)):
        raise Malformed(toff, "non-finite tiepoint")
    # tiepoint maps raster (ti, tj) to world (tx, ty); scale_y > 0 is north-up
    return (tx - ti * sx, ty + tj * sy, sx, -sy)


def _nodata_from_tag(entries, sample_type):
    if TAG_GDAL_NODATA not in entries:
        return None
    try:
        text = _tag_bytes(entries, TAG_GDAL_NODATA).rstrip(b"\x00").decode("ascii").strip()
        value = float(text)
    except (ValueError, UnicodeDecodeError):
        return None  # unparseable nodata: carried rasters stay usable
    if sample_type is SampleType.FLOAT32:
        return value
    iv = int(value)
    lo, hi = 0, 2 ** (8 * sample_type.nbytes) - 1
    return iv if lo <= iv <= hi else None


def read_geotiff(data, band=None):
    """Decode a GeoTIFF byte sequence into a Grid.

    Parameters
    ----------
    data : bytes
        Complete file contents.
    band : int, optional
        Zero-based band to extract from a 3- or 4-band interleaved image.
        Must be None for single-band files (where it defaults to band 0).

    Raises
    ------
    Malformed
        Structural corruption, with the byte offset.
    UnsupportedFeature
        Anything outside the supported subset, with the byte offset.
    """
    rd = _Reader(bytes(data))
    ifd_offset = rd.u32(4)
    entries = _parse_ifd(rd, ifd_offset)

    def entry_offset(tag):
        return entries[tag][1] if tag in entries else ifd_offset

    width = _tag_scalar(entries, TAG_IMAGE_WIDTH)
    height = _tag_scalar(entries, TAG_IMAGE_LENGTH)
    if width is None or height is None:
        raise Malformed(ifd_offset, "missing ImageWidth/ImageLength")
    if width < 1 or height < 1:
        raise Malformed(entry_offset(TAG_IMAGE_WIDTH), f"bad raster size {width}x{height}")

    spp = _tag_scalar(entries, TAG_SAMPLES_PER_PIXEL, 1)
    if spp not in (1, 3, 4):
        raise UnsupportedFeature(f"{spp} samples per pixel", entry_offset(TAG_SAMPLES_PER_PIXEL))
    if spp > 1 and band is None:
        raise UnsupportedFeature(
            f"{spp} samples per pixel (pass band= to extract one band)",
            entry_offset(TAG_SAMPLES_PER_PIXEL),
        )
    if band is None:
        band = 0
    if not 0 <= band < spp:
        raise ValueError(f"band {band} out of range for {spp}-band image")

    compression = _tag_scalar(entries, TAG_COMPRESSION, COMPRESSION_NONE)
    if compression not in (COMPRESSION_NONE, COMPRESSION_DEFLATE):
        raise UnsupportedFeature(f"compression {compression}", entry_offset(TAG_COMPRESSION))

    predictor = _tag_scalar(entries, TAG_PREDICTOR, 1)
    if predictor not in (1, 2):
        raise UnsupportedFeature(f"predictor {predictor}", entry_offset(TAG_PREDICTOR))

    planar = _tag_scalar(entries, TAG_PLANAR_CONFIG, 1)
    if planar != 1:
        raise UnsupportedFeature(f"planar configuration {planar}", entry_offset(TAG_PLANAR_CONFIG))

    orientation = _tag_scalar(entries, TAG_ORIENTATION, 1)
    if orientation != 1:
        raise UnsupportedFeature(f"orientation {orientation}", entry_offset(TAG_ORIENTATION))

    bits_values = entries.get(TAG_BITS_PER_SAMPLE, ([8], ifd_offset))[0]
    if len(set(bits_values)) != 1:
        raise UnsupportedFeature("mixed bits per sample", entry_offset(TAG_BITS_PER_SAMPLE))
    bits = bits_values[0]

    fmt_values = entries.get(TAG_SAMPLE_FORMAT, ([1], ifd_offset))[0]
    if len(set(fmt_values)) != 1:
        raise UnsupportedFeature("mixed sample formats", entry_offset(TAG_SAMPLE_FORMAT))
    sample_format = fmt_values[0]

    try:
        sample_type = {
            (8, 1): SampleType.UINT8,
            (16, 1): SampleType.UINT16,
            (32, 3): SampleType.FLOAT32,
        }[(bits, sample_format)]
    except KeyError:
        raise UnsupportedFeature(
            f"{bits}-bit sample format {sample_format}", entry_offset(TAG_BITS_PER_SAMPLE)
        ) from None

    itemsize = sample_type.nbytes
    if width * height * spp * itemsize > MAX_RASTER_BYTES:
        raise UnsupportedFeature(
            f"raster of {width}x{height}x{spp} exceeds size cap",
            entry_offset(TAG_IMAGE_WIDTH),
        )

    tiled = TAG_TILE_OFFSETS in entries
    full = np.empty((height, width, spp), dtype=sample_type.dtype)

    if tiled:
        tile_w = _tag_scalar(entries, TAG_TILE_WIDTH)
        tile_h = _tag_scalar(entries, TAG_TILE_LENGTH)
        if not tile_w or not tile_h:
            raise Malformed(entry_offset(TAG_TILE_WIDTH), "missing tile dimensions")
        if tile_w % 16 or tile_h % 16:
            raise Malformed(entry_offset(TAG_TILE_WIDTH), f"tile size {tile_w}x{tile_h} not multiple of 16")
        offsets = _tag_int_list(entries, TAG_TILE_OFFSETS)
        if TAG_TILE_BYTE_COUNTS not in entries:
            raise Malformed(entry_offset(TAG_TILE_OFFSETS), "missing TileByteCounts")
        counts = _tag_int_list(entries, TAG_TILE_BYTE_COUNTS)
        across = (width + tile_w - 1) // tile_w
        down = (height + tile_h - 1) // tile_h
        if len(offsets) != across * down or len(counts) != across * down:
            raise Malformed(
                entry_offset(TAG_TILE_OFFSETS),
                f"expected {across * down} tiles, found {len(offsets)} offsets/{len(counts)} counts",
            )
        expected = tile_w * tile_h * spp * itemsize
        layout = Layout.tiles(tile_w, tile_h)
        for ty in range(down):
            for tx in range(across):
                i = ty * across + tx
                payload = _decode_block(rd, offsets[i], counts[i], compression, expected, f"tile {i}")
                arr = _block_to_array(payload, tile_h, tile_w, spp, sample_type, predictor, rd.end)
                rows = min(tile_h, height - ty * tile_h)
                cols = min(tile_w, width - tx * tile_w)
                full[ty * tile_h : ty * tile_h + rows, tx * tile_w : tx * tile_w + cols] = arr[:rows, :cols]
    else:
        if TAG_STRIP_OFFSETS not in entries:
            raise Malformed(ifd_offset, "no strip or tile offsets")
        offsets = _tag_int_list(entries, TAG_STRIP_OFFSETS)
        if TAG_STRIP_BYTE_COUNTS not in entries:
            raise Malformed(entry_offset(TAG_STRIP_OFFSETS), "missing StripByteCounts")
        counts = _tag_int_list(entries, TAG_STRIP_BYTE_COUNTS)
        rows_per_strip = _tag_scalar(entries, TAG_ROWS_PER_STRIP, height)
        if rows_per_strip < 1:
            raise Malformed(entry_offset(TAG_ROWS_PER_STRIP), "RowsPerStrip < 1")
        rows_per_strip = min(rows_per_strip, height)
        nstrips = (height + rows_per_strip - 1) // rows_per_strip
        if len(offsets) != nstrips or len(counts) != nstrips:
            raise Malformed(
                entry_offset(TAG_STRIP_OFFSETS),
                f"expected {nstrips} strips, found {len(offsets)} offsets/{len(counts)} counts",
            )
        layout = STRIPS
        for i in range(nstrips):
            rows = min(rows_per_strip, height - i * rows_per_strip)
            expected = rows * width * spp * itemsize
            payload = _decode_block(rd, offsets[i], counts[i], compression, expected, f"strip {i}")
            arr = _block_to_array(payload, rows, width, spp, sample_type, predictor, rd.end)
            full[i * rows_per_strip : i * rows_per_strip + rows] = arr

    header = RasterHeader(
        width=width,
        height=height,
        sample_type=sample_type,
        nodata=_nodata_from_tag(entries, sample_type),
        geotransform=_geotransform_from_tags(entries),
        crs_tag=_crs_from_geokeys(entries),
        layout=layout,
    )
    return Grid(header, np.ascontiguousarray(full[:, :, band]))


# ---------------------------------------------------------------------------
# Writer
# ---------------------------------------------------------------------------


def _geokey_tags(crs_tag):
    """GeoKeyDirectory (and optional ascii params) encoding the CRS string."""
    if not crs_tag:
        return None, None
    m = re.fullmatch(r"EPSG:(\d+)", crs_tag)
    if m and int(m.group(1)) < 32768:
        code = int(m.group(1))
        keydir = [1, 1, 0, 2, 1024, 0, 1, 1, _GEOKEY_PROJECTED_CRS, 0, 1, code]
        return keydir, None
    text = crs_tag.encode("ascii", "replace") + b"|"
    keydir = [1, 1, 0, 2, 1024, 0, 1, 0, _GEOKEY_CITATION, TAG_GEO_ASCII_PARAMS, len(text), 0]
    return keydir, text + b"\x00"


def _format_nodata(nodata, sample_type):
    if sample_type is SampleType.FLOAT32:
        value = float(nodata)
        text = "nan" if math.isnan(value) else repr(value)
    else:
        text = str(int(nodata))
    return text.encode("ascii") + b"\x00"


def write_geotiff(grid, *, layout=None, compression="deflate", predictor=False):
    """Encode a Grid as a little-endian GeoTIFF byte sequence.

    By default writes 256x256 Deflate-compressed tiles; `layout` may name a
    strip layout or another tile size, and `predictor` turns on horizontal
    differencing.  The output re-reads to a Grid equal to the input
    (storage layout aside).
    """
    if layout is None:
        layout = Layout.tiles(256, 256)
    if compression not in ("none", "deflate"):
        raise ValueError(f"unsupported compression {compression!r}")
    comp_tag = COMPRESSION_DEFLATE if compression == "deflate" else COMPRESSION_NONE

    header = grid.header
    st = header.sample_type
    itemsize = st.nbytes
    samples = grid.samples
    udt = np.dtype(f"u{itemsize}")

    def encode_block(arr):
        # arr: (rows, cols) in native dtype
        block = arr.reshape(arr.shape[0], arr.shape[1], 1).view(udt)
        if predictor:
            block = _apply_predictor(block)
        raw = np.ascontiguousarray(block.astype(udt.newbyteorder("<"))).tobytes()
        return zlib.compress(raw, 6) if comp_tag == COMPRESSION_DEFLATE else raw

    blocks = []
    if layout.kind == "tiles":
        tw, th = layout.tile_w, layout.tile_h
        across = (header.width + tw - 1) // tw
        down = (header.height + th - 1) // th
        for ty in range(down):
            for tx in range(across):
                tile = np.zeros((th, tw), dtype=st.dtype)
                rows = min(th, header.height - ty * th)
                cols = min(tw, header.width - tx * tw)
                tile[:rows, :cols] = samples[ty * th : ty * th + rows, tx * tw : tx * tw + cols]
                blocks.append(encode_block(tile))
    else:
        row_bytes = header.width * itemsize
        rows_per_strip = max(1, min(header.height, 65536 // max(1, row_bytes)))
        for r0 in range(0, header.height, rows_per_strip):
            blocks.append(encode_block(samples[r0 : r0 + rows_per_strip]))

    bits = itemsize * 8
    sample_format = 3 if st is SampleType.FLOAT32 else 1
    ox, oy, px, py = header.geotransform
    keydir, geo_ascii = _geokey_tags(header.crs_tag)

    # entries: (tag, field_type, values) with values a list or bytes
    tags = [
        (TAG_IMAGE_WIDTH, 4, [header.width]),
        (TAG_IMAGE_LENGTH, 4, [header.height]),
        (TAG_BITS_PER_SAMPLE, 3, [bits]),
        (TAG_COMPRESSION, 3, [comp_tag]),
        (TAG_PHOTOMETRIC, 3, [1]),
        (TAG_SAMPLES_PER_PIXEL, 3, [1]),
        (TAG_PLANAR_CONFIG, 3, [1]),
        (TAG_SAMPLE_FORMAT, 3, [sample_format]),
        (TAG_MODEL_PIXEL_SCALE, 12, [px, -py, 0.0]),
        (TAG_MODEL_TIEPOINT, 12, [0.0, 0.0, 0.0, ox, oy, 0.0]),
    ]
    if layout.kind == "tiles":
        tags += [
            (TAG_TILE_WIDTH, 3, [layout.tile_w]),
            (TAG_TILE_LENGTH, 3, [layout.tile_h]),
            (TAG_TILE_OFFSETS, 4, [0] * len(blocks)),
            (TAG_TILE_BYTE_COUNTS, 4, [len(b) for b in blocks]),
        ]
    else:
        tags += [
            (TAG_STRIP_OFFSETS, 4, [0] * len(blocks)),
            (TAG_ROWS_PER_STRIP, 4, [rows_per_strip]),
            (TAG_STRIP_BYTE_COUNTS, 4, [len(b) for b in blocks]),
        ]
    if predictor:
        tags.append((TAG_PREDICTOR, 3, [2]))
    if keydir is not None:
        tags.append((TAG_GEO_KEY_DIRECTORY, 3, keydir))
    if geo_ascii is not None:
        tags.append((TAG_GEO_ASCII_PARAMS, 2, geo_ascii))
    if header.nodata is not None:
        tags.append((TAG_GDAL_NODATA, 2, _format_nodata(header.nodata, st)))
    tags.sort(key=lambda t: t[0])

    def pack_values(ftype, values):
        if ftype == 2:
            return bytes(values)
        return struct.pack("<" + _TYPE_FMT[ftype] * len(values), *values)

    ifd_offset = 8
    ifd_size = 2 + 12 * len(tags) + 4
    overflow_offset = ifd_offset + ifd_size
    overflow = []
    packed = []
    for tag, ftype, values in tags:
        raw = pack_values(ftype, values)
        count = len(values) if ftype == 2 else len(values)
        if len(raw) <= 4:
            packed.append((tag, ftype, count, raw.ljust(4, b"\x00"), None))
        else:
            if len(raw) % 2:
                raw += b"\x00"
            packed.append((tag, ftype, count, None, overflow_offset))
            overflow_offset += len(raw)
            overflow.append(raw)

    data_offset = overflow_offset
    block_offsets = []
    for b in blocks:
        block_offsets.append(data_offset)
        data_offset += len(b) + (len(b) % 2)

    offsets_tag = TAG_TILE_OFFSETS if layout.kind == "tiles" else TAG_STRIP_OFFSETS
    out = bytearray()
    out += b"II" + struct.pack("<HI", 42, ifd_offset)
    out += struct.pack("<H", len(tags))
    overflow_iter = iter(range(len(overflow)))
    rebuilt_overflow = list(overflow)
    for i, (tag, ftype, count, inline, voff) in enumerate(packed):
        if tag == offsets_tag:
            raw = pack_values(4, block_offsets)
            if inline is not None:
                inline = raw.ljust(4, b"\x00")
            else:
                idx = sum(1 for p in packed[:i] if p[4] is not None)
                rebuilt_overflow[idx] = raw if len(raw) % 2 == 0 else raw + b"\x00"
        out += struct.pack("<HHI", tag, ftype, count)
        out += inline if inline is not None else struct.pack("<I", voff)
    out += struct.pack("<I", 0)  # no further IFDs
    for raw in rebuilt_overflow:
        out += raw
    for b in blocks:
        out += b
        if len(b) % 2:
            out += b"\x00"
    return bytes(out)
