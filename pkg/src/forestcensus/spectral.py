"""Per-pixel species classification from RGB-NIR imagery.

A deterministic nearest-centroid classifier stands in for a trained
segmentation model: pixels below the NDVI canopy gate are labeled 0
(non-canopy), the rest take the species whose (r, g, b, nir) centroid is
nearest in Euclidean distance.  The output SpeciesMap grid is the same
interface a trained model would produce, so a model-generated raster can
be substituted directly downstream.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace

import numpy as np

from .errors import EmptySignatureSet
from .grid import Grid, SampleType
from .gridops import map2, GridPair

DEFAULT_NDVI_THRESHOLD = 0.3


@dataclass(frozen=True)
class SpectralSignature:
    """Spectral centroid of one species in reflectance units [0, 1]."""

    species_id: int
    label: str
    centroid: tuple[float, float, float, float]  # (r, g, b, nir)

    def __post_init__(self):
        if not 1 <= self.species_id <= 255:
            raise ValueError("species_id must be in 1..255 (0 is non-canopy)")
        if len(self.centroid) != 4 or not all(0.0 <= c <= 1.0 for c in self.centroid):
            raise ValueError("centroid components must be in [0, 1]")


def ndvi(red, nir):
    """Normalized difference vegetation index (nir - red) / (nir + red).

    Pixels where nir + red == 0 become nodata.  Values land in [-1, 1]
    for inputs in [0, 1].
    """

    if not _same_geom(red, nir):
        raise ValueError("ndvi requires aligned red and nir grids")

    def f(r, n):
        denom = n + r
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (n - r) / denom
        out[denom == 0] = np.nan
        return out

    return map2(GridPair(red, nir, "exact"), f)


def _same_geom(a, b):
    return (a.header.width, a.header.height, a.header.geotransform) == (
        b.header.width,
        b.header.height,
        b.header.geotransform,
    )


def classify_pixels(red, green, blue, nir, signatures,
                    ndvi_canopy_threshold=DEFAULT_NDVI_THRESHOLD):
    """Label each pixel with the nearest spectral centroid.

    Pixels with NDVI below the canopy threshold (or with any invalid band)
    get label 0.  Distance ties break to the lowest species_id.
    """
    if not signatures:
        raise EmptySignatureSet("at least one spectral signature is required")
    bands = (red, green, blue, nir)
    for g in bands[1:]:
        if not _same_geom(bands[0], g):
            raise ValueError("classify_pixels requires four aligned bands")
    sigs = sorted(signatures, key=lambda s: s.species_id)
    ids = [s.species_id for s in sigs]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate species_id in signature set")

    stack = np.stack([g.as_float32() for g in bands], axis=-1)  # (h, w, 4)
    valid = ~np.isnan(stack).any(axis=-1)
    vi = ndvi(red, nir).samples
    canopy = valid & ~np.isnan(vi) & (vi >= np.float32(ndvi_canopy_threshold))

    centroids = np.asarray([s.centroid for s in sigs], dtype=np.float32)  # (n, 4)
    d2 = np.zeros((len(sigs),) + stack.shape[:2], dtype=np.float32)
    for i, c in enumerate(centroids):
        diff = stack - c
        d2[i] = np.einsum("hwc,hwc->hw", diff, diff)
    # argmin returns the first minimum; sigs are sorted by species_id, so
    # ties resolve to the lowest id
    nearest = np.argmin(d2, axis=0)
    labels = np.where(canopy, np.asarray(ids, dtype=np.uint8)[nearest], 0).astype(np.uint8)
    header = replace(bands[0].header, sample_type=SampleType.UINT8, nodata=None)
    return Grid(header, labels)


def majority_filter(species_map, radius):
    """Despeckle a species map: each canopy pixel takes the modal nonzero
    label in its square window; ties keep the original label.  Non-canopy
    (0) pixels are left untouched, and no label absent from a window is
    ever introduced."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius == 0:
        return species_map
    labels = species_map.samples
    present = [int(v) for v in np.unique(labels) if v != 0]
    if not present:
        return species_map
    h, w = labels.shape
    k = 2 * radius + 1
    counts = np.zeros((len(present), h, w), dtype=np.int32)
    for i, lab in enumerate(present):
        mask = (labels == lab).astype(np.int32)
        counts[i] = _box_sum(mask, k)
    best = np.max(counts, axis=0)
    n_best = np.sum(counts == best, axis=0)
    winner_idx = np.argmax(counts, axis=0)
    winner = np.asarray(present, dtype=np.uint8)[winner_idx]
    out = labels.copy()
    replaceable = (labels != 0) & (best > 0) & (n_best == 1)
    out[replaceable] = winner[replaceable]
    return Grid(species_map.header, out)


def _box_sum(arr, k):
    """Sum over centered k x k windows (zero beyond borders)."""
    r = k // 2
    padded = np.pad(arr, ((r + 1, r), (r + 1, r)), mode="constant")
    ii = padded.cumsum(axis=0).cumsum(axis=1)
    h, w = arr.shape
    return (
        ii[k:, k:][:h, :w]
        - ii[:-k, k:][:h, :w]
        - ii[k:, :-k][:h, :w]
        + ii[:-k, :-k][:h, :w]
    )


def load_signature_csv(text):
    """Parse the shared signature file.

    Columns: species_id,label,r,g,b,nir,wood_density,crown_dbh_a,crown_dbh_b.
    Returns (signatures, species_params) where species_params rows are
    dicts consumed by the allometry module.
    """
    reader = csv.DictReader(io.StringIO(text))
    required = {"species_id", "label", "r", "g", "b", "nir",
                "wood_density", "crown_dbh_a", "crown_dbh_b"}
    if reader.fieldnames is None or not required.issubset(reader.fieldnames):
        missing = sorted(required - set(reader.fieldnames or []))
        raise ValueError(f"signature file missing columns: {', '.join(missing)}")
    signatures, params = [], []
    for row in reader:
        sid = int(row["species_id"])
        signatures.append(
            SpectralSignature(
                species_id=sid,
                label=row["label"],
                centroid=(float(row["r"]), float(row["g"]),
                          float(row["b"]), float(row["nir"])),
            )
        )
        params.append(
            dict(
                species_id=sid,
                label=row["label"],
                wood_density=float(row["wood_density"]),
                crown_dbh_a=float(row["crown_dbh_a"]),
                crown_dbh_b=float(row["crown_dbh_b"]),
            )
        )
    return signatures, params


def dump_signature_csv(rows):
    """Inverse of load_signature_csv; rows carry signature + allometry fields."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["species_id", "label", "r", "g", "b", "nir",
                     "wood_density", "crown_dbh_a", "crown_dbh_b"])
    for row in rows:
        writer.writerow([
            row["species_id"], row["label"],
            *(format(v, ".6g") for v in row["centroid"]),
            format(row["wood_density"], ".6g"),
            format(row["crown_dbh_a"], ".6g"),
            format(row["crown_dbh_b"], ".6g"),
        ])
    return buf.getvalue()
