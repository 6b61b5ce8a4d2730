"""Individual tree crown delineation: variable-window treetop detection and
marker-controlled watershed on the inverted CHM.

Flood semantics (shared with the brute-force test oracle, which must agree
pixel-exactly): treetop markers are claimed first in descending-height
order; the frontier is a priority queue keyed by (-height, insertion
sequence), so equal heights flood first-in-first-out; popping a pixel
claims its unclaimed 4-neighbors for its crown if they are canopy (>=
min_tree_height) and above the crown's floor (crown_floor_fraction x its
top height).  Neighbor order is N, W, E, S.  Identical inputs give
byte-identical outputs regardless of scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import MarkerOutsideCanopy

NEIGHBORS_4 = ((-1, 0), (0, -1), (0, 1), (1, 0))


@dataclass(frozen=True)
class CrownParams:
    min_tree_height: float = 3.0
    window_fraction: float = 0.10  # window radius as a fraction of local height
    min_window_radius: float = 1.0  # meters
    crown_floor_fraction: float = 0.3

    def __post_init__(self):
        if min(self.min_tree_height, self.window_fraction,
               self.min_window_radius, self.crown_floor_fraction) <= 0:
            raise ValueError("crown parameters must be positive")
        if self.window_fraction >= 1:
            raise ValueError("window_fraction must be < 1")


@dataclass(frozen=True)
class TreeTop:
    col: int
    row: int
    x: float
    y: float
    height: float


@dataclass(frozen=True)
class CrownRecord:
    tree_id: int
    top: TreeTop
    crown_area_m2: float
    crown_diameter_m: float
    species_id: int
    pixel_count: int


@dataclass(frozen=True)
class CensusSummary:
    tree_count: int
    stems_per_ha: float
    count_per_species: dict
    height_histogram: list  # (bin_low, bin_high, count)
    diameter_histogram: list

    def as_dict(self):
        return {
            "tree_count": self.tree_count,
            "stems_per_ha": self.stems_per_ha,
            "count_per_species": {str(k): v for k, v in sorted(self.count_per_species.items())},
            "height_histogram": [list(b) for b in self.height_histogram],
            "diameter_histogram": [list(b) for b in self.diameter_histogram],
        }


@njit(cache=True)
def _verify_maxima(arr, rows, cols, min_radius, frac, px, py):
    """Exact variable-circular-window strict-maximum check per candidate.

    A candidate survives if no valid pixel in its window is higher, and no
    equal-height pixel precedes it in (row, col) order.
    """
    h, w = arr.shape
    keep = np.zeros(rows.shape[0], dtype=np.bool_)
    for i in range(rows.shape[0]):
        r = rows[i]
        c = cols[i]
        v = arr[r, c]
        radius = min_radius
        if frac * v > radius:
            radius = frac * v
        r2 = radius * radius
        dr_max = int(radius / py) + 1
        dc_max = int(radius / px) + 1
        ok = True
        for dr in range(-dr_max, dr_max + 1):
            rr = r + dr
            if rr < 0 or rr >= h:
                continue
            for dc in range(-dc_max, dc_max + 1):
                cc = c + dc
                if cc < 0 or cc >= w or (dr == 0 and dc == 0):
                    continue
                if (dc * px) ** 2 + (dr * py) ** 2 > r2:
                    continue
                q = arr[rr, cc]
                if np.isnan(q):
                    continue
                if q > v or (q == v and (rr < r or (rr == r and cc < c))):
                    ok = False
                    break
            if not ok:
                break
        keep[i] = ok
    return keep


@njit(cache=True)
def _sliding_square_max(arr, s):
    """Max over (2s+1)^2 windows, NaN treated as -inf; separable passes."""
    h, w = arr.shape
    tmp = np.empty((h, w), dtype=np.float32)
    out = np.empty((h, w), dtype=np.float32)
    neg_inf = np.float32(-np.inf)
    for r in range(h):
        for c in range(w):
            m = neg_inf
            lo = c - s if c - s > 0 else 0
            hi = c + s + 1 if c + s + 1 < w else w
            for cc in range(lo, hi):
                v = arr[r, cc]
                if not np.isnan(v) and v > m:
                    m = v
            tmp[r, c] = m
    for r in range(h):
        lo_r = r - s if r - s > 0 else 0
        hi_r = r + s + 1 if r + s + 1 < h else h
        for c in range(w):
            m = neg_inf
            for rr in range(lo_r, hi_r):
                if tmp[rr, c] > m:
                    m = tmp[rr, c]
            out[r, c] = m
    return out


def detect_treetops(chm, params=CrownParams()):
    """Find treetop pixels: strict maxima of the CHM within a circular
    window whose radius grows with local height.

    Returns TreeTops sorted by descending height (ties by row, then col).
    """
    arr = chm.as_float32()
    px, py = chm.header.pixel_size
    candidates = (~np.isnan(arr)) & (arr >= np.float32(params.min_tree_height))
    if not candidates.any():
        return []
    # cheap screening: the square inscribed in the minimum window rejects
    # pixels that cannot be maxima of any (larger) exact window
    s = int(params.min_window_radius / math.hypot(px, py))
    if s >= 1:
        candidates &= arr == _sliding_square_max(arr, s)
    rows, cols = np.nonzero(candidates)
    keep = _verify_maxima(
        arr, rows.astype(np.int64), cols.astype(np.int64),
        float(params.min_window_radius), float(params.window_fraction),
        float(px), float(py),
    )
    rows, cols = rows[keep], cols[keep]
    heights = arr[rows, cols]
    order = np.lexsort((cols, rows, -heights.astype(np.float64)))
    tops = []
    for i in order:
        x, y = chm.header.pixel_center(int(cols[i]), int(rows[i]))
        tops.append(TreeTop(int(cols[i]), int(rows[i]), float(x), float(y), float(heights[i])))
    return tops


@njit(cache=True)
def _float32_sort_key(v):
    """Order-preserving uint32 image of a float32 (finite values)."""
    u = np.uint32(np.float32(v).view(np.uint32))
    if u & np.uint32(0x80000000):
        return np.uint32(~u)
    return np.uint32(u | np.uint32(0x80000000))


@njit(cache=True)
def _flood(arr, canopy, marker_rows, marker_cols, floors, labels):
    """Priority flood from markers; labels must start all-zero.

    Heap key packs (-height as sortable uint32) << 32 | sequence, so pops
    come in decreasing height with FIFO ties; the key layout is part of
    the algorithm contract shared with the test oracle.
    """
    h, w = arr.shape
    n_markers = marker_rows.shape[0]
    cap = int(canopy.sum()) + n_markers + 1
    keys = np.empty(cap, dtype=np.uint64)
    pixels = np.empty(cap, dtype=np.int64)
    size = 0
    seq = 0

    # claim markers first, in marker order
    for m in range(n_markers):
        r, c = marker_rows[m], marker_cols[m]
        labels[r, c] = m + 1
    for m in range(n_markers):
        r, c = marker_rows[m], marker_cols[m]
        key = (np.uint64(_float32_sort_key(-arr[r, c])) << np.uint64(32)) | np.uint64(seq)
        seq += 1
        # heap push
        keys[size] = key
        pixels[size] = r * w + c
        size += 1
        i = size - 1
        while i > 0:
            parent = (i - 1) // 2
            if keys[parent] <= keys[i]:
                break
            keys[parent], keys[i] = keys[i], keys[parent]
            pixels[parent], pixels[i] = pixels[i], pixels[parent]
            i = parent

    while size > 0:
        p = pixels[0]
        # heap pop
        size -= 1
        keys[0] = keys[size]
        pixels[0] = pixels[size]
        i = 0
        while True:
            left = 2 * i + 1
            right = left + 1
            smallest = i
            if left < size and keys[left] < keys[smallest]:
                smallest = left
            if right < size and keys[right] < keys[smallest]:
                smallest = right
            if smallest == i:
                break
            keys[smallest], keys[i] = keys[i], keys[smallest]
            pixels[smallest], pixels[i] = pixels[i], pixels[smallest]
            i = smallest

        r = p // w
        c = p % w
        lab = labels[r, c]
        floor = floors[lab - 1]
        for k in range(4):
            if k == 0:
                rr, cc = r - 1, c
            elif k == 1:
                rr, cc = r, c - 1
            elif k == 2:
                rr, cc = r, c + 1
            else:
                rr, cc = r + 1, c
            if rr < 0 or rr >= h or cc < 0 or cc >= w:
                continue
            if labels[rr, cc] != 0 or not canopy[rr, cc]:
                continue
            if arr[rr, cc] < floor:
                continue
            labels[rr, cc] = lab
            key = (np.uint64(_float32_sort_key(-arr[rr, cc])) << np.uint64(32)) | np.uint64(seq)
            seq += 1
            keys[size] = key
            pixels[size] = rr * w + cc
            size += 1
            i = size - 1
            while i > 0:
                parent = (i - 1) // 2
                if keys[parent] <= keys[i]:
                    break
                keys[parent], keys[i] = keys[i], keys[parent]
                pixels[parent], pixels[i] = pixels[i], pixels[parent]
                i = parent
    return labels


def crown_labels(chm, tops, params=CrownParams()):
    """Label grid of crown memberships (0 = unassigned; see module docstring
    for the flood contract)."""
    arr = chm.as_float32()
    canopy = (~np.isnan(arr)) & (arr >= np.float32(params.min_tree_height))
    labels = np.zeros(arr.shape, dtype=np.int32)
    if not tops:
        return labels
    rows = np.asarray([t.row for t in tops], dtype=np.int64)
    cols = np.asarray([t.col for t in tops], dtype=np.int64)
    for t in tops:
        if not canopy[t.row, t.col]:
            raise MarkerOutsideCanopy(
                f"marker at ({t.col}, {t.row}) has height below min_tree_height"
            )
    seen = set(zip(rows.tolist(), cols.tolist()))
    if len(seen) != len(tops):
        raise ValueError("duplicate treetop markers")
    floors = np.asarray([params.crown_floor_fraction * t.height for t in tops],
                        dtype=np.float64)
    return _flood(arr, canopy, rows, cols, floors, labels)


def watershed_crowns(chm, tops, species_map, params=CrownParams()):
    """Delineate one crown region per treetop and attach modal species."""
    labels = crown_labels(chm, tops, params)
    if not tops:
        return []
    n = len(tops)
    pixel_area = chm.header.pixel_area
    counts = np.bincount(labels.ravel(), minlength=n + 1)
    if species_map is not None:
        spec = species_map.samples.astype(np.int64)
        max_s = int(spec.max()) if spec.size else 0
        combo = labels.astype(np.int64) * (max_s + 1) + spec
        combined = np.bincount(combo.ravel(), minlength=(n + 1) * (max_s + 1))
        per_crown = combined.reshape(n + 1, max_s + 1)
    else:
        per_crown = None

    records = []
    for i, top in enumerate(tops):
        lab = i + 1
        pix = int(counts[lab])
        area = pix * pixel_area
        diameter = 2.0 * math.sqrt(area / math.pi)
        species_id = 0
        if per_crown is not None and per_crown.shape[1] > 1:
            nonzero = per_crown[lab, 1:]
            if nonzero.max() > 0:
                species_id = int(np.argmax(nonzero)) + 1  # first max = lowest id
        records.append(
            CrownRecord(
                tree_id=lab,
                top=top,
                crown_area_m2=float(area),
                crown_diameter_m=float(diameter),
                species_id=species_id,
                pixel_count=pix,
            )
        )
    return records


def census(crowns, area_ha, height_bin=5.0, diameter_bin=2.0):
    """Stand-level counts and histograms from crown records.

    Counts visible crowns (the only trees a drone census can see); one
    record contributes one stem.
    """
    if area_ha <= 0:
        raise ValueError("area_ha must be positive")
    per_species = {}
    for rec in crowns:
        per_species[rec.species_id] = per_species.get(rec.species_id, 0) + 1

    def histogram(values, width):
        if not values:
            return []
        top = max(values)
        n_bins = int(top // width) + 1
        bins = [[i * width, (i + 1) * width, 0] for i in range(n_bins)]
        for v in values:
            bins[min(int(v // width), n_bins - 1)][2] += 1
        return [tuple(b) for b in bins]

    return CensusSummary(
        tree_count=len(crowns),
        stems_per_ha=len(crowns) / area_ha,
        count_per_species=per_species,
        height_histogram=histogram([c.top.height for c in crowns], height_bin),
        diameter_histogram=histogram([c.crown_diameter_m for c in crowns], diameter_bin),
    )
