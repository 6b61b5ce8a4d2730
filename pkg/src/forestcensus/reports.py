"""Inventory artifact writers: trees CSV, crowns GeoJSON, carbon JSON,
ground-plot CSV, and heatmap PNGs.

All floats in text artifacts are formatted at 6 significant digits so
repeated runs produce byte-identical files.
"""

from __future__ import annotations

import csv
import io
import json
import math

import numpy as np
from PIL import Image

TREE_CSV_COLUMNS = [
    "tree_id", "x", "y", "height_m", "crown_diameter_m", "crown_area_m2",
    "pixel_count", "species_id", "dbh_cm", "agb_kg", "carbon_kg", "co2e_kg",
]

PLOT_CSV_COLUMNS = ["x", "y", "radius_m", "biomass_mg_ha"]


def sig6(value):
    """Value rounded to 6 significant digits (the artifact float format)."""
    if isinstance(value, float):
        if math.isnan(value) or math.isinf(value):
            return value
        return float(f"{value:.6g}")
    return value


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def round_floats(obj):
    """Recursively apply sig6 to every float in a JSON-able structure."""
    if isinstance(obj, float):
        return sig6(obj)
    if isinstance(obj, dict):
        return {k: round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_floats(v) for v in obj]
    return obj


def dump_json(obj):
    """Deterministic JSON text: sorted keys, 6-sig-digit floats."""
    return json.dumps(round_floats(obj), sort_keys=True, indent=2) + "\n"


def trees_csv(crowns, biomass_by_id):
    """One row per tree: geometry from the crown record, mass from allometry."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TREE_CSV_COLUMNS)
    for rec in crowns:
        bio = biomass_by_id[rec.tree_id]
        writer.writerow([
            rec.tree_id,
            _fmt(rec.top.x), _fmt(rec.top.y), _fmt(rec.top.height),
            _fmt(rec.crown_diameter_m), _fmt(rec.crown_area_m2),
            rec.pixel_count, rec.species_id,
            _fmt(bio.dbh_cm), _fmt(bio.agb_kg), _fmt(bio.carbon_kg), _fmt(bio.co2e_kg),
        ])
    return buf.getvalue()


def plots_csv(plots):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PLOT_CSV_COLUMNS)
    for p in plots:
        writer.writerow([_fmt(p.x), _fmt(p.y), _fmt(p.radius_m), _fmt(p.biomass_mg_ha)])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Crown polygons
# ---------------------------------------------------------------------------


def _trace_rings(mask):
    """Closed boundary loops of a pixel region, in pixel-corner coordinates.

    Directed boundary edges keep the region on the right in image
    coordinates (y down), which becomes counterclockwise once y flips to
    world coordinates.
    """
    rows, cols = np.nonzero(mask)
    edges = {}

    def add(a, b):
        edges.setdefault(a, []).append(b)

    h, w = mask.shape
    for r, c in zip(rows.tolist(), cols.tolist()):
        if r == 0 or not mask[r - 1, c]:
            add((c, r), (c + 1, r))  # top, left -> right
        if c + 1 >= w or not mask[r, c + 1]:
            add((c + 1, r), (c + 1, r + 1))  # right, top -> bottom
        if r + 1 >= h or not mask[r + 1, c]:
            add((c + 1, r + 1), (c, r + 1))  # bottom, right -> left
        if c == 0 or not mask[r, c - 1]:
            add((c, r + 1), (c, r))  # left, bottom -> top

    rings = []
    while edges:
        start = min(edges)
        ring = [start]
        prev_dir = (0, -1)  # as if arriving heading north
        cur = start
        while True:
            outs = edges[cur]
            if len(outs) == 1:
                nxt = outs.pop()
            else:
                # pinch corner: take the sharpest right turn (max cross in
                # screen coordinates) so each loop stays simple
                px, py = prev_dir
                nxt = max(outs, key=lambda nb: px * (nb[1] - cur[1]) - py * (nb[0] - cur[0]))
                outs.remove(nxt)
            if not edges[cur]:
                del edges[cur]
            prev_dir = (nxt[0] - cur[0], nxt[1] - cur[1])
            cur = nxt
            if cur == start:
                break
            ring.append(cur)
        rings.append(ring)
    return rings


def _ring_area(ring):
    area = 0.0
    for (x0, y0), (x1, y1) in zip(ring, ring[1:] + ring[:1]):
        area += x0 * y1 - x1 * y0
    return area / 2.0


def _simplify(ring):
    """Drop collinear interior vertices of an axis-aligned ring."""
    out = []
    n = len(ring)
    for i in range(n):
        x0, y0 = ring[i - 1]
        x1, y1 = ring[i]
        x2, y2 = ring[(i + 1) % n]
        if (x1 - x0) * (y2 - y1) != (y1 - y0) * (x2 - x1):
            out.append(ring[i])
    return out or ring


def crown_polygons(labels, header, crowns):
    """Outer-ring world polygons for each crown label (holes are dropped)."""
    ox, oy, px, py = header.geotransform
    polygons = {}
    for rec in crowns:
        mask = labels == rec.tree_id
        if not mask.any():
            polygons[rec.tree_id] = []
            continue
        rings = _trace_rings(mask)
        outer = max(rings, key=lambda r: abs(_ring_area(r)))
        coords = [
            (sig6(ox + cx * px), sig6(oy + cy * py)) for cx, cy in _simplify(outer)
        ]
        if _ring_area(coords) < 0:  # RFC 7946: exterior rings counterclockwise
            coords.reverse()
        coords.append(coords[0])
        polygons[rec.tree_id] = coords
    return polygons


def crowns_geojson(labels, header, crowns):
    """RFC 7946 FeatureCollection, one polygon per crown."""
    polygons = crown_polygons(labels, header, crowns)
    features = []
    for rec in crowns:
        coords = polygons[rec.tree_id]
        features.append({
            "type": "Feature",
            "geometry": {
                "type": "Polygon",
                "coordinates": [[list(c) for c in coords]] if coords else [],
            },
            "properties": {
                "tree_id": rec.tree_id,
                "height_m": sig6(rec.top.height),
                "crown_diameter_m": sig6(rec.crown_diameter_m),
                "crown_area_m2": sig6(rec.crown_area_m2),
                "species_id": rec.species_id,
            },
        })
    collection = {
        "type": "FeatureCollection",
        "features": features,
        "crs_tag": header.crs_tag,  # foreign member: coordinates are in this CRS
    }
    return dump_json(collection)


def stand_carbon_json(stand, summary, extra=None):
    payload = {
        "area_ha": stand.area_ha,
        "tree_count": stand.tree_count,
        "agb_mg_per_ha": stand.agb_mg_per_ha,
        "carbon_mg_per_ha": stand.carbon_mg_per_ha,
        "co2e_t_per_ha": stand.co2e_t_per_ha,
        "total_agb_mg": stand.total_agb_mg,
        "total_carbon_mg": stand.total_carbon_mg,
        "total_co2e_t": stand.total_co2e_t,
        "census": summary.as_dict() if summary is not None else None,
        "note": "tree_count is visible crowns; sub-canopy stems are not observable",
    }
    if extra:
        payload.update(extra)
    return dump_json(payload)


# ---------------------------------------------------------------------------
# Heatmaps
# ---------------------------------------------------------------------------

PALETTES = {
    "viridis": [
        (68, 1, 84), (71, 44, 122), (59, 81, 139), (44, 113, 142),
        (33, 144, 141), (39, 173, 129), (92, 200, 99), (170, 220, 50),
        (253, 231, 37),
    ],
    "gray": [(0, 0, 0), (255, 255, 255)],
    "canopy": [(34, 26, 20), (60, 90, 40), (90, 160, 60), (180, 220, 120), (250, 250, 210)],
}


def render_heatmap(grid, palette="viridis"):
    """PIL RGBA image of a grid: min..max mapped over the palette, nodata
    transparent, constant grids a single color."""
    stops = PALETTES[palette]
    arr = grid.as_float32()
    valid = ~np.isnan(arr)
    rgba = np.zeros(arr.shape + (4,), dtype=np.uint8)
    if valid.any():
        lo = float(arr[valid].min())
        hi = float(arr[valid].max())
        span = hi - lo
        norm = (arr - lo) / span if span > 0 else np.zeros_like(arr)
        norm = np.clip(np.nan_to_num(norm), 0.0, 1.0)
        pos = norm * (len(stops) - 1)
        idx = np.minimum(pos.astype(np.int32), len(stops) - 2)
        frac = (pos - idx)[..., None]
        stops_arr = np.asarray(stops, dtype=np.float64)
        color = stops_arr[idx] * (1.0 - frac) + stops_arr[idx + 1] * frac
        rgba[..., :3] = np.round(color).astype(np.uint8)
        rgba[..., 3] = np.where(valid, 255, 0)
    return Image.fromarray(rgba, mode="RGBA")
