"""Artifact writers: crown polygons, CSV/JSON formatting, heatmaps."""

import json

import numpy as np

from forestcensus.crowns import CrownRecord, TreeTop
from forestcensus.grid import Grid, RasterHeader, SampleType
from forestcensus.reports import (
    PALETTES,
    _ring_area,
    _trace_rings,
    crown_polygons,
    crowns_geojson,
    dump_json,
    render_heatmap,
    sig6,
    trees_csv,
)


def header(w, h, gt=(0.0, 10.0, 1.0, -1.0)):
    return RasterHeader(w, h, SampleType.FLOAT32, geotransform=gt)


def record(tree_id, col=1, row=1, height=10.0):
    top = TreeTop(col, row, col + 0.5, 10 - row - 0.5, height)
    return CrownRecord(tree_id, top, 4.0, 2.2567, 1, 4)


class TestRingTracing:
    def test_single_pixel_square(self):
        mask = np.zeros((3, 3), dtype=bool)
        mask[1, 1] = True
        rings = _trace_rings(mask)
        assert len(rings) == 1
        assert set(rings[0]) == {(1, 1), (2, 1), (2, 2), (1, 2)}

    def test_rectangle(self):
        mask = np.zeros((4, 5), dtype=bool)
        mask[1:3, 1:4] = True
        rings = _trace_rings(mask)
        assert len(rings) == 1
        assert abs(_ring_area(rings[0])) == 6.0

    def test_diagonal_pinch_gives_two_simple_rings(self):
        mask = np.zeros((2, 2), dtype=bool)
        mask[0, 0] = mask[1, 1] = True
        rings = _trace_rings(mask)
        assert len(rings) == 2
        assert all(abs(_ring_area(r)) == 1.0 for r in rings)

    def test_region_with_hole_outer_picked(self):
        mask = np.ones((5, 5), dtype=bool)
        mask[2, 2] = False
        rings = _trace_rings(mask)
        outer = max(rings, key=lambda r: abs(_ring_area(r)))
        assert abs(_ring_area(outer)) == 25.0


class TestCrownPolygons:
    def test_world_coordinates(self):
        labels = np.zeros((4, 4), dtype=np.int32)
        labels[1:3, 1:3] = 1
        h = header(4, 4, gt=(100.0, 200.0, 2.0, -2.0))
        polys = crown_polygons(labels, h, [record(1)])
        coords = polys[1]
        assert coords[0] == coords[-1]
        xs = [c[0] for c in coords]
        ys = [c[1] for c in coords]
        assert min(xs) == 102.0 and max(xs) == 106.0
        assert min(ys) == 194.0 and max(ys) == 198.0

    def test_outer_ring_is_counterclockwise_in_world(self):
        labels = np.zeros((4, 4), dtype=np.int32)
        labels[1:3, 1:3] = 1
        polys = crown_polygons(labels, header(4, 4), [record(1)])
        ring = polys[1][:-1]
        assert _ring_area(ring) > 0  # positive shoelace = CCW

    def test_geojson_structure(self):
        labels = np.zeros((4, 4), dtype=np.int32)
        labels[1:3, 1:3] = 1
        text = crowns_geojson(labels, header(4, 4), [record(1)])
        doc = json.loads(text)
        assert doc["type"] == "FeatureCollection"
        feat = doc["features"][0]
        assert feat["geometry"]["type"] == "Polygon"
        assert feat["properties"]["tree_id"] == 1
        assert feat["properties"]["height_m"] == 10.0
        ring = feat["geometry"]["coordinates"][0]
        assert ring[0] == ring[-1]


class TestFormatting:
    def test_sig6(self):
        assert sig6(1234567.89) == 1234570.0
        assert sig6(0.000123456789) == 0.000123457
        assert sig6(3) == 3

    def test_dump_json_deterministic(self):
        a = dump_json({"b": 1.23456789, "a": [0.1, 2.0]})
        b = dump_json({"a": [0.1, 2.0], "b": 1.23456789})
        assert a == b
        assert "1.23457" in a

    def test_trees_csv_columns(self):
        from forestcensus.allometry import TreeBiomass

        rec = record(1)
        text = trees_csv([rec], {1: TreeBiomass(1, 12.0, 345.678901, 162.0, 595.0)})
        lines = text.splitlines()
        assert lines[0].startswith("tree_id,x,y,height_m,crown_diameter_m")
        assert "345.679" in lines[1]


class TestHeatmap:
    def grid(self, arr, nodata=None):
        return Grid.from_array(np.asarray(arr, dtype=np.float32), nodata=nodata)

    def test_constant_grid_single_color(self):
        img = render_heatmap(self.grid(np.full((5, 5), 7.0)))
        colors = {img.getpixel((x, y)) for x in range(5) for y in range(5)}
        assert len(colors) == 1

    def test_nodata_transparent(self):
        arr = np.array([[1.0, np.nan], [2.0, 3.0]], dtype=np.float32)
        img = render_heatmap(self.grid(arr))
        assert img.getpixel((1, 0))[3] == 0
        assert img.getpixel((0, 0))[3] == 255

    def test_min_max_at_palette_endpoints(self):
        img = render_heatmap(self.grid([[0.0, 50.0], [100.0, 25.0]]), palette="viridis")
        assert img.getpixel((0, 0))[:3] == PALETTES["viridis"][0]
        assert img.getpixel((0, 1))[:3] == PALETTES["viridis"][-1]
