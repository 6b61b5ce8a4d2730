"""Crown delineation tests, including the independent priority-flood oracle.

The oracle below re-implements the flood contract with plain heapq and
tuple keys instead of the packed-integer binary heap used by the
implementation; agreement must be pixel-exact.
"""

import heapq
import math

import numpy as np
import pytest

from forestcensus.crowns import (
    CrownParams,
    census,
    crown_labels,
    detect_treetops,
    watershed_crowns,
)
from forestcensus.errors import MarkerOutsideCanopy
from forestcensus.grid import Grid


def make_chm(arr, res=0.5):
    return Grid.from_array(
        np.asarray(arr, dtype=np.float32),
        geotransform=(0.0, arr.shape[0] * res, res, -res),
        nodata=float("nan"),
    )


def stamp_paraboloid(arr, res, x, y, height, diameter, base_fraction=0.0):
    """Crown surface: apex `height` at (x, y) falling to base at the rim."""
    h, w = arr.shape
    radius = diameter / 2.0
    for r in range(h):
        for c in range(w):
            cx = (c + 0.5) * res
            cy = (h - r - 0.5) * res
            d2 = (cx - x) ** 2 + (cy - y) ** 2
            if d2 <= radius**2:
                z = height * (1.0 - (1.0 - base_fraction) * d2 / radius**2)
                arr[r, c] = max(arr[r, c], z)
    return arr


def flood_oracle(chm, tops, params):
    """Brute-force priority flood with heapq tuples; same contract."""
    arr = chm.as_float32()
    h, w = arr.shape
    canopy = (~np.isnan(arr)) & (arr >= np.float32(params.min_tree_height))
    labels = np.zeros((h, w), dtype=np.int32)
    heap = []
    seq = 0
    for i, t in enumerate(tops):
        labels[t.row, t.col] = i + 1
    for t in tops:
        heapq.heappush(heap, (-float(arr[t.row, t.col]), seq, t.row, t.col))
        seq += 1
    floors = [params.crown_floor_fraction * t.height for t in tops]
    while heap:
        _, _, r, c = heapq.heappop(heap)
        lab = labels[r, c]
        floor = floors[lab - 1]
        for dr, dc in ((-1, 0), (0, -1), (0, 1), (1, 0)):
            rr, cc = r + dr, c + dc
            if not (0 <= rr < h and 0 <= cc < w):
                continue
            if labels[rr, cc] != 0 or not canopy[rr, cc]:
                continue
            if arr[rr, cc] < floor:
                continue
            labels[rr, cc] = lab
            heapq.heappush(heap, (-float(arr[rr, cc]), seq, rr, cc))
            seq += 1
    return labels


class TestDetectTreetops:
    def test_all_zero_chm_empty(self):
        assert detect_treetops(make_chm(np.zeros((20, 20)))) == []

    def test_single_paraboloid_apex(self):
        arr = np.zeros((40, 40), dtype=np.float32)
        stamp_paraboloid(arr, 0.5, 10.0, 10.0, 12.0, 8.0)
        tops = detect_treetops(make_chm(arr))
        assert len(tops) == 1
        # apex (10, 10) is equidistant from four pixel centers; the plateau
        # rule picks the lowest (row, col)
        assert (tops[0].col, tops[0].row) == (19, 19)
        # height reads the CHM at the apex pixel center, at most half a
        # pixel diagonal from the true apex
        assert tops[0].height == pytest.approx(12.0, abs=12.0 * 0.125 / 16.0 + 1e-6)

    def test_ten_nonoverlapping_crowns(self, rng):
        res = 0.5
        arr = np.zeros((120, 120), dtype=np.float32)
        placed = []
        while len(placed) < 10:
            x = float(rng.uniform(6, 54))
            y = float(rng.uniform(6, 54))
            if all((x - px) ** 2 + (y - py) ** 2 > 9.0**2 for px, py in placed):
                placed.append((x, y))
        heights = [float(rng.uniform(8, 20)) for _ in placed]
        for (x, y), hgt in zip(placed, heights):
            stamp_paraboloid(arr, res, x, y, hgt, 7.0)
        tops = detect_treetops(make_chm(arr, res))
        assert len(tops) == 10
        got = {(t.col, t.row) for t in tops}
        for x, y in placed:
            col, row = int(x / res), int(120 - y / res)
            assert any(abs(c - col) <= 1 and abs(r - row) <= 1 for c, r in got)

    def test_sorted_by_descending_height(self, rng):
        arr = np.zeros((80, 80), dtype=np.float32)
        stamp_paraboloid(arr, 0.5, 10.0, 10.0, 18.0, 6.0)
        stamp_paraboloid(arr, 0.5, 30.0, 30.0, 9.0, 6.0)
        stamp_paraboloid(arr, 0.5, 10.0, 30.0, 13.5, 6.0)
        tops = detect_treetops(make_chm(arr, 0.5))
        heights = [t.height for t in tops]
        assert heights == sorted(heights, reverse=True)

    def test_plateau_resolved_to_lowest_row_col(self):
        arr = np.zeros((20, 20), dtype=np.float32)
        arr[8:11, 8:11] = 10.0  # 3x3 plateau
        tops = detect_treetops(make_chm(arr, 1.0), CrownParams(min_window_radius=5.0))
        assert len(tops) == 1
        assert (tops[0].row, tops[0].col) == (8, 8)

    def test_monotone_in_min_tree_height(self, rng):
        arr = rng.uniform(0, 30, (50, 50)).astype(np.float32)
        counts = []
        for minh in (2.0, 5.0, 10.0, 20.0):
            params = CrownParams(min_tree_height=minh)
            counts.append(len(detect_treetops(make_chm(arr), params)))
        assert counts == sorted(counts, reverse=True)

    def test_taller_trees_suppress_larger_neighborhood(self):
        # two 4 m-apart apexes: both survive when short, one when tall
        res = 0.5
        short = np.zeros((60, 60), dtype=np.float32)
        stamp_paraboloid(short, res, 14.0, 15.0, 8.0, 5.0)
        stamp_paraboloid(short, res, 18.0, 15.0, 7.0, 5.0)
        tall = np.zeros((60, 60), dtype=np.float32)
        stamp_paraboloid(tall, res, 14.0, 15.0, 28.0, 5.0)
        stamp_paraboloid(tall, res, 18.0, 15.0, 24.5, 5.0)
        p = CrownParams(window_fraction=0.15)
        assert len(detect_treetops(make_chm(short, res), p)) == 2
        assert len(detect_treetops(make_chm(tall, res), p)) == 1


class TestWatershed:
    def test_zero_markers_zero_records(self):
        chm = make_chm(np.zeros((10, 10)))
        assert watershed_crowns(chm, [], None) == []

    def test_single_crown_claims_above_floor(self):
        res = 0.5
        arr = np.zeros((60, 60), dtype=np.float32)
        stamp_paraboloid(arr, res, 15.0, 15.0, 12.0, 10.0)
        chm = make_chm(arr, res)
        params = CrownParams(min_tree_height=2.0, crown_floor_fraction=0.3)
        tops = detect_treetops(chm, params)
        records = watershed_crowns(chm, tops, None, params)
        assert len(records) == 1
        rec = records[0]
        expect = ((~np.isnan(arr)) & (arr >= max(2.0, 0.3 * rec.top.height))).sum()
        assert rec.pixel_count == expect
        assert rec.crown_diameter_m == pytest.approx(
            2.0 * math.sqrt(rec.crown_area_m2 / math.pi)
        )

    def test_marker_outside_canopy_raises(self):
        chm = make_chm(np.zeros((10, 10)))
        fake = detect_treetops(make_chm(np.full((10, 10), 10.0)))
        with pytest.raises(MarkerOutsideCanopy):
            crown_labels(chm, fake[:1])

    def test_two_equal_paraboloids_split_at_saddle(self):
        res = 0.5
        arr = np.zeros((40, 80), dtype=np.float32)
        stamp_paraboloid(arr, res, 12.0, 10.0, 10.0, 12.0)
        stamp_paraboloid(arr, res, 22.0, 10.0, 10.0, 12.0)
        chm = make_chm(arr, res)
        params = CrownParams(min_tree_height=2.0)
        tops = detect_treetops(chm, params)
        assert len(tops) == 2
        labels = crown_labels(chm, tops, params)
        oracle = flood_oracle(chm, tops, params)
        assert np.array_equal(labels, oracle)
        # boundary near the midline x = 17 -> col 34
        cols1 = np.nonzero(labels == 1)[1]
        cols2 = np.nonzero(labels == 2)[1]
        boundary = 17.0 / res
        assert abs(max(min(cols1), min(cols2)) - boundary) <= boundary
        assert set(np.unique(labels)) == {0, 1, 2}

    def test_matches_oracle_on_random_chms(self, rng):
        params = CrownParams(min_tree_height=3.0, crown_floor_fraction=0.3)
        for trial in range(100):
            h = int(rng.integers(4, 65))
            w = int(rng.integers(4, 65))
            arr = rng.uniform(0, 25, (h, w)).astype(np.float32)
            # quantize some heights to force plateau/tie handling
            if trial % 3 == 0:
                arr = np.round(arr).astype(np.float32)
            arr[rng.random((h, w)) < 0.08] = np.nan
            chm = make_chm(arr)
            tops = detect_treetops(chm, params)
            got = crown_labels(chm, tops, params)
            expect = flood_oracle(chm, tops, params)
            assert np.array_equal(got, expect), f"trial {trial}"

    def test_partition_and_ownership_invariants(self, rng):
        params = CrownParams(min_tree_height=3.0)
        arr = rng.uniform(0, 22, (60, 60)).astype(np.float32)
        chm = make_chm(arr)
        tops = detect_treetops(chm, params)
        labels = crown_labels(chm, tops, params)
        records = watershed_crowns(chm, tops, None, params)
        assert len(records) == len(tops)  # count identity
        valid = ~np.isnan(arr)
        assert np.all(arr[(labels > 0) & valid] >= 3.0)
        for i, t in enumerate(tops):
            assert labels[t.row, t.col] == i + 1  # owns its top, and only its

    def test_determinism(self, rng):
        arr = rng.uniform(0, 25, (50, 50)).astype(np.float32)
        chm = make_chm(arr)
        tops = detect_treetops(chm)
        a = crown_labels(chm, tops)
        b = crown_labels(chm, tops)
        assert a.tobytes() == b.tobytes()

    def test_modal_species_attached(self):
        res = 0.5
        arr = np.zeros((40, 40), dtype=np.float32)
        stamp_paraboloid(arr, res, 10.0, 10.0, 10.0, 8.0)
        chm = make_chm(arr, res)
        tops = detect_treetops(chm, CrownParams(min_tree_height=2.0))
        spec_arr = np.zeros((40, 40), dtype=np.uint8)
        spec_arr[:, :] = 0
        spec_arr[15:25, 15:25] = 2
        species = Grid(chm.header.__class__(
            width=40, height=40, sample_type=chm.header.sample_type.__class__.UINT8,
            nodata=None, geotransform=chm.header.geotransform,
            crs_tag=chm.header.crs_tag,
        ), spec_arr)
        records = watershed_crowns(chm, tops, species, CrownParams(min_tree_height=2.0))
        assert records[0].species_id == 2


class TestCensus:
    def test_empty(self):
        summary = census([], 1.0)
        assert summary.tree_count == 0 and summary.stems_per_ha == 0.0

    def test_density(self):
        res = 0.5
        arr = np.zeros((40, 40), dtype=np.float32)
        stamp_paraboloid(arr, res, 10.0, 10.0, 10.0, 8.0)
        chm = make_chm(arr, res)
        tops = detect_treetops(chm, CrownParams(min_tree_height=2.0))
        records = watershed_crowns(chm, tops, None, CrownParams(min_tree_height=2.0))
        records = records * 7  # pretend 7 identical trees
        summary = census(records, 1.0)
        assert summary.stems_per_ha == pytest.approx(7.0)
        assert summary.tree_count == 7

    def test_histograms_cover_all_trees(self, rng):
        arr = rng.uniform(0, 28, (60, 60)).astype(np.float32)
        chm = make_chm(arr)
        tops = detect_treetops(chm)
        records = watershed_crowns(chm, tops, None)
        summary = census(records, chm.area_ha())
        assert sum(b[2] for b in summary.height_histogram) == summary.tree_count
        assert sum(b[2] for b in summary.diameter_histogram) == summary.tree_count
