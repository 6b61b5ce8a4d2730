"""Canopy height model derivation and conditioning."""

import math

import numpy as np

from forestcensus.chm import ChmParams, derive_chm, fill_pits
from forestcensus.grid import Grid


def make(arr, gt=(0.0, 100.0, 1.0, -1.0), nodata=None):
    return Grid.from_array(np.asarray(arr, dtype=np.float32), geotransform=gt, nodata=nodata)


class TestDeriveChm:
    def test_constant_subtraction(self):
        dsm = make(np.full((10, 10), 125.0))
        dem = make(np.full((10, 10), 120.0))
        chm = derive_chm(dsm, dem)
        assert np.all(chm.samples == 5.0)

    def test_equal_inputs_all_zero(self):
        g = make(np.random.default_rng(3).uniform(100, 200, (8, 8)).astype(np.float32))
        chm = derive_chm(g, g)
        assert np.all(chm.samples == 0.0)

    def test_spike_above_cap_becomes_nodata(self):
        dsm_arr = np.zeros((9, 9), dtype=np.float32)
        dsm_arr[4, 4] = 200.0
        chm = derive_chm(make(dsm_arr), make(np.zeros((9, 9))),
                         ChmParams(smooth_radius=0))
        assert math.isnan(chm.samples[4, 4])
        assert chm.samples[0, 0] == 0.0

    def test_negative_clamp(self):
        dsm = make(np.full((4, 4), 10.0))
        dem = make(np.full((4, 4), 12.0))
        clamped = derive_chm(dsm, dem, ChmParams(smooth_radius=0))
        assert np.all(clamped.samples == 0.0)
        raw = derive_chm(dsm, dem, ChmParams(clamp_negative=False, smooth_radius=0))
        assert np.all(raw.samples == -2.0)

    def test_identity_chm_plus_dem_equals_dsm(self, rng):
        # Sterbenz range: dem <= dsm <= 2*dem keeps the subtraction exact
        dem_arr = rng.uniform(500, 1000, (50, 50)).astype(np.float32)
        dsm_arr = (dem_arr + rng.uniform(0, 80, (50, 50)).astype(np.float32)).astype(np.float32)
        chm = derive_chm(make(dsm_arr), make(dem_arr),
                         ChmParams(clamp_negative=False, smooth_radius=0))
        assert np.array_equal(chm.samples + dem_arr, dsm_arr)

    def test_translation_equivariance(self, rng):
        # values on a coarse binary grid so the +c additions are exact
        dem_arr = (rng.integers(0, 2**12, (20, 20)) * 0.25).astype(np.float32)
        dsm_arr = (dem_arr + rng.integers(0, 320, (20, 20)) * 0.25).astype(np.float32)
        p = ChmParams(smooth_radius=1)
        base = derive_chm(make(dsm_arr), make(dem_arr), p)
        c = np.float32(1024.0)
        shifted = derive_chm(make(dsm_arr + c), make(dem_arr + c), p)
        assert shifted.samples.tobytes() == base.samples.tobytes()

    def test_coarser_dem_is_aligned(self):
        dsm = make(np.full((8, 8), 130.0), gt=(0.0, 8.0, 1.0, -1.0))
        dem = make(np.full((4, 4), 120.0), gt=(0.0, 8.0, 2.0, -2.0))
        chm = derive_chm(dsm, dem, ChmParams(smooth_radius=0))
        assert np.all(chm.samples == 10.0)

    def test_chm_nonnegative_when_clamped(self, rng):
        dsm = make(rng.uniform(0, 50, (30, 30)).astype(np.float32))
        dem = make(rng.uniform(0, 50, (30, 30)).astype(np.float32))
        chm = derive_chm(dsm, dem, ChmParams(smooth_radius=1))
        vals = chm.samples[~np.isnan(chm.samples)]
        assert np.all(vals >= 0.0)


class TestFillPits:
    def test_pit_free_unchanged(self):
        g = make(np.full((6, 6), 10.0))
        assert fill_pits(g, 2.0) == g

    def test_single_pit_filled(self):
        arr = np.full((7, 7), 10.0, dtype=np.float32)
        arr[3, 3] = -5.0
        out = fill_pits(make(arr), 2.0)
        assert out.samples[3, 3] == 10.0

    def test_shallow_dip_kept(self):
        arr = np.full((7, 7), 10.0, dtype=np.float32)
        arr[3, 3] = 9.0
        out = fill_pits(make(arr), 2.0)
        assert out.samples[3, 3] == 9.0

    def test_no_remaining_pits_random(self, rng):
        for _ in range(20):
            arr = rng.uniform(0, 30, (15, 15)).astype(np.float32)
            out = fill_pits(make(arr), 1.5).samples
            # exhaustive post-scan: no pixel deeper than threshold below all
            # its neighbors
            for r in range(15):
                for c in range(15):
                    neigh = [
                        out[rr, cc]
                        for rr in range(max(0, r - 1), min(15, r + 2))
                        for cc in range(max(0, c - 1), min(15, c + 2))
                        if (rr, cc) != (r, c)
                    ]
                    assert min(neigh) - out[r, c] <= 1.5 + 1e-5
