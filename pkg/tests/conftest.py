import numpy as np
import pytest

from forestcensus.grid import Grid, Layout, RasterHeader, SampleType

_ACCEPTANCE_LINES = []


def record_acceptance(line):
    _ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_grid(rng, width, height, sample_type, nodata=None, layout=None,
                crs_tag="EPSG:32718"):
    """Random Grid with a plausible geotransform; optional nodata holes."""
    if sample_type is SampleType.FLOAT32:
        arr = rng.uniform(-1000, 3000, size=(height, width)).astype(np.float32)
    elif sample_type is SampleType.UINT16:
        arr = rng.integers(0, 65536, size=(height, width), dtype=np.uint16)
    else:
        arr = rng.integers(0, 256, size=(height, width), dtype=np.uint8)
    if nodata is not None:
        holes = rng.random((height, width)) < 0.05
        arr[holes] = nodata
    gt = (
        float(rng.integers(100000, 900000)),
        float(rng.integers(1000000, 9000000)),
        float(rng.choice([0.05, 0.25, 0.5, 1.0, 30.0])),
        -float(rng.choice([0.05, 0.25, 0.5, 1.0, 30.0])),
    )
    header = RasterHeader(
        width=width,
        height=height,
        sample_type=sample_type,
        nodata=nodata,
        geotransform=gt,
        crs_tag=crs_tag,
        layout=layout or Layout.strips(),
    )
    return Grid(header, arr)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
