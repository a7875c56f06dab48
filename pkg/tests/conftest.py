import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from scope_kit.grid import GridSpec, LidarScan

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def spec():
    return GridSpec()


def make_scan(ranges, bearings, range_max=30.0):
    """Scan with explicit per-beam bearings."""
    ranges = np.asarray(ranges, dtype=float)
    return LidarScan(ranges, 0.0, 0.0, range_max=range_max, angles=np.asarray(bearings, dtype=float))


@pytest.fixture(scope="session")
def pipeline_run(tmp_path_factory):
    """One full CLI pipeline run: (output directory, {relative path: bytes})."""
    from pipeline import run_pipeline

    d = tmp_path_factory.mktemp("pipeline_a")
    return d, run_pipeline(d)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
