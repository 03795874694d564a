import os
import logging

import numpy as np
import pytest

from src.core.constants import RUN_SLOW_ENV_VAR
from src.imaging.datacube import DataCube4D, Layout, ScanCalibration


def pytest_collection_modifyitems(config, items):
    if os.environ.get(RUN_SLOW_ENV_VAR) == "1":
        return
    skip_slow = pytest.mark.skip(reason=f"set {RUN_SLOW_ENV_VAR}=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def _detach_package_handlers():
    yield
    package_logger = logging.getLogger("src")
    for handler in list(package_logger.handlers):
        package_logger.removeHandler(handler)
        handler.close()


def calibration(detector=8, **overrides) -> ScanCalibration:
    params = dict(step_size=4.0, energy=300.0, convergence=3.0, defocus=0.0, detector_pixel=1.0,
                  detector_shape=(detector, detector))
    params.update(overrides)
    return ScanCalibration(**params)


def unit_flux_cube(rng: np.random.Generator, scan=(4, 4), detector=8, **overrides) -> DataCube4D:
    values = rng.random(tuple(scan) + (detector, detector)) + 0.05
    values /= values.sum(axis=(2, 3), keepdims=True)
    return DataCube4D(values=values, calib=calibration(detector, **overrides), layout=Layout.REAL_MAJOR)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_calib():
    """16x16 detector at 1 mrad/px with a 5 mrad probe: a fast simulation geometry."""
    return calibration(16, convergence=5.0)
