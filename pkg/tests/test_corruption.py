import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from src.core.config import CorruptionConfig
from src.core.error_handler import ConfigError, DataError
from src.imaging.corruption import DoseSpec, apply_dose, sample_corruption
from src.imaging.datacube import DataCube4D, transpose_domains
from tests.conftest import calibration, unit_flux_cube


def _flat_cube(scan=(32, 32), detector=8) -> DataCube4D:
    values = np.full(tuple(scan) + (detector, detector), 1.0 / detector ** 2)
    return DataCube4D(values=values, calib=calibration(detector))


def test_poisson_counts_match_dose():
    # 100 e/Å² at 4 Å steps spreads 1600 electrons over 64 pixels
    noisy = apply_dose(_flat_cube(), DoseSpec(dose=100.0, seed=1))
    counts = noisy.values
    assert not noisy.signed
    assert_array_equal(counts, np.rint(counts))
    assert counts.mean() == pytest.approx(25.0, abs=0.2)
    assert counts.var() == pytest.approx(25.0, rel=0.05)
    assert counts.sum(axis=(2, 3)).mean() == pytest.approx(1600.0, rel=0.01)


def test_infinite_dose_is_noise_free(rng):
    cube = unit_flux_cube(rng)
    counts = apply_dose(cube, DoseSpec(dose=math.inf, seed=7)).values
    assert_allclose(counts, cube.values * 1000.0 * 16.0, rtol=1e-12)


def test_same_seed_reproduces_counts(rng):
    cube = unit_flux_cube(rng)
    first = apply_dose(cube, DoseSpec(dose=50.0, gaussian_sigma=0.3, seed=11)).values
    second = apply_dose(cube, DoseSpec(dose=50.0, gaussian_sigma=0.3, seed=11)).values
    other = apply_dose(cube, DoseSpec(dose=50.0, gaussian_sigma=0.3, seed=12)).values
    assert_array_equal(first, second)
    assert not np.array_equal(first, other)


def test_gaussian_noise_makes_cube_signed():
    noisy = apply_dose(_flat_cube(), DoseSpec(dose=100.0, gaussian_sigma=2.0, seed=3))
    assert noisy.signed
    assert not np.array_equal(noisy.values, np.rint(noisy.values))
    assert noisy.values.var() == pytest.approx(29.0, rel=0.05)


def test_bias_without_sigma_is_a_constant_offset(rng):
    cube = unit_flux_cube(rng)
    plain = apply_dose(cube, DoseSpec(dose=30.0, seed=5)).values
    shifted = apply_dose(cube, DoseSpec(dose=30.0, bias=-2.0, seed=5))
    assert shifted.signed
    assert_allclose(shifted.values, plain - 2.0)


def test_rejects_cube_without_unit_flux(rng):
    cube = unit_flux_cube(rng)
    doubled = DataCube4D(values=cube.values * 2.0, calib=cube.calib)
    with pytest.raises(DataError, match="expected unit-flux cube"):
        apply_dose(doubled, DoseSpec(dose=100.0))


def test_rejects_recip_major_cube(rng):
    with pytest.raises(DataError):
        apply_dose(transpose_domains(unit_flux_cube(rng)), DoseSpec(dose=100.0))


@pytest.mark.parametrize("kwargs", [
    {"dose": 0.0},
    {"dose": -5.0},
    {"dose": float("nan")},
    {"dose": 10.0, "gaussian_sigma": -1.0},
    {"dose": 10.0, "reference_dose": math.inf},
])
def test_dose_spec_validation(kwargs):
    with pytest.raises(ConfigError):
        DoseSpec(**kwargs)


# ----------------------------------------------------------------------
# training-time sampling
# ----------------------------------------------------------------------
def test_sample_corruption_is_deterministic():
    cfg = CorruptionConfig(dose_min=10.0, dose_max=1000.0, sigma_max=0.5, seed=99)
    assert sample_corruption(3, cfg, 4) == sample_corruption(3, cfg, 4)
    assert sample_corruption(3, cfg, 4) != sample_corruption(4, cfg, 4)
    assert sample_corruption(3, cfg, 4) != sample_corruption(3, cfg, 5)


def test_sample_corruption_stays_in_range():
    cfg = CorruptionConfig(dose_min=10.0, dose_max=1000.0, sigma_min=0.1, sigma_max=0.5,
                           bias_min=-1.0, bias_max=1.0, seed=2)
    specs = [sample_corruption(epoch, cfg, index) for epoch in range(20) for index in range(10)]
    doses = np.array([spec.dose for spec in specs])
    assert doses.min() >= 10.0 and doses.max() <= 1000.0
    # log-uniform: about half the draws fall below the geometric midpoint
    assert 0.35 < np.mean(doses < 100.0) < 0.65
    assert all(0.1 <= spec.gaussian_sigma <= 0.5 for spec in specs)
    assert all(-1.0 <= spec.bias <= 1.0 for spec in specs)


def test_fixed_dose_range():
    cfg = CorruptionConfig(dose_min=250.0, dose_max=250.0, sigma_max=0.0)
    spec = sample_corruption(0, cfg, 0)
    assert spec.dose == 250.0
    assert spec.gaussian_sigma == 0.0


def test_infinite_dose_range():
    cfg = CorruptionConfig(dose_min=math.inf, dose_max=math.inf, sigma_max=0.0)
    assert sample_corruption(1, cfg, 2).infinite
