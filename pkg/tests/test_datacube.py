import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from src.core.error_handler import ConfigError, DataError, ShapeError
from src.imaging.datacube import (
    DataCube4D,
    Layout,
    ScanCalibration,
    apply_affine,
    estimate_center,
    recenter,
    rotation_about_center,
    transpose_domains,
)
from tests.conftest import calibration, unit_flux_cube


def _delta_cube(position, scan=(2, 3), detector=8, value=1.0):
    values = np.zeros(tuple(scan) + (detector, detector))
    values[:, :, position[0], position[1]] = value
    return DataCube4D(values=values, calib=calibration(detector))


# ----------------------------------------------------------------------
# calibration
# ----------------------------------------------------------------------
def test_calibration_defaults_center_to_detector_midpoint():
    calib = calibration(32)
    assert calib.center == (16.0, 16.0)


@pytest.mark.parametrize("overrides", [
    {"step_size": 0.0},
    {"energy": -1.0},
    {"convergence": float("nan")},
    {"center": (40.0, 2.0)},
])
def test_calibration_rejects_invalid_values(overrides):
    with pytest.raises(ConfigError):
        calibration(8, **overrides)


def test_calibration_dict_round_trip():
    calib = calibration(16, defocus=1500.0, center=(7.5, 8.25))
    assert ScanCalibration.from_dict(calib.to_dict()) == calib


def test_angle_grid_is_relative_to_center():
    ax, ay = calibration(8, detector_pixel=0.5).angle_grid()
    assert ax[4, 0] == 0.0
    assert ay[0, 6] == 1.0
    assert ax.shape == (8, 8)


# ----------------------------------------------------------------------
# DataCube4D
# ----------------------------------------------------------------------
def test_cube_rejects_wrong_rank():
    with pytest.raises(ShapeError):
        DataCube4D(values=np.zeros((4, 4, 8)), calib=calibration(8))


def test_cube_rejects_detector_mismatch():
    with pytest.raises(ShapeError):
        DataCube4D(values=np.zeros((4, 4, 6, 6)), calib=calibration(8))


def test_unsigned_cube_rejects_negative_values():
    values = np.zeros((2, 2, 8, 8))
    values[0, 0, 0, 0] = -1.0
    with pytest.raises(DataError):
        DataCube4D(values=values, calib=calibration(8))
    signed = DataCube4D(values=values, calib=calibration(8), signed=True)
    assert signed.values.min() == -1.0


def test_cube_values_are_read_only(rng):
    cube = unit_flux_cube(rng)
    with pytest.raises(ValueError):
        cube.values[0, 0, 0, 0] = 5.0


# ----------------------------------------------------------------------
# domain interconversion
# ----------------------------------------------------------------------
def test_transpose_moves_entries():
    values = np.zeros((2, 2, 2, 2))
    values[0, 1, 1, 0] = 7.0
    cube = DataCube4D(values=values, calib=calibration(2))
    swapped = transpose_domains(cube)
    assert swapped.layout is Layout.RECIP_MAJOR
    assert swapped.values[1, 0, 0, 1] == 7.0
    assert swapped.values.sum() == 7.0


def test_transpose_is_involution(rng):
    cube = unit_flux_cube(rng, scan=(4, 4), detector=8)
    back = transpose_domains(transpose_domains(cube))
    assert back.layout is Layout.REAL_MAJOR
    assert_array_equal(back.values, cube.values)
    assert back.values.sum() == cube.values.sum()


def test_recip_major_cube_reports_scan_shape(rng):
    cube = transpose_domains(unit_flux_cube(rng, scan=(3, 5), detector=8))
    assert cube.scan_shape == (3, 5)
    assert cube.detector_shape == (8, 8)
    assert cube.real_major().values.shape == (3, 5, 8, 8)


# ----------------------------------------------------------------------
# center estimation
# ----------------------------------------------------------------------
def test_center_of_single_bright_pixel():
    assert estimate_center(_delta_cube((3, 5))) == (3.0, 5.0)


def test_center_of_two_equal_pixels():
    values = np.zeros((2, 2, 8, 8))
    values[:, :, 2, 2] = 1.0
    values[:, :, 6, 2] = 1.0
    cube = DataCube4D(values=values, calib=calibration(8))
    assert_allclose(estimate_center(cube), (4.0, 2.0))


def test_center_of_symmetric_disk():
    k = 16
    qx, qy = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
    disk = (np.hypot(qx - k // 2, qy - k // 2) <= 4).astype(np.float64)
    cube = DataCube4D(values=np.broadcast_to(disk, (2, 2, k, k)).copy(), calib=calibration(k))
    assert_allclose(estimate_center(cube), (k // 2, k // 2), atol=1e-6)


def test_center_of_empty_cube_fails():
    cube = DataCube4D(values=np.zeros((2, 2, 8, 8)), calib=calibration(8))
    with pytest.raises(DataError, match="empty datacube"):
        estimate_center(cube)


# ----------------------------------------------------------------------
# recentering
# ----------------------------------------------------------------------
def test_recenter_integer_shift():
    moved = recenter(_delta_cube((3, 5)), target=(4, 5))
    assert moved.values[0, 0, 4, 5] == 1.0
    assert moved.values.sum() == pytest.approx(6.0)
    assert moved.calib.center == (4.0, 5.0)


def test_recenter_half_pixel_shift_splits_weight():
    moved = recenter(_delta_cube((3, 5)), target=(3.5, 5))
    assert_allclose(moved.values[1, 2, 3, 5], 0.5)
    assert_allclose(moved.values[1, 2, 4, 5], 0.5)
    assert_allclose(moved.values[1, 2].sum(), 1.0)


def test_recenter_to_current_center_is_identity():
    cube = _delta_cube((4, 4))
    assert_allclose(recenter(cube).values, cube.values, atol=1e-6)


def test_recenter_out_of_range():
    values = np.zeros((1, 1, 16, 16))
    values[0, 0, 0, 0] = 1.0
    cube = DataCube4D(values=values, calib=calibration(16))
    with pytest.raises(DataError, match="center out of range"):
        recenter(cube, target=(12, 12))


# ----------------------------------------------------------------------
# affine calibration
# ----------------------------------------------------------------------
def test_identity_affine_is_bit_exact(rng):
    cube = unit_flux_cube(rng)
    result = apply_affine(cube, np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))
    assert_array_equal(result.values, cube.values)


def test_translation_matches_recenter():
    cube = _delta_cube((3, 5))
    translated = apply_affine(cube, np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 0.0]]))
    shifted = recenter(cube, target=(4, 5))
    assert_allclose(translated.values, shifted.values, atol=1e-12)


def test_rotation_moves_pixels_to_rotated_coordinates():
    values = np.zeros((1, 2, 9, 9))
    values[:, :, 4, 4] = 1.0
    values[:, :, 6, 4] = 2.0
    cube = DataCube4D(values=values, calib=calibration(9))
    rotated = apply_affine(cube, rotation_about_center(90.0, cube.calib.center))
    assert_allclose(rotated.values[0, 0, 4, 6], 2.0, atol=1e-9)
    assert_allclose(rotated.values[0, 0, 4, 4], 1.0, atol=1e-9)
    assert_allclose(rotated.values[0, 0, 6, 4], 0.0, atol=1e-9)
    assert_allclose(rotated.calib.center, (4.0, 4.0), atol=1e-12)


def test_affine_validation(rng):
    cube = unit_flux_cube(rng)
    with pytest.raises(ShapeError):
        apply_affine(cube, np.eye(2))
    with pytest.raises(DataError, match="degenerate affine"):
        apply_affine(cube, np.array([[1.0, 2.0, 0.0], [2.0, 4.0, 0.0]]))
