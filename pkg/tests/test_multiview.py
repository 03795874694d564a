import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from src.core.config import ViewSettings
from src.core.error_handler import ConfigError, DataError, ShapeError
from src.imaging.datacube import DataCube4D, transpose_domains
from src.imaging.multiview import (
    ViewNormalization,
    ViewStack,
    bf_mask,
    build_view_stack,
    extract_views,
    normalize_views,
    view_count,
    view_layout,
)
from tests.conftest import calibration, unit_flux_cube


def test_bright_field_mask_selects_disk():
    # convergence 3 mrad, 1 mrad pixels, 0.9 of the radius: 21 pixels
    mask = bf_mask(calibration(8), 0.9)
    assert mask.sum() == 21
    assert mask[4, 4]
    assert mask[6, 5] and not mask[6, 6]


def test_bright_field_mask_validation():
    with pytest.raises(ConfigError):
        bf_mask(calibration(8), 0.0)
    with pytest.raises(ConfigError):
        bf_mask(calibration(8), 1.5)
    assert bf_mask(calibration(8), 0.01).sum() == 1


def test_single_pixel_views_are_detector_slices(rng):
    cube = unit_flux_cube(rng, scan=(5, 6))
    mask = bf_mask(cube.calib, 0.9)
    stack = extract_views(cube, mask, bin=1)
    assert stack.views.shape == (21, 5, 6)
    assert stack.normalization is ViewNormalization.RAW
    for v, (ax, ay) in enumerate(stack.angles):
        x, y = int(round(ax + 4)), int(round(ay + 4))
        assert_array_equal(stack.views[v], cube.values[:, :, x, y])
    assert_allclose(stack.views.sum(axis=0), (cube.values * mask).sum(axis=(2, 3)))


def test_axial_view_has_zero_angle(rng):
    stack = extract_views(unit_flux_cube(rng), bf_mask(calibration(8), 0.9))
    assert_array_equal(stack.angles[stack.axial_index()], (0.0, 0.0))
    assert len(np.unique(stack.angles, axis=0)) == stack.count


def test_extraction_is_layout_independent(rng):
    cube = unit_flux_cube(rng)
    mask = bf_mask(cube.calib, 0.9)
    direct = extract_views(cube, mask)
    swapped = extract_views(transpose_domains(cube), mask)
    assert_allclose(direct.views, swapped.views, rtol=1e-12)
    assert_array_equal(direct.angles, swapped.angles)


def test_binned_blocks_sum_detector_pixels(rng):
    cube = unit_flux_cube(rng, detector=16, convergence=6.0)
    mask = bf_mask(cube.calib, 0.9)
    layout = view_layout(mask, cube.calib, 3)
    # one block is centered on the beam
    assert any(tuple(start) == (7, 7) for start in layout.starts)
    weights = layout.weights(cube.detector_shape)
    assert_array_equal(weights.sum(axis=(1, 2)), 9.0)
    assert not (weights.sum(axis=0) > 1).any()
    assert not (weights.sum(axis=0)[~mask] > 0).any()

    stack = extract_views(cube, mask, bin=3)
    v = next(i for i, start in enumerate(layout.starts) if tuple(start) == (7, 7))
    assert_allclose(stack.views[v], cube.values[:, :, 7:10, 7:10].sum(axis=(2, 3)))
    assert_array_equal(stack.angles[v], (0.0, 0.0))


def test_binning_can_eliminate_every_view(rng):
    cube = unit_flux_cube(rng)
    with pytest.raises(DataError, match="binning eliminates all views"):
        extract_views(cube, bf_mask(cube.calib, 0.9), bin=8)
    with pytest.raises(ConfigError):
        extract_views(cube, bf_mask(cube.calib, 0.9), bin=0)


def test_mask_shape_must_match_detector(rng):
    cube = unit_flux_cube(rng)
    with pytest.raises(ShapeError):
        extract_views(cube, np.ones((4, 4), dtype=bool))


def test_view_count_matches_extraction(rng):
    cube = unit_flux_cube(rng, detector=16, convergence=6.0)
    settings = ViewSettings(radius_fraction=0.9, bin=3, normalize=True)
    assert view_count(cube.calib, settings) == build_view_stack(cube, settings).count


# ----------------------------------------------------------------------
# normalization
# ----------------------------------------------------------------------
def test_per_view_normalization(rng):
    stack = extract_views(unit_flux_cube(rng), bf_mask(calibration(8), 0.9))
    normalized = normalize_views(stack)
    assert normalized.normalization is ViewNormalization.PER_VIEW_MEAN
    assert_allclose(normalized.views.mean(axis=(1, 2)), 1.0)
    assert normalize_views(normalized) is normalized


def test_dead_view_is_reported():
    values = np.zeros((3, 3, 8, 8))
    values[:, :, 4, 4] = 1.0
    cube = DataCube4D(values=values, calib=calibration(8))
    stack = extract_views(cube, bf_mask(cube.calib, 0.9))
    with pytest.raises(DataError, match="dead view"):
        normalize_views(stack)


def test_view_stack_validation():
    with pytest.raises(ShapeError):
        ViewStack(views=np.zeros((4, 4)), angles=np.zeros((1, 2)), calib=calibration(8))
    with pytest.raises(ShapeError):
        ViewStack(views=np.zeros((2, 4, 4)), angles=np.zeros((3, 2)), calib=calibration(8))
    with pytest.raises(DataError):
        ViewStack(views=np.zeros((2, 4, 4)), angles=np.zeros((2, 2)), calib=calibration(8))
