"""
Virtual bright-field views: each detector cell inside the bright-field disk,
integrated over all probe positions, is a low-resolution image seen from its
own illumination angle.
"""

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import List, Tuple

import numpy as np

from src.core.config import ViewSettings
from src.core.error_handler import ConfigError, DataError, ShapeError
from src.imaging.datacube import DataCube4D, Layout, ScanCalibration, transpose_domains

logger = logging.getLogger(__name__)


class ViewNormalization(str, Enum):
    RAW = "RAW"
    PER_VIEW_MEAN = "PER_VIEW_MEAN"


@dataclass(frozen=True, eq=False)
class ViewStack:
    views: np.ndarray
    angles: np.ndarray
    calib: ScanCalibration
    normalization: ViewNormalization = ViewNormalization.RAW

    def __post_init__(self):
        views = np.asarray(self.views)
        angles = np.asarray(self.angles, dtype=np.float64)
        if views.ndim != 3 or views.shape[0] < 1:
            raise ShapeError(f"view stack must be (V, H, W) with V >= 1, got {views.shape}")
        if angles.shape != (views.shape[0], 2):
            raise ShapeError(f"view angles must be ({views.shape[0]}, 2), got {angles.shape}")
        if len(np.unique(angles, axis=0)) != len(angles):
            raise DataError("view angles must be pairwise distinct")
        object.__setattr__(self, "views", views)
        object.__setattr__(self, "angles", angles)
        object.__setattr__(self, "normalization", ViewNormalization(self.normalization))

    @property
    def count(self) -> int:
        return self.views.shape[0]

    @property
    def scan_shape(self) -> Tuple[int, int]:
        return tuple(self.views.shape[1:])

    def axial_index(self) -> int:
        """Index of the view closest to the optical axis."""
        return int(np.argmin(np.hypot(self.angles[:, 0], self.angles[:, 1])))


def bf_mask(calib: ScanCalibration, radius_fraction: float) -> np.ndarray:
    """Detector pixels within radius_fraction × convergence of the beam center."""
    if not 0 < radius_fraction <= 1:
        raise ConfigError(f"radius_fraction must be in (0, 1], got {radius_fraction}")
    ax, ay = calib.angle_grid()
    mask = np.hypot(ax, ay) <= radius_fraction * calib.convergence + 1e-9
    if not mask.any():
        raise DataError("no bright-field pixels")
    return mask


@dataclass(frozen=True, eq=False)
class ViewLayout:
    """Detector blocks that become views; a pure function of (mask, bin, center)."""

    starts: np.ndarray
    angles: np.ndarray
    bin: int

    @property
    def count(self) -> int:
        return len(self.starts)

    def weights(self, detector_shape: Tuple[int, int]) -> np.ndarray:
        """(V, Kx, Ky) indicator of the pixels summed into each view."""
        weights = np.zeros((self.count,) + tuple(detector_shape), dtype=np.float64)
        for v, (x0, y0) in enumerate(self.starts):
            weights[v, x0:x0 + self.bin, y0:y0 + self.bin] = 1.0
        return weights


def view_layout(mask: np.ndarray, calib: ScanCalibration, bin: int) -> ViewLayout:
    """
    Tile the detector with bin×bin blocks aligned so one block is centered on the beam.

    Only blocks lying entirely inside the detector and the mask are kept.
    """
    if int(bin) != bin or bin < 1:
        raise ConfigError(f"bin must be a positive integer, got {bin}")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != calib.detector_shape:
        raise ShapeError(f"mask shape {mask.shape} does not match detector {calib.detector_shape}")

    per_axis: List[np.ndarray] = []
    for axis in range(2):
        center = calib.center[axis]
        offset = (int(round(center)) - bin // 2) % bin
        per_axis.append(np.arange(offset, calib.detector_shape[axis] - bin + 1, bin))

    starts, angles = [], []
    for x0 in per_axis[0]:
        for y0 in per_axis[1]:
            if mask[x0:x0 + bin, y0:y0 + bin].all():
                starts.append((int(x0), int(y0)))
                angles.append((
                    (x0 + (bin - 1) / 2 - calib.center[0]) * calib.detector_pixel,
                    (y0 + (bin - 1) / 2 - calib.center[1]) * calib.detector_pixel,
                ))
    if not starts:
        raise DataError(f"binning eliminates all views (bin {bin} with {int(mask.sum())} bright-field pixels)")
    return ViewLayout(starts=np.asarray(starts, dtype=np.int64), angles=np.asarray(angles), bin=int(bin))


def extract_views(cube: DataCube4D, mask: np.ndarray, bin: int = 1) -> ViewStack:
    """
    Build the raw view stack of a cube.

    Args:
        cube (DataCube4D): Measurement, either layout
        mask (np.ndarray): Bright-field detector mask
        bin (int): Detector block size; each block inside the mask becomes one view

    Returns:
        ViewStack: (V, H, W) block sums with their block-center angles in mrad
    """
    layout = view_layout(mask, cube.calib, bin)
    recip = cube if cube.layout is Layout.RECIP_MAJOR else transpose_domains(cube)
    weights = layout.weights(cube.detector_shape)
    views = np.tensordot(weights, recip.values.astype(np.float64, copy=False), axes=([1, 2], [0, 1]))
    logger.debug("Extracted %d views (bin %d) from a %s scan", layout.count, layout.bin, cube.scan_shape)
    return ViewStack(views=views, angles=layout.angles, calib=cube.calib)


def normalize_views(stack: ViewStack) -> ViewStack:
    """Divide every view by its own mean."""
    if stack.normalization is ViewNormalization.PER_VIEW_MEAN:
        return stack
    means = stack.views.mean(axis=(1, 2))
    dead = np.flatnonzero(~(means > 0))
    if dead.size:
        raise DataError(f"dead view(s) {dead.tolist()}: non-positive mean")
    return replace(stack, views=stack.views / means[:, None, None],
                   normalization=ViewNormalization.PER_VIEW_MEAN)


def build_view_stack(cube: DataCube4D, settings: ViewSettings) -> ViewStack:
    """Mask, extract and (optionally) normalize with one set of view settings."""
    mask = bf_mask(cube.calib, settings.radius_fraction)
    stack = extract_views(cube, mask, settings.bin)
    return normalize_views(stack) if settings.normalize else stack


def view_count(calib: ScanCalibration, settings: ViewSettings) -> int:
    return view_layout(bf_mask(calib, settings.radius_fraction), calib, settings.bin).count
