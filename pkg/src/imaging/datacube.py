"""
4D-STEM datacube container, calibration metadata and detector-plane geometry.

Arrays are indexed (Rx, Ry, Qx, Qy) in the real-space-major layout; axis 0 of
every 2-D image is x.
"""

import math
import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from src.core.error_handler import ConfigError, DataError, ShapeError

logger = logging.getLogger(__name__)

_SNAP = 1e-9


class Layout(str, Enum):
    REAL_MAJOR = "RQ"
    RECIP_MAJOR = "QR"

    @property
    def flipped(self) -> "Layout":
        return Layout.RECIP_MAJOR if self is Layout.REAL_MAJOR else Layout.REAL_MAJOR


@dataclass(frozen=True)
class ScanCalibration:
    """Acquisition geometry. Lengths in Å, angles in mrad, energy in keV."""

    step_size: float
    energy: float
    convergence: float
    defocus: float
    detector_pixel: float
    detector_shape: Tuple[int, int]
    center: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        shape = tuple(int(v) for v in self.detector_shape)
        if len(shape) != 2 or min(shape) < 1:
            raise ConfigError(f"detector_shape must be two positive integers, got {self.detector_shape}")
        object.__setattr__(self, "detector_shape", shape)
        if self.center is None:
            object.__setattr__(self, "center", (float(shape[0] // 2), float(shape[1] // 2)))
        else:
            object.__setattr__(self, "center", tuple(float(c) for c in self.center))

        for name in ("step_size", "energy", "convergence", "detector_pixel"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ConfigError(f"{name} must be a positive finite number, got {value}")
        if not math.isfinite(self.defocus):
            raise ConfigError(f"defocus must be finite, got {self.defocus}")
        cx, cy = self.center
        if not (0 <= cx < shape[0] and 0 <= cy < shape[1]):
            raise ConfigError(f"center {self.center} outside detector {shape}")

    def with_center(self, center: Sequence[float]) -> "ScanCalibration":
        return replace(self, center=(float(center[0]), float(center[1])))

    def angle_grid(self) -> Tuple[np.ndarray, np.ndarray]:
        """Detector-pixel angles (mrad) relative to the beam center, each of shape detector_shape."""
        qx = (np.arange(self.detector_shape[0]) - self.center[0]) * self.detector_pixel
        qy = (np.arange(self.detector_shape[1]) - self.center[1]) * self.detector_pixel
        return np.meshgrid(qx, qy, indexing="ij")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ScanCalibration":
        center = data.get("center")
        return cls(
            step_size=float(data["step_size"]),
            energy=float(data["energy"]),
            convergence=float(data["convergence"]),
            defocus=float(data.get("defocus", 0.0)),
            detector_pixel=float(data["detector_pixel"]),
            detector_shape=tuple(data["detector_shape"]),
            center=tuple(center) if center is not None else None,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "step_size": self.step_size,
            "energy": self.energy,
            "convergence": self.convergence,
            "defocus": self.defocus,
            "detector_pixel": self.detector_pixel,
            "detector_shape": list(self.detector_shape),
            "center": list(self.center),
        }


@dataclass(frozen=True)
class DataCube4D:
    """Immutable 4-D measurement with its calibration.

    `signed` marks cubes that may hold negative values (additive Gaussian noise
    or a negative bias).
    """

    values: np.ndarray
    calib: ScanCalibration
    layout: Layout = Layout.REAL_MAJOR
    signed: bool = False

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 4:
            raise ShapeError(f"datacube must be 4-D, got shape {values.shape}")
        layout = Layout(self.layout)
        detector = values.shape[2:] if layout is Layout.REAL_MAJOR else values.shape[:2]
        if tuple(detector) != self.calib.detector_shape:
            raise ShapeError(
                f"detector axes {tuple(detector)} do not match calibration detector_shape {self.calib.detector_shape}"
            )
        if not self.signed and values.size and values.min() < 0:
            raise DataError("negative values in a cube not marked signed")
        frozen = values.view()
        frozen.flags.writeable = False
        object.__setattr__(self, "values", frozen)
        object.__setattr__(self, "layout", layout)

    @property
    def scan_shape(self) -> Tuple[int, int]:
        shape = self.values.shape
        return tuple(shape[:2]) if self.layout is Layout.REAL_MAJOR else tuple(shape[2:])

    @property
    def detector_shape(self) -> Tuple[int, int]:
        return self.calib.detector_shape

    def with_values(self, values: np.ndarray, **changes: Any) -> "DataCube4D":
        return replace(self, values=values, **changes)

    def real_major(self) -> "DataCube4D":
        return self if self.layout is Layout.REAL_MAJOR else transpose_domains(self)


# ----------------------------------------------------------------------
# domain interconversion
# ----------------------------------------------------------------------
def transpose_domains(cube: DataCube4D) -> DataCube4D:
    """Swap real- and reciprocal-space axes; the result is a materialized copy."""
    values = np.ascontiguousarray(cube.values.transpose(2, 3, 0, 1))
    return replace(cube, values=values, layout=cube.layout.flipped)


def mean_pattern(cube: DataCube4D) -> np.ndarray:
    axes = (0, 1) if cube.layout is Layout.REAL_MAJOR else (2, 3)
    return cube.values.mean(axis=axes, dtype=np.float64)


def estimate_center(cube: DataCube4D) -> Tuple[float, float]:
    """Center of mass of the probe-averaged diffraction pattern, in fractional detector pixels."""
    pattern = mean_pattern(cube)
    total = pattern.sum()
    if not total > 0:
        raise DataError("empty datacube")
    qx = np.arange(pattern.shape[0], dtype=np.float64)
    qy = np.arange(pattern.shape[1], dtype=np.float64)
    cx = float((pattern.sum(axis=1) * qx).sum() / total)
    cy = float((pattern.sum(axis=0) * qy).sum() / total)
    return cx, cy


def _split_shift(shift: float) -> Tuple[int, float]:
    whole = math.floor(shift)
    frac = shift - whole
    if frac < _SNAP:
        frac = 0.0
    elif frac > 1 - _SNAP:
        whole, frac = whole + 1, 0.0
    return int(whole), frac


def _shift_axis(values: np.ndarray, shift: float, axis: int) -> np.ndarray:
    whole, frac = _split_shift(shift)
    if whole:
        values = np.roll(values, whole, axis=axis)
    if frac:
        values = (1.0 - frac) * values + frac * np.roll(values, 1, axis=axis)
    return values


def recenter(cube: DataCube4D, target: Optional[Sequence[float]] = None) -> DataCube4D:
    """
    Move the unscattered beam to `target` in every pattern.

    The integer part of the shift is a circular roll, the fractional part a
    bilinear blend of neighbouring pixels.

    Args:
        cube (DataCube4D): Input cube, either layout
        target (Optional[Sequence[float]]): Wanted center; defaults to the detector midpoint (K//2, K//2)

    Returns:
        DataCube4D: Shifted cube with calib.center set to target

    Raises:
        DataError: "center out of range" when the shift exceeds half the detector
    """
    kx, ky = cube.detector_shape
    if target is None:
        target = (float(kx // 2), float(ky // 2))
    current = estimate_center(cube)
    shift = (float(target[0]) - current[0], float(target[1]) - current[1])
    if abs(shift[0]) > kx / 2 or abs(shift[1]) > ky / 2:
        raise DataError(f"center out of range: shift {shift} exceeds half the detector {cube.detector_shape}")

    axes = (2, 3) if cube.layout is Layout.REAL_MAJOR else (0, 1)
    values = cube.values
    if not np.issubdtype(values.dtype, np.floating):
        values = values.astype(np.float64)
    values = _shift_axis(values, shift[0], axes[0])
    values = _shift_axis(values, shift[1], axes[1])
    if values is cube.values:
        values = values.copy()
    logger.debug("Recentered cube from (%.3f, %.3f) by (%.3f, %.3f)", current[0], current[1], shift[0], shift[1])
    return replace(cube, values=np.ascontiguousarray(values), calib=cube.calib.with_center(target))


# ----------------------------------------------------------------------
# affine calibration
# ----------------------------------------------------------------------
def rotation_about_center(angle_deg: float, center: Sequence[float]) -> np.ndarray:
    """2x3 affine matrix rotating detector coordinates by angle_deg about center."""
    theta = math.radians(angle_deg)
    rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    c = np.asarray(center, dtype=np.float64)
    return np.hstack([rot, (c - rot @ c)[:, None]])


def apply_affine(cube: DataCube4D, matrix: np.ndarray) -> DataCube4D:
    """
    Resample every diffraction pattern under p_out = A p_in + t.

    Args:
        cube (DataCube4D): Input cube
        matrix (np.ndarray): 2x3 matrix [A | t] in detector-pixel coordinates

    Returns:
        DataCube4D: Resampled cube (bilinear, zero outside the detector)

    Raises:
        ShapeError: matrix is not 2x3
        DataError: "degenerate affine" for a singular A
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape != (2, 3):
        raise ShapeError(f"affine matrix must be 2x3, got {matrix.shape}")
    linear, offset = matrix[:, :2], matrix[:, 2]
    if abs(np.linalg.det(linear)) < 1e-12:
        raise DataError("degenerate affine")

    new_center = linear @ np.asarray(cube.calib.center) + offset
    kx, ky = cube.detector_shape
    if not (0 <= new_center[0] < kx and 0 <= new_center[1] < ky):
        raise DataError(f"center out of range: affine maps the beam to {tuple(new_center)}")

    if np.array_equal(linear, np.eye(2)) and not offset.any():
        return replace(cube, values=cube.values.copy())

    source = cube.real_major()
    h, w = source.scan_shape
    patterns = source.values.reshape(h * w, kx, ky)
    if not np.issubdtype(patterns.dtype, np.floating):
        patterns = patterns.astype(np.float64)

    # affine_transform maps output coordinates to input coordinates
    inverse = np.linalg.inv(linear)
    full = np.eye(3)
    full[1:, 1:] = inverse
    shift = np.concatenate([[0.0], -inverse @ offset])
    resampled = ndimage.affine_transform(
        patterns, full, offset=shift, output_shape=patterns.shape, order=1, mode="constant", cval=0.0
    )
    if not cube.signed:
        # linear interpolation of non-negative data can only underflow by rounding
        np.maximum(resampled, 0.0, out=resampled)
    result = replace(
        source,
        values=resampled.reshape(h, w, kx, ky),
        calib=source.calib.with_center(new_center),
    )
    return result if cube.layout is Layout.REAL_MAJOR else transpose_domains(result)
