"""
Classical reconstructions used as comparison baselines: virtual bright field,
integrated differential phase contrast and parallax alignment-and-sum.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import fft, ndimage
from skimage.registration import phase_cross_correlation

from src.core.constants import DEFAULT_UPSCALE, PARALLAX_MIN_CONFIDENCE, PARALLAX_UPSAMPLE_FACTOR
from src.core.error_handler import DataError, ShapeError
from src.imaging.datacube import DataCube4D, ScanCalibration
from src.imaging.multiview import ViewStack
from src.imaging.simulator import electron_wavelength

logger = logging.getLogger(__name__)


# ----------------------------------------------------------------------
# virtual bright field
# ----------------------------------------------------------------------
def bf_sum(cube: DataCube4D, mask: np.ndarray) -> np.ndarray:
    """Masked detector sum per probe position, shape (H, W)."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != cube.detector_shape:
        raise ShapeError(f"mask shape {mask.shape} does not match detector {cube.detector_shape}")
    if not mask.any():
        raise DataError("no bright-field pixels")
    values = cube.real_major().values
    return np.tensordot(values.astype(np.float64, copy=False), mask.astype(np.float64), axes=([2, 3], [0, 1]))


def upsample_bicubic(image: np.ndarray, r: int = DEFAULT_UPSCALE) -> np.ndarray:
    """Cubic-spline resampling onto the (rH, rW) grid where pixel u sits at scan coordinate u / r."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ShapeError(f"expected a 2-D image, got shape {image.shape}")
    h, w = image.shape
    u = np.arange(r * h) / r
    v = np.arange(r * w) / r
    coords = np.meshgrid(u, v, indexing="ij")
    return ndimage.map_coordinates(image, coords, order=3, mode="nearest")


def bf_sum_upsampled(cube: DataCube4D, mask: np.ndarray, r: int = DEFAULT_UPSCALE) -> np.ndarray:
    return upsample_bicubic(bf_sum(cube, mask), r)


# ----------------------------------------------------------------------
# iDPC
# ----------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class ComMap:
    """Center-of-mass deflection per probe position in mrad, relative to the beam center."""

    com_x: np.ndarray
    com_y: np.ndarray
    empty_patterns: int = 0


def com_map(cube: DataCube4D) -> ComMap:
    cube = cube.real_major()
    values = cube.values.astype(np.float64, copy=False)
    ax, ay = cube.calib.angle_grid()
    totals = values.sum(axis=(2, 3))
    moment_x = np.tensordot(values, ax, axes=([2, 3], [0, 1]))
    moment_y = np.tensordot(values, ay, axes=([2, 3], [0, 1]))
    valid = totals > 0
    empty = int(np.count_nonzero(~valid))
    if empty:
        logger.warning("CoM: %d empty pattern(s) set to zero deflection", empty)
    safe = np.where(valid, totals, 1.0)
    com_x = np.where(valid, moment_x / safe, 0.0)
    com_y = np.where(valid, moment_y / safe, 0.0)
    return ComMap(com_x=com_x, com_y=com_y, empty_patterns=empty)


def integrate_com(com: ComMap, calib: ScanCalibration) -> np.ndarray:
    """
    Fourier-integrate a CoM field into a phase image (radians, zero mean).

    Deflections are converted from mrad to spatial frequency (1/Å), then
    phase = Re IFFT[(kx F[cx] + ky F[cy]) / (i k²)] with the k = 0 term zeroed.
    """
    wavelength = electron_wavelength(calib.energy)
    gx = com.com_x * 1e-3 / wavelength
    gy = com.com_y * 1e-3 / wavelength
    h, w = gx.shape
    kx = fft.fftfreq(h, d=calib.step_size)[:, None]
    ky = fft.fftfreq(w, d=calib.step_size)[None, :]
    k2 = kx ** 2 + ky ** 2
    numerator = kx * fft.fft2(gx) + ky * fft.fft2(gy)
    spectrum = np.zeros_like(numerator)
    nonzero = k2 > 0
    spectrum[nonzero] = numerator[nonzero] / (1j * k2[nonzero])
    phase = np.real(fft.ifft2(spectrum))
    return phase - phase.mean()


def idpc(cube: DataCube4D, calib: Optional[ScanCalibration] = None) -> np.ndarray:
    """iDPC image (H, W) of a recentered cube."""
    return integrate_com(com_map(cube), calib or cube.calib)


# ----------------------------------------------------------------------
# parallax
# ----------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class ShiftModel:
    """Least-squares affine model shift = slope @ angle + offset (scan px, angles in mrad)."""

    slope: np.ndarray
    offset: np.ndarray
    residual: float

    def predict(self, angles: np.ndarray) -> np.ndarray:
        return np.asarray(angles) @ self.slope.T + self.offset

    def to_dict(self) -> dict:
        return {"slope_px_per_mrad": self.slope.tolist(), "offset_px": self.offset.tolist(), "residual_px": self.residual}


def fit_shift_model(angles: np.ndarray, shifts: np.ndarray, include: Optional[np.ndarray] = None) -> ShiftModel:
    angles = np.asarray(angles, dtype=np.float64)
    shifts = np.asarray(shifts, dtype=np.float64)
    if include is not None:
        angles, shifts = angles[include], shifts[include]
    if len(angles) < 3:
        raise DataError(f"shift model needs at least 3 views, got {len(angles)}")
    design = np.column_stack([angles, np.ones(len(angles))])
    solution, *_ = np.linalg.lstsq(design, shifts, rcond=None)
    residual = float(np.sqrt(np.mean((design @ solution - shifts) ** 2)))
    return ShiftModel(slope=solution[:2].T.copy(), offset=solution[2].copy(), residual=residual)


@dataclass(frozen=True, eq=False)
class ParallaxResult:
    image: np.ndarray
    displacements: np.ndarray
    confidence: np.ndarray
    included: np.ndarray
    angles: np.ndarray
    model: Optional[ShiftModel] = None
    excluded: List[int] = field(default_factory=list)

    def shift_table(self) -> List[dict]:
        return [
            {
                "view": int(v),
                "theta_x_mrad": float(self.angles[v, 0]),
                "theta_y_mrad": float(self.angles[v, 1]),
                "shift_x_px": float(self.displacements[v, 0]),
                "shift_y_px": float(self.displacements[v, 1]),
                "confidence": float(self.confidence[v]),
                "included": bool(self.included[v]),
            }
            for v in range(len(self.angles))
        ]


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    denominator = np.sqrt(np.sum(a * a) * np.sum(b * b))
    return float(np.sum(a * b) / denominator) if denominator > 0 else 0.0


def parallax(stack: ViewStack, calib: Optional[ScanCalibration] = None, upscale: int = DEFAULT_UPSCALE,
             min_confidence: float = PARALLAX_MIN_CONFIDENCE, use_fitted: bool = False,
             upsample_factor: int = PARALLAX_UPSAMPLE_FACTOR) -> ParallaxResult:
    """
    Align every view to the axial view and average them on the (rH, rW) grid.

    Args:
        stack (ViewStack): At least two views from a defocused acquisition
        calib (Optional[ScanCalibration]): Calibration, defaults to the stack's
        upscale (int): Output upsampling factor r
        min_confidence (float): Views whose aligned correlation with the axial view is lower are excluded
        use_fitted (bool): Resample with the affine shift model instead of the raw measurements
        upsample_factor (int): Sub-pixel precision of the cross-correlation peak

    Returns:
        ParallaxResult: Image, per-view displacement (scan px) of each view relative to the axial view,
        confidences and the fitted shift model
    """
    if stack.count < 2:
        raise DataError(f"parallax needs at least 2 views, got {stack.count}")
    calib = calib or stack.calib
    views = stack.views.astype(np.float64, copy=False)
    axial = stack.axial_index()
    reference = views[axial]

    displacements = np.zeros((stack.count, 2))
    confidence = np.zeros(stack.count)
    for v in range(stack.count):
        if v == axial:
            confidence[v] = 1.0
            continue
        shift, _, _ = phase_cross_correlation(reference, views[v], upsample_factor=upsample_factor)
        displacements[v] = -np.asarray(shift, dtype=np.float64)
        aligned = ndimage.shift(views[v], shift, order=3, mode="nearest")
        confidence[v] = _pearson(aligned, reference)

    included = confidence >= min_confidence
    excluded = [int(v) for v in np.flatnonzero(~included)]
    if excluded:
        logger.warning("Parallax: excluded %d low-confidence view(s): %s", len(excluded), excluded)

    model = None
    if included.sum() >= 3:
        model = fit_shift_model(stack.angles, displacements, included)
        logger.info("Parallax shift slope %.4f / %.4f px per mrad (defocus %.0f Å, step %.2f Å)",
                    model.slope[0, 0], model.slope[1, 1], calib.defocus, calib.step_size)
    if use_fitted and model is None:
        raise DataError("fitted parallax shifts need at least 3 confident views")
    applied = model.predict(stack.angles) if use_fitted else displacements

    h, w = stack.scan_shape
    u = np.arange(upscale * h) / upscale
    v_coords = np.arange(upscale * w) / upscale
    gx, gy = np.meshgrid(u, v_coords, indexing="ij")
    accumulated = np.zeros((upscale * h, upscale * w))
    for view_index in np.flatnonzero(included):
        dx, dy = applied[view_index]
        accumulated += ndimage.map_coordinates(views[view_index], [gx + dx, gy + dy], order=3, mode="nearest")
    image = accumulated / max(int(included.sum()), 1)

    return ParallaxResult(image=image, displacements=displacements, confidence=confidence,
                          included=included, angles=stack.angles, model=model, excluded=excluded)
