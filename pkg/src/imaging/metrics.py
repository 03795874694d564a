"""
Image-quality scores against a ground truth: PSNR, SSIM, CNR, line profiles,
radially averaged power and the spectral cutoff.
"""

import math
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import torch
from scipy import fft, ndimage

from src.core.config import LossConfig
from src.core.constants import DEFAULT_CUTOFF_FACTOR, OUTER_BAND_FRACTION
from src.core.error_handler import DataError, ShapeError
from src.model.losses import ssim_index

logger = logging.getLogger(__name__)


def _pair(pred: np.ndarray, target: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch {pred.shape} vs {target.shape}")
    return pred, target


# ----------------------------------------------------------------------
# fidelity
# ----------------------------------------------------------------------
def psnr(pred: np.ndarray, target: np.ndarray) -> float:
    """10·log10(range² / MSE) with range = target max − min; inf for identical images."""
    pred, target = _pair(pred, target)
    value_range = float(target.max() - target.min())
    if value_range <= 0:
        raise DataError("psnr needs a non-constant target")
    mse = float(np.mean((pred - target) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(value_range ** 2 / mse)


def ssim(pred: np.ndarray, target: np.ndarray, cfg: Optional[LossConfig] = None) -> float:
    """Single-scale SSIM with the training window constants."""
    pred, target = _pair(pred, target)
    if pred.ndim != 2:
        raise ShapeError(f"ssim expects 2-D images, got shape {pred.shape}")
    value = ssim_index(torch.from_numpy(pred), torch.from_numpy(target), cfg)
    return float(value[0])


def match_intensity(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """
    Least-squares affine map a·pred + b onto the target's intensity scale.

    The slope is clamped at zero: an anti-correlated image keeps only the mean match
    and is never flipped onto the target.
    """
    pred, target = _pair(pred, target)
    centered = pred - pred.mean()
    variance = float(np.sum(centered ** 2))
    if variance == 0:
        return np.full_like(target, target.mean())
    scale = float(np.sum(centered * (target - target.mean()))) / variance
    if scale < 0:
        logger.warning("Intensity match: prediction is anti-correlated with the target (slope %.3g), mean only", scale)
        scale = 0.0
    return scale * centered + target.mean()


# ----------------------------------------------------------------------
# contrast
# ----------------------------------------------------------------------
def cnr(img: np.ndarray, signal_mask: np.ndarray, background_mask: np.ndarray) -> float:
    """(mean(signal) − mean(background)) / std(background)."""
    img = np.asarray(img, dtype=np.float64)
    signal_mask = np.asarray(signal_mask, dtype=bool)
    background_mask = np.asarray(background_mask, dtype=bool)
    if signal_mask.shape != img.shape or background_mask.shape != img.shape:
        raise ShapeError("cnr masks must match the image shape")
    if not signal_mask.any() or not background_mask.any():
        raise DataError("cnr masks must be non-empty")
    if np.any(signal_mask & background_mask):
        raise DataError("cnr masks must be disjoint")
    background = img[background_mask]
    spread = float(background.std())
    if spread <= 0:
        raise DataError("cnr undefined: zero background standard deviation")
    return float((img[signal_mask].mean() - background.mean()) / spread)


def cnr_masks(ground_truth: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Signal = top-quartile ground-truth pixels, background = bottom quartile."""
    ground_truth = np.asarray(ground_truth, dtype=np.float64)
    low, high = np.quantile(ground_truth, [0.25, 0.75])
    signal = ground_truth >= high
    background = ground_truth <= low
    if high <= low:
        # flat regions: split strictly so the masks stay disjoint
        signal = ground_truth > low
        background = ~signal
    return signal, background


# ----------------------------------------------------------------------
# line scans
# ----------------------------------------------------------------------
def line_profile(img: np.ndarray, p0: Sequence[float], p1: Sequence[float], n_samples: int) -> np.ndarray:
    """Bilinear samples at n equally spaced points from p0 to p1 (inclusive), coordinates (x, y) in pixels."""
    img = np.asarray(img, dtype=np.float64)
    if n_samples < 2:
        raise DataError(f"line profile needs at least 2 samples, got {n_samples}")
    for point in (p0, p1):
        if not (0 <= point[0] <= img.shape[0] - 1 and 0 <= point[1] <= img.shape[1] - 1):
            raise DataError(f"line endpoint {tuple(point)} outside image of shape {img.shape}")
    t = np.linspace(0.0, 1.0, n_samples)
    xs = p0[0] + t * (p1[0] - p0[0])
    ys = p0[1] + t * (p1[1] - p0[1])
    return ndimage.map_coordinates(img, [xs, ys], order=1, mode="nearest")


@dataclass(frozen=True)
class ProfileContrast:
    peak: float
    background: float

    @property
    def modulation(self) -> float:
        return self.peak - self.background

    def to_dict(self) -> Dict[str, float]:
        return {"peak": self.peak, "background": self.background, "modulation": self.modulation}


def profile_contrast(profile: np.ndarray) -> ProfileContrast:
    """Peak (top-decile mean) against background (bottom-decile mean) of a line scan."""
    profile = np.sort(np.asarray(profile, dtype=np.float64))
    count = max(1, int(round(0.1 * len(profile))))
    return ProfileContrast(peak=float(profile[-count:].mean()), background=float(profile[:count].mean()))


# ----------------------------------------------------------------------
# spectral resolution
# ----------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class SpectralCutoff:
    cutoff: float
    frequencies: np.ndarray
    power: np.ndarray
    noise_floor: float
    floor_dominated: bool

    def curve_rows(self):
        return [{"frequency": float(f), "power": float(p)} for f, p in zip(self.frequencies, self.power)]


def radial_power(img: np.ndarray, pixel_size: float) -> Tuple[np.ndarray, np.ndarray]:
    """Radially averaged power spectrum; bins one frequency step wide up to Nyquist."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    power = np.abs(fft.fft2(img - img.mean())) ** 2
    kx = fft.fftfreq(h, d=pixel_size)[:, None]
    ky = fft.fftfreq(w, d=pixel_size)[None, :]
    radius = np.sqrt(kx ** 2 + ky ** 2)
    step = 1.0 / (max(h, w) * pixel_size)
    nyquist = 0.5 / pixel_size
    bins = np.rint(radius / step).astype(np.int64)
    n_bins = int(round(nyquist / step)) + 1
    keep = bins < n_bins
    sums = np.bincount(bins[keep], weights=power[keep], minlength=n_bins)
    counts = np.bincount(bins[keep], minlength=n_bins)
    curve = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
    return np.arange(n_bins) * step, curve


def spectral_cutoff(img: np.ndarray, pixel_size: float, factor: float = DEFAULT_CUTOFF_FACTOR) -> SpectralCutoff:
    """
    Highest spatial frequency (1/Å) whose smoothed radial power stays above factor × noise floor.

    The noise floor is the median power in the outermost 10% of the frequency band.
    A cutoff inside that band, or a spectrum that never rises above the floor
    (reported at Nyquist), is flagged as floor-dominated.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or min(img.shape) <= 32:
        raise ShapeError(f"spectral cutoff needs an image larger than 32x32, got {img.shape}")
    if pixel_size <= 0:
        raise DataError(f"pixel_size must be > 0, got {pixel_size}")
    frequencies, power = radial_power(img, pixel_size)
    if not np.any(power[1:] > 0):
        return SpectralCutoff(cutoff=0.0, frequencies=frequencies, power=power, noise_floor=0.0, floor_dominated=False)

    outer_start = int(math.floor((1.0 - OUTER_BAND_FRACTION) * (len(power) - 1)))
    floor = max(float(np.median(power[outer_start:])), 1e-12 * float(power.max()))
    smoothed = ndimage.uniform_filter1d(power, size=3, mode="nearest")
    above = np.flatnonzero(smoothed[1:] >= factor * floor) + 1
    if above.size == 0:
        # flat spectrum: nothing rises above the floor up to Nyquist
        return SpectralCutoff(cutoff=float(frequencies[-1]), frequencies=frequencies, power=power,
                              noise_floor=floor, floor_dominated=True)
    index = int(above.max())
    return SpectralCutoff(cutoff=float(frequencies[index]), frequencies=frequencies, power=power,
                          noise_floor=floor, floor_dominated=index >= outer_start)


# ----------------------------------------------------------------------
# reports
# ----------------------------------------------------------------------
def region_scores(pred: np.ndarray, target: np.ndarray, center_fraction: float = 0.5) -> Dict[str, float]:
    """PSNR of the central region (center_fraction of each side) against the periphery."""
    pred, target = _pair(pred, target)
    h, w = target.shape
    ch, cw = max(1, int(round(h * center_fraction))), max(1, int(round(w * center_fraction)))
    x0, y0 = (h - ch) // 2, (w - cw) // 2
    central = np.zeros_like(target, dtype=bool)
    central[x0:x0 + ch, y0:y0 + cw] = True
    value_range = float(target.max() - target.min())
    if value_range <= 0:
        raise DataError("region scores need a non-constant target")

    def _region_psnr(region: np.ndarray) -> float:
        if not region.any():
            return math.nan
        mse = float(np.mean((pred[region] - target[region]) ** 2))
        return math.inf if mse == 0 else 10.0 * math.log10(value_range ** 2 / mse)

    return {"psnr_center": _region_psnr(central), "psnr_periphery": _region_psnr(~central)}


def evaluate(pred: np.ndarray, target: np.ndarray, pixel_size: float, match: bool = True,
             cfg: Optional[LossConfig] = None) -> Dict[str, float]:
    """
    All scores for one reconstruction against its ground truth.

    Args:
        pred (np.ndarray): Reconstruction on the ground-truth grid
        target (np.ndarray): Ground truth
        pixel_size (float): Ground-truth pixel size in Å
        match (bool): Map pred onto the target's intensity scale first
        cfg (Optional[LossConfig]): SSIM window settings

    Returns:
        Dict[str, float]: psnr, ssim, cnr, cutoff, floor_dominated and region scores
    """
    pred, target = _pair(pred, target)
    if match:
        pred = match_intensity(pred, target)
    signal, background = cnr_masks(target)
    try:
        contrast = cnr(pred, signal, background)
    except DataError as exc:
        logger.warning("CNR undefined: %s", exc)
        contrast = math.nan
    spectrum = spectral_cutoff(pred, pixel_size) if min(pred.shape) > 32 else None
    report = {
        "psnr": psnr(pred, target),
        "ssim": ssim(pred, target, cfg),
        "cnr": contrast,
        "cutoff": spectrum.cutoff if spectrum else math.nan,
        "floor_dominated": bool(spectrum.floor_dominated) if spectrum else False,
    }
    report.update(region_scores(pred, target))
    return report
