"""
Training objective: L1 pixel loss + 1 − MS-SSIM, plus a weighted perceptual
term for scans finer than the step-size threshold.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence

import torch
import torch.nn.functional as F

from src.core.config import LossConfig
from src.core.error_handler import ConfigError, ShapeError

logger = logging.getLogger(__name__)

MSSSIM_FLOOR = 1e-6


def _as_batch(image: torch.Tensor) -> torch.Tensor:
    """(H, W), (1, H, W) or (N, 1, H, W) -> (N, 1, H, W)."""
    if image.ndim == 2:
        return image[None, None]
    if image.ndim == 3:
        return image[None]
    if image.ndim == 4:
        return image
    raise ShapeError(f"expected a 2-D to 4-D image tensor, got shape {tuple(image.shape)}")


def _check_pair(pred: torch.Tensor, target: torch.Tensor, where: str) -> None:
    if pred.shape != target.shape:
        raise ShapeError(f"{where}: shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")


# ----------------------------------------------------------------------
# pixel
# ----------------------------------------------------------------------
def pixel_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    _check_pair(pred, target, "pixel loss")
    return torch.mean(torch.abs(pred - target))


# ----------------------------------------------------------------------
# structural similarity
# ----------------------------------------------------------------------
def gaussian_window(size: int, sigma: float, dtype=torch.float64, device=None) -> torch.Tensor:
    coords = torch.arange(size, dtype=dtype, device=device) - (size - 1) / 2
    g = torch.exp(-(coords ** 2) / (2 * sigma ** 2))
    g = g / g.sum()
    return (g[:, None] * g[None, :])[None, None]


def min_size_for_scales(scales: int, window_size: int) -> int:
    return window_size * 2 ** (scales - 1)


def max_feasible_scales(height: int, width: int, window_size: int) -> int:
    scales = 0
    while min(height, width) >= min_size_for_scales(scales + 1, window_size):
        scales += 1
    return scales


def _data_range(target: torch.Tensor) -> torch.Tensor:
    flat = target.detach().flatten(1)
    value_range = flat.max(dim=1).values - flat.min(dim=1).values
    return torch.where(value_range > 0, value_range, torch.ones_like(value_range)).view(-1, 1, 1, 1)


def _ssim_terms(x: torch.Tensor, y: torch.Tensor, window: torch.Tensor, c1: torch.Tensor, c2: torch.Tensor):
    mu_x = F.conv2d(x, window)
    mu_y = F.conv2d(y, window)
    sigma_x = F.conv2d(x * x, window) - mu_x ** 2
    sigma_y = F.conv2d(y * y, window) - mu_y ** 2
    sigma_xy = F.conv2d(x * y, window) - mu_x * mu_y
    luminance = (2 * mu_x * mu_y + c1) / (mu_x ** 2 + mu_y ** 2 + c1)
    contrast_structure = (2 * sigma_xy + c2) / (sigma_x + sigma_y + c2)
    return luminance, contrast_structure


def ms_ssim(pred: torch.Tensor, target: torch.Tensor, cfg: LossConfig,
            weights: Optional[Sequence[float]] = None) -> torch.Tensor:
    """
    Multi-scale SSIM per sample, shape (N,).

    The dynamic range is taken from each target's max − min (1 for a constant target).

    Raises:
        ShapeError: shape mismatch, or an image too small for the number of scales
    """
    pred, target = _as_batch(pred), _as_batch(target)
    _check_pair(pred, target, "ms-ssim")
    weights = tuple(cfg.msssim_weights if weights is None else weights)
    scales = len(weights)
    height, width = pred.shape[-2:]
    if min(height, width) < min_size_for_scales(scales, cfg.window_size):
        raise ShapeError(
            f"image {height}x{width} too small for {scales} MS-SSIM scales "
            f"(needs {min_size_for_scales(scales, cfg.window_size)} px); "
            f"max feasible scales: {max_feasible_scales(height, width, cfg.window_size)}"
        )

    window = gaussian_window(cfg.window_size, cfg.window_sigma, dtype=pred.dtype, device=pred.device)
    data_range = _data_range(target).to(pred.dtype)
    c1 = (cfg.k1 * data_range) ** 2
    c2 = (cfg.k2 * data_range) ** 2
    weight_tensor = torch.tensor(weights, dtype=pred.dtype, device=pred.device)
    weight_tensor = weight_tensor / weight_tensor.sum()

    x, y = pred, target
    factors = []
    for scale in range(scales):
        luminance, contrast_structure = _ssim_terms(x, y, window, c1, c2)
        if scale == scales - 1:
            factors.append((luminance * contrast_structure).flatten(1).mean(dim=1))
        else:
            factors.append(contrast_structure.flatten(1).mean(dim=1))
            x = F.avg_pool2d(x, kernel_size=2)
            y = F.avg_pool2d(y, kernel_size=2)
    stacked = torch.stack(factors, dim=1)
    if scales > 1:
        # fractional powers need a positive base with a bounded gradient
        stacked = torch.clamp(stacked, min=MSSSIM_FLOOR)
    return torch.prod(stacked ** weight_tensor, dim=1)


def ssim_index(pred: torch.Tensor, target: torch.Tensor, cfg: Optional[LossConfig] = None) -> torch.Tensor:
    """Single-scale SSIM per sample, shape (N,)."""
    return ms_ssim(pred, target, cfg or LossConfig(), weights=(1.0,))


def ms_ssim_loss(pred: torch.Tensor, target: torch.Tensor, cfg: Optional[LossConfig] = None) -> torch.Tensor:
    return torch.mean(1.0 - ms_ssim(pred, target, cfg or LossConfig()))


# ----------------------------------------------------------------------
# perceptual
# ----------------------------------------------------------------------
def perceptual_loss(pred: torch.Tensor, target: torch.Tensor,
                    extractor: Optional[Callable[[torch.Tensor], torch.Tensor]]) -> torch.Tensor:
    """Mean squared distance between extractor features of the images duplicated to three channels."""
    if extractor is None:
        raise ConfigError("perceptual extractor not configured")
    pred, target = _as_batch(pred), _as_batch(target)
    _check_pair(pred, target, "perceptual loss")
    features_pred = extractor(pred.expand(-1, 3, -1, -1))
    features_target = extractor(target.expand(-1, 3, -1, -1))
    return torch.mean((features_pred - features_target) ** 2)


def vgg19_extractor(weights_path: Optional[str] = None, layers: int = 36) -> torch.nn.Module:
    """
    Frozen VGG19 feature stack truncated after `layers` modules.

    Args:
        weights_path (Optional[str]): state dict of torchvision's vgg19; without it
            torchvision's pretrained weights are requested
        layers (int): Number of modules of vgg19.features kept

    Returns:
        torch.nn.Module: Extractor in eval mode with frozen parameters
    """
    try:
        from torchvision.models import vgg19
    except ImportError as exc:
        raise ConfigError("torchvision is required for the perceptual extractor") from exc

    if weights_path:
        model = vgg19(weights=None)
        model.load_state_dict(torch.load(weights_path, map_location="cpu"))
    else:
        from torchvision.models import VGG19_Weights
        model = vgg19(weights=VGG19_Weights.IMAGENET1K_V1)
    extractor = model.features[:layers].eval()
    for parameter in extractor.parameters():
        parameter.requires_grad_(False)
    logger.info("Loaded VGG19 perceptual extractor (%d modules)", layers)
    return extractor


# ----------------------------------------------------------------------
# composite
# ----------------------------------------------------------------------
@dataclass
class LossBreakdown:
    total: torch.Tensor
    pixel: torch.Tensor
    ssim: torch.Tensor
    perceptual: Optional[torch.Tensor]
    branch: str

    def to_record(self, step: int) -> Dict[str, object]:
        return {
            "step": step,
            "pixel": float(self.pixel.detach()),
            "ssim": float(self.ssim.detach()),
            "perceptual": None if self.perceptual is None else float(self.perceptual.detach()),
            "total": float(self.total.detach()),
            "branch": self.branch,
        }


def uses_perceptual(step_size: float, cfg: LossConfig) -> bool:
    """Perceptual term only for step sizes strictly below the threshold."""
    return step_size < cfg.step_threshold


def composite_loss(pred: torch.Tensor, target: torch.Tensor, step_size: float,
                   cfg: Optional[LossConfig] = None) -> LossBreakdown:
    """
    Total training loss for one batch.

    Args:
        pred (torch.Tensor): Network output
        target (torch.Tensor): Ground truth of the same shape
        step_size (float): Scan step in Å; selects the branch
        cfg (Optional[LossConfig]): Weights, MS-SSIM settings and the optional extractor

    Returns:
        LossBreakdown: total and per-term values; perceptual is None on the coarse-step branch

    Raises:
        ConfigError: step_size <= 0, or perceptual branch without an extractor
    """
    cfg = cfg or LossConfig()
    if not step_size > 0:
        raise ConfigError(f"step_size must be > 0, got {step_size}")
    pixel = pixel_loss(pred, target)
    ssim = ms_ssim_loss(pred, target, cfg)
    if uses_perceptual(step_size, cfg):
        perceptual = perceptual_loss(pred, target, cfg.perceptual_extractor)
        total = pixel + cfg.perceptual_lambda * perceptual + ssim
        return LossBreakdown(total=total, pixel=pixel, ssim=ssim, perceptual=perceptual, branch="perceptual")
    return LossBreakdown(total=pixel + ssim, pixel=pixel, ssim=ssim, perceptual=None, branch="pixel_ssim")
