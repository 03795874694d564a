import pytest
import torch
from torch.autograd import gradcheck

from src.core.config import LossConfig
from src.core.error_handler import ConfigError, ShapeError
from src.model.losses import (
    composite_loss,
    gaussian_window,
    max_feasible_scales,
    ms_ssim,
    ms_ssim_loss,
    perceptual_loss,
    pixel_loss,
    ssim_index,
    uses_perceptual,
)


def _pair(size=48, noise=0.1, seed=0):
    generator = torch.Generator().manual_seed(seed)
    target = torch.rand(2, 1, size, size, generator=generator, dtype=torch.float64)
    pred = target + noise * torch.randn(2, 1, size, size, generator=generator, dtype=torch.float64)
    return pred, target


def _mean_features(images: torch.Tensor) -> torch.Tensor:
    return images.mean(dim=(2, 3))


def test_pixel_loss_is_mean_absolute_error():
    pred = torch.tensor([[1.0, 2.0], [3.0, 4.0]])
    target = torch.tensor([[1.0, 0.0], [3.0, 8.0]])
    assert pixel_loss(pred, target).item() == pytest.approx(1.5)
    with pytest.raises(ShapeError):
        pixel_loss(pred, target[:1])


def test_gaussian_window_is_normalized():
    window = gaussian_window(11, 1.5)
    assert window.shape == (1, 1, 11, 11)
    assert window.sum().item() == pytest.approx(1.0)
    assert window[0, 0, 5, 5] == window.max()


def test_identical_images_have_unit_ssim():
    _, target = _pair()
    cfg = LossConfig(msssim_weights=(0.5, 0.5))
    torch.testing.assert_close(ms_ssim(target, target, cfg), torch.ones(2, dtype=torch.float64))
    assert ms_ssim_loss(target, target, cfg).item() == pytest.approx(0.0, abs=1e-12)


def test_ssim_decreases_with_noise():
    cfg = LossConfig(msssim_weights=(0.5, 0.5))
    scores = [ms_ssim(*_pair(noise=noise), cfg).mean().item() for noise in (0.05, 0.2, 0.5)]
    assert 1.0 > scores[0] > scores[1] > scores[2]


def test_single_scale_ssim_of_constant_images():
    constant = torch.full((1, 1, 16, 16), 0.3, dtype=torch.float64)
    assert ssim_index(constant, constant).item() == pytest.approx(1.0)


def test_too_small_image_reports_feasible_scales():
    pred, target = _pair(size=48)
    with pytest.raises(ShapeError, match="max feasible scales: 3"):
        ms_ssim(pred, target, LossConfig())
    assert max_feasible_scales(48, 48, 11) == 3
    assert max_feasible_scales(176, 200, 11) == 5


def test_perceptual_needs_an_extractor():
    pred, target = _pair()
    with pytest.raises(ConfigError, match="perceptual extractor not configured"):
        perceptual_loss(pred, target, None)
    value = perceptual_loss(pred, target, _mean_features)
    expected = torch.mean((pred.mean(dim=(2, 3)) - target.mean(dim=(2, 3))) ** 2)
    torch.testing.assert_close(value, expected)


# ----------------------------------------------------------------------
# composite
# ----------------------------------------------------------------------
def test_branch_selection_by_step_size():
    cfg = LossConfig()
    assert uses_perceptual(0.5, cfg)
    assert not uses_perceptual(1.0, cfg)
    assert not uses_perceptual(4.0, cfg)


def test_coarse_step_loss_is_pixel_plus_ssim():
    pred, target = _pair()
    cfg = LossConfig(msssim_weights=(0.5, 0.5))
    breakdown = composite_loss(pred, target, step_size=4.0, cfg=cfg)
    assert breakdown.branch == "pixel_ssim"
    assert breakdown.perceptual is None
    torch.testing.assert_close(breakdown.total, pixel_loss(pred, target) + ms_ssim_loss(pred, target, cfg))
    record = breakdown.to_record(3)
    assert record["step"] == 3 and record["perceptual"] is None


def test_fine_step_adds_weighted_perceptual_term():
    pred, target = _pair()
    cfg = LossConfig(msssim_weights=(0.5, 0.5), perceptual_lambda=0.5).with_extractor(_mean_features)
    breakdown = composite_loss(pred, target, step_size=0.5, cfg=cfg)
    assert breakdown.branch == "perceptual"
    torch.testing.assert_close(breakdown.total, breakdown.pixel + 0.5 * breakdown.perceptual + breakdown.ssim)
    with pytest.raises(ConfigError):
        composite_loss(pred, target, step_size=0.5, cfg=cfg.with_extractor(None))


def test_invalid_step_size():
    pred, target = _pair()
    with pytest.raises(ConfigError):
        composite_loss(pred, target, step_size=0.0, cfg=LossConfig(msssim_weights=(1.0,)))


def test_loss_gradients_match_finite_differences():
    target = torch.rand(1, 1, 16, 16, dtype=torch.float64)
    pred = (target + 0.1 * torch.randn(1, 1, 16, 16, dtype=torch.float64)).requires_grad_(True)
    cfg = LossConfig(msssim_weights=(0.5, 0.5), window_size=7, window_sigma=1.0)
    assert gradcheck(lambda p: composite_loss(p, target, 4.0, cfg).total, (pred,), eps=1e-6, atol=1e-5)


def test_default_weights_give_unit_score_for_identical_images():
    target = torch.rand(1, 1, 176, 176, dtype=torch.float64)
    torch.testing.assert_close(ms_ssim(target, target, LossConfig()), torch.ones(1, dtype=torch.float64))


def test_inverted_contrast_keeps_gradients_finite():
    target = torch.rand(1, 1, 32, 32, dtype=torch.float64)
    pred = (1.0 - target).requires_grad_(True)
    cfg = LossConfig(msssim_weights=(0.5, 0.5), window_size=7, window_sigma=1.0)
    loss = ms_ssim_loss(pred, target, cfg)
    loss.backward()
    assert 0.0 < loss.item() <= 1.0
    assert torch.isfinite(pred.grad).all()
