"""
Attention-gated U-Net over a stack of virtual bright-field views, followed by
a sub-pixel (depth-to-space) head that upsamples by the configured factor.
"""

import logging
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from src.core.config import ModelConfig
from src.core.constants import BATCH_NORM_MOMENTUM
from src.core.error_handler import ConfigError, ShapeError

logger = logging.getLogger(__name__)


class ConvBlock(nn.Module):
    """Two 3x3 conv -> batch-norm -> ReLU layers."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.conv = nn.Sequential(
            nn.Conv2d(in_channels, out_channels, kernel_size=3, padding=1),
            nn.BatchNorm2d(out_channels, momentum=BATCH_NORM_MOMENTUM),
            nn.ReLU(inplace=True),
            nn.Conv2d(out_channels, out_channels, kernel_size=3, padding=1),
            nn.BatchNorm2d(out_channels, momentum=BATCH_NORM_MOMENTUM),
            nn.ReLU(inplace=True),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv(x)


class UpConv(nn.Module):
    """Nearest-neighbour x2 upsampling -> 3x3 conv -> batch-norm -> ReLU."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.up = nn.Sequential(
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(in_channels, out_channels, kernel_size=3, padding=1),
            nn.BatchNorm2d(out_channels, momentum=BATCH_NORM_MOMENTUM),
            nn.ReLU(inplace=True),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.up(x)


class AttentionGate(nn.Module):
    """x' = x * sigmoid(psi(ReLU(BN(W_g g) + BN(W_x x))))."""

    def __init__(self, gate_channels: int, skip_channels: int, inter_channels: int):
        super().__init__()
        self.W_g = nn.Sequential(
            nn.Conv2d(gate_channels, inter_channels, kernel_size=1),
            nn.BatchNorm2d(inter_channels, momentum=BATCH_NORM_MOMENTUM),
        )
        self.W_x = nn.Sequential(
            nn.Conv2d(skip_channels, inter_channels, kernel_size=1),
            nn.BatchNorm2d(inter_channels, momentum=BATCH_NORM_MOMENTUM),
        )
        self.psi = nn.Conv2d(inter_channels, 1, kernel_size=1)
        self.relu = nn.ReLU(inplace=True)

    def attention_map(self, x: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
        if x.shape[-2:] != g.shape[-2:]:
            raise ShapeError(f"attention gate: skip {tuple(x.shape[-2:])} and gate {tuple(g.shape[-2:])} differ")
        return torch.sigmoid(self.psi(self.relu(self.W_g(g) + self.W_x(x))))

    def forward(self, x: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
        return x * self.attention_map(x, g)


class SubPixelHead(nn.Module):
    """conv3x3 to r² channels -> PReLU -> pixel shuffle -> 1x1 conv."""

    def __init__(self, in_channels: int, upscale: int, prelu_init: float):
        super().__init__()
        self.upscale = upscale
        self.conv = nn.Conv2d(in_channels, upscale ** 2, kernel_size=3, padding=1)
        self.prelu = nn.PReLU(num_parameters=1, init=prelu_init)
        self.refine = nn.Conv2d(1, 1, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.prelu(self.conv(x))
        x = depth_to_space(x, self.upscale)
        return self.refine(x)


class AttentionUNet(nn.Module):
    """Encoder-decoder over V input views producing a (1, rH, rW) image per sample."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        if cfg.in_views is None:
            raise ConfigError("model.in_views is not resolved")
        self.cfg = cfg
        channels = list(cfg.encoder_channels)

        self.encoders = nn.ModuleList()
        in_channels = cfg.in_views
        for out_channels in channels:
            self.encoders.append(ConvBlock(in_channels, out_channels))
            in_channels = out_channels
        self.pool = nn.MaxPool2d(kernel_size=2, stride=2)

        self.ups = nn.ModuleList()
        self.gates = nn.ModuleList()
        self.decoders = nn.ModuleList()
        for deeper, skip in zip(reversed(channels[1:]), reversed(channels[:-1])):
            self.ups.append(UpConv(deeper, skip))
            inter = max(1, int(round(skip * cfg.f_int_ratio)))
            self.gates.append(AttentionGate(gate_channels=skip, skip_channels=skip, inter_channels=inter))
            self.decoders.append(ConvBlock(2 * skip, skip))

        self.head = SubPixelHead(channels[0], cfg.upscale, cfg.prelu_init)

    def check_input(self, x: torch.Tensor) -> None:
        if x.ndim != 4:
            raise ShapeError(f"network input must be (N, V, H, W), got {tuple(x.shape)}")
        if x.shape[1] != self.cfg.in_views:
            raise ShapeError(f"network expects {self.cfg.in_views} views, got {x.shape[1]}")
        height, width = x.shape[-2:]
        for stage in range(1, len(self.cfg.encoder_channels)):
            divisor = 2 ** stage
            if height % divisor or width % divisor:
                raise ShapeError(
                    f"encoder stage {stage + 1}: input {height}x{width} is not divisible by {divisor} "
                    f"(needs multiples of {self.cfg.spatial_divisor})"
                )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self.check_input(x)
        skips = []
        for level, encoder in enumerate(self.encoders):
            if level:
                x = self.pool(x)
            x = encoder(x)
            skips.append(x)

        x = skips.pop()
        for up, gate, decoder in zip(self.ups, self.gates, self.decoders):
            skip = skips.pop()
            d = up(x)
            x = decoder(torch.cat([gate(skip, d), d], dim=1))
        return self.head(x)


def depth_to_space(t: torch.Tensor, r: int) -> torch.Tensor:
    """(…, r², H, W) -> (…, 1, rH, rW) with out[r·h + dy, r·w + dx] = t[r·dy + dx, h, w]."""
    if t.shape[-3] != r * r:
        raise ShapeError(f"depth_to_space needs {r * r} channels for r = {r}, got {t.shape[-3]}")
    return F.pixel_shuffle(t, r)


def space_to_depth(image: torch.Tensor, r: int) -> torch.Tensor:
    """Inverse of depth_to_space."""
    if image.shape[-3] != 1 or image.shape[-2] % r or image.shape[-1] % r:
        raise ShapeError(f"space_to_depth needs a single channel divisible by {r}, got {tuple(image.shape)}")
    return F.pixel_unshuffle(image, r)


def _reset_parameters(model: nn.Module) -> None:
    for module in model.modules():
        if isinstance(module, nn.Conv2d):
            # fan-in scaled uniform initialization
            nn.init.kaiming_uniform_(module.weight, nonlinearity="relu")
            if module.bias is not None:
                nn.init.zeros_(module.bias)
        elif isinstance(module, nn.BatchNorm2d):
            nn.init.ones_(module.weight)
            nn.init.zeros_(module.bias)
            module.reset_running_stats()
    if isinstance(model, AttentionUNet):
        # the refinement conv starts as the identity
        nn.init.ones_(model.head.refine.weight)
        nn.init.zeros_(model.head.refine.bias)


def init_model(cfg: ModelConfig, seed: int, dtype: Optional[torch.dtype] = None) -> AttentionUNet:
    """
    Build the network with deterministic parameters.

    Args:
        cfg (ModelConfig): Resolved configuration (in_views set)
        seed (int): Initialization seed; the global torch RNG is left untouched
        dtype (Optional[torch.dtype]): Parameter dtype, float32 by default

    Returns:
        AttentionUNet: Model in training mode
    """
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = AttentionUNet(cfg)
        _reset_parameters(model)
    if dtype is not None:
        model = model.to(dtype=dtype)
    logger.debug("Initialized model with %d parameters (seed %d)", parameter_count(model), seed)
    return model


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


@torch.no_grad()
def reconstruct(model: AttentionUNet, views: torch.Tensor) -> torch.Tensor:
    """Inference with frozen batch statistics; accepts (V, H, W) or (N, V, H, W)."""
    model.eval()
    squeeze = views.ndim == 3
    if squeeze:
        views = views.unsqueeze(0)
    output = model(views)
    return output[0] if squeeze else output
