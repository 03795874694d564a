"""Reconstruction of measured cubes with a trained checkpoint."""

import logging
from typing import Optional, Union

import numpy as np
import torch

from src.core.error_handler import ConfigError, NumericalError
from src.imaging.datacube import DataCube4D, recenter
from src.imaging.multiview import ViewStack, build_view_stack
from src.model.checkpoint import load_checkpoint
from src.model.network import reconstruct

logger = logging.getLogger(__name__)


class Reconstructor:
    """A loaded checkpoint plus the exact view extraction it was trained with."""

    def __init__(self, checkpoint_dir: str, device: str = "cpu") -> None:
        self.checkpoint_dir = checkpoint_dir
        self.device = torch.device(device)
        model, info = load_checkpoint(checkpoint_dir)
        self.model = model.to(self.device)
        self.info = info

    @property
    def upscale(self) -> int:
        return self.info.model.upscale

    def views_for(self, cube: DataCube4D, center: bool = False) -> ViewStack:
        """
        Extract views with the stored settings.

        Raises:
            ConfigError: the extraction yields a different view count than the checkpoint expects
        """
        if center:
            cube = recenter(cube)
        stack = build_view_stack(cube, self.info.views)
        if stack.count != self.info.in_views:
            settings = self.info.views
            raise ConfigError(
                f"checkpoint expects {self.info.in_views} views but bin = {settings.bin}, "
                f"radius_fraction = {settings.radius_fraction} yields {stack.count} on this acquisition "
                f"(detector {cube.detector_shape}, {cube.calib.convergence} mrad, "
                f"{cube.calib.detector_pixel} mrad/px); re-extract with matching settings or retrain"
            )
        return stack

    def reconstruct_views(self, stack: ViewStack) -> np.ndarray:
        views = torch.from_numpy(np.asarray(stack.views, dtype=np.float32)).to(self.device)
        image = reconstruct(self.model, views)[0].cpu().numpy().astype(np.float64)
        if not np.all(np.isfinite(image)):
            raise NumericalError("reconstruction contains non-finite values")
        return image

    def __call__(self, cube: DataCube4D, center: bool = False) -> np.ndarray:
        image = self.reconstruct_views(self.views_for(cube, center))
        logger.debug("Reconstructed %s scan into %s image", cube.scan_shape, image.shape)
        return image


def infer(checkpoint: Union[str, Reconstructor], cube: DataCube4D, center: bool = False,
          device: Optional[str] = None) -> np.ndarray:
    """Super-resolved image (rH, rW) of one measurement."""
    reconstructor = checkpoint if isinstance(checkpoint, Reconstructor) else Reconstructor(checkpoint, device or "cpu")
    return reconstructor(cube, center)
