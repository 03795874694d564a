"""Portable checkpoints: a JSON manifest plus one raw little-endian float32 file per parameter."""

import os
import shutil
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np
import torch

from src.core.config import ModelConfig, ViewSettings
from src.core.constants import APP_VERSION, CHECKPOINT_MANIFEST_NAME
from src.core.error_handler import ConfigError, DataError
from src.core.utils import FileUtils, TimeUtils
from src.imaging.datacube import ScanCalibration
from src.model.network import AttentionUNet, init_model

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "misr4d-checkpoint"
ARRAY_DTYPE = "<f4"


@dataclass
class CheckpointInfo:
    """Everything a checkpoint records besides the arrays."""

    model: ModelConfig
    views: ViewSettings
    calibration: Optional[ScanCalibration] = None
    provenance: Dict[str, Any] = field(default_factory=dict)

    @property
    def in_views(self) -> int:
        return int(self.model.in_views)


def _array_file(name: str) -> str:
    return f"{name}.f4"


def save_checkpoint(directory: str, model: AttentionUNet, views: ViewSettings,
                    calibration: Optional[ScanCalibration] = None,
                    provenance: Optional[Dict[str, Any]] = None) -> str:
    """
    Write manifest.json plus one raw little-endian float32 file per state-dict entry.

    The directory is replaced as a whole so a previous checkpoint survives a failed write.
    """
    staging = directory.rstrip(os.sep) + ".tmp"
    if os.path.exists(staging):
        shutil.rmtree(staging)
    os.makedirs(staging)

    arrays = []
    for name, tensor in model.state_dict().items():
        array = tensor.detach().cpu().numpy()
        file_name = _array_file(name)
        np.ascontiguousarray(array, dtype=ARRAY_DTYPE).tofile(os.path.join(staging, file_name))
        arrays.append({
            "name": name,
            "file": file_name,
            "shape": list(array.shape),
            "dtype": ARRAY_DTYPE,
            "source_dtype": str(array.dtype),
        })

    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": APP_VERSION,
        "created_at": TimeUtils.utc_now_iso(),
        "model": model.cfg.to_dict(),
        "views": views.to_dict(),
        "calibration": calibration.to_dict() if calibration is not None else None,
        "provenance": provenance or {},
        "arrays": arrays,
    }
    FileUtils.write_json_file(os.path.join(staging, CHECKPOINT_MANIFEST_NAME), manifest)

    if os.path.exists(directory):
        shutil.rmtree(directory)
    os.replace(staging, directory)
    logger.info("Saved checkpoint with %d arrays to %s", len(arrays), directory)
    return directory


def read_checkpoint_info(directory: str) -> Tuple[CheckpointInfo, Dict[str, Any]]:
    manifest_path = os.path.join(directory, CHECKPOINT_MANIFEST_NAME)
    if not os.path.exists(manifest_path):
        raise ConfigError(f"not a checkpoint directory (no {CHECKPOINT_MANIFEST_NAME}): {directory}")
    manifest = FileUtils.read_json_file(manifest_path)
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{manifest_path}: unknown checkpoint format {manifest.get('format')!r}")
    calibration = manifest.get("calibration")
    info = CheckpointInfo(
        model=ModelConfig.from_dict(manifest["model"]),
        views=ViewSettings.from_dict(manifest["views"]),
        calibration=ScanCalibration.from_dict(calibration) if calibration else None,
        provenance=manifest.get("provenance", {}),
    )
    return info, manifest


def load_checkpoint(directory: str) -> Tuple[AttentionUNet, CheckpointInfo]:
    """
    Rebuild the model stored in a checkpoint directory.

    Returns:
        Tuple[AttentionUNet, CheckpointInfo]: Model in eval mode and its recorded settings

    Raises:
        ConfigError: missing or foreign manifest
        DataError: array files missing or of the wrong size
    """
    info, manifest = read_checkpoint_info(directory)
    model = init_model(info.model, seed=0)
    reference = model.state_dict()

    state = {}
    for entry in manifest["arrays"]:
        name = entry["name"]
        if name not in reference:
            raise DataError(f"checkpoint array {name!r} does not belong to this architecture")
        path = os.path.join(directory, entry["file"])
        if not os.path.exists(path):
            raise DataError(f"checkpoint array file missing: {path}")
        array = np.fromfile(path, dtype=entry.get("dtype", ARRAY_DTYPE))
        shape = tuple(entry["shape"])
        if array.size != int(np.prod(shape, dtype=np.int64)):
            raise DataError(f"checkpoint array {name!r}: expected {shape}, file holds {array.size} values")
        state[name] = torch.from_numpy(array.reshape(shape).astype(np.float32)).to(reference[name].dtype)
    missing = sorted(set(reference) - set(state))
    if missing:
        raise DataError(f"checkpoint lacks arrays: {', '.join(missing)}")

    model.load_state_dict(state)
    model.eval()
    logger.info("Loaded checkpoint %s (V = %d, r = %d)", directory, info.in_views, info.model.upscale)
    return model, info
