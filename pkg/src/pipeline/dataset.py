"""
Training data: clean (infinite-dose) containers built from a manifest, and a
torch dataset that corrupts them on the fly, one fresh dose draw per epoch.
"""

import os
import json
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import torch
from torch.utils.data import Dataset

from src.core.config import CorruptionConfig, DatasetManifest, PhantomRecipe, ViewSettings
from src.core.constants import DATASET_INDEX_NAME
from src.core.database import DatabaseManager
from src.core.error_handler import ConfigError, DataError, Misr4dError, ShapeError
from src.core.utils import FileUtils, derive_seed
from src.imaging.container import load_cube, load_ground_truth, save_cube
from src.imaging.corruption import apply_dose, sample_corruption
from src.imaging.datacube import DataCube4D
from src.imaging.multiview import build_view_stack
from src.imaging.simulator import make_phantom_for_scan, simulate_scan

logger = logging.getLogger(__name__)

MANIFEST_COPY_NAME = "manifest.json"


def sample_name(index: int) -> str:
    return f"sample_{index:04d}"


def variant_seed(recipe: PhantomRecipe, variant: int) -> int:
    """Variant 0 keeps the recipe seed; later variants derive their own."""
    return recipe.seed if variant == 0 else derive_seed(recipe.seed, "variant", variant)


def index_path(dataset_root: str) -> str:
    return os.path.join(dataset_root, DATASET_INDEX_NAME)


def build_dataset(manifest: DatasetManifest, out_dir: str, workers: Optional[int] = None) -> List[Dict[str, Any]]:
    """
    Simulate every recipe × variant of a manifest into clean containers.

    Args:
        manifest (DatasetManifest): Acquisition, scan shape and phantom recipes
        out_dir (str): Dataset root; receives sample_XXXX.h5, index.db and a manifest copy
        workers (Optional[int]): Threads for the FFTs

    Returns:
        List[Dict[str, Any]]: One index entry per written sample

    Raises:
        ConfigError: a recipe failed; the message names the entry
    """
    FileUtils.ensure_directory(out_dir)
    db = DatabaseManager(index_path(out_dir))
    db.clear_samples()

    entries: List[Dict[str, Any]] = []
    index = 0
    for position, recipe in enumerate(manifest.recipes):
        label = recipe.name or f"recipe #{position} ({recipe.kind}, seed {recipe.seed})"
        calib = manifest.calibration_for(recipe)
        for variant in range(recipe.variants):
            seed = variant_seed(recipe, variant)
            try:
                phantom = make_phantom_for_scan(recipe.kind, recipe.params, seed, calib, manifest.scan_shape,
                                                manifest.detector_oversample, manifest.upscale)
                cube, ground_truth = simulate_scan(phantom, calib, manifest.scan_shape,
                                                   manifest.detector_oversample, manifest.upscale, workers)
            except Misr4dError as exc:
                raise ConfigError(f"{label}, variant {variant}: {exc}") from exc

            name = sample_name(index)
            path = os.path.join(out_dir, f"{name}.h5")
            save_cube(path, cube, ground_truth, extra_attrs={
                "name": name,
                "kind": recipe.kind,
                "seed": int(seed),
                "variant": int(variant),
                "split": recipe.split,
                "upscale": int(manifest.upscale),
                "recipe": json.dumps(recipe.to_dict(), sort_keys=True),
            })
            db.add_sample(name, os.path.basename(path), recipe.kind, seed, manifest.scan_shape,
                          variant=variant, split=recipe.split, recipe=recipe.to_dict())
            entries.append({"name": name, "path": path, "kind": recipe.kind, "seed": seed,
                            "variant": variant, "split": recipe.split})
            logger.info("Wrote %s (%s, seed %d, %s split)", name, recipe.kind, seed, recipe.split)
            index += 1

    FileUtils.write_json_file(os.path.join(out_dir, MANIFEST_COPY_NAME), manifest.to_dict())
    logger.info("Dataset of %d samples written to %s", len(entries), out_dir)
    return entries


def dataset_samples(dataset_root: str, split: Optional[str] = "train") -> List[Dict[str, Any]]:
    """Index entries of a built dataset with absolute container paths."""
    path = index_path(dataset_root)
    if not os.path.exists(path):
        raise ConfigError(f"no dataset index at {path}; run simulate first")
    samples = DatabaseManager(path).get_samples(split)
    for sample in samples:
        if not os.path.isabs(sample["path"]):
            sample["path"] = os.path.join(dataset_root, sample["path"])
    return samples


@dataclass(frozen=True)
class CleanSample:
    cube: DataCube4D
    ground_truth: np.ndarray


def load_clean_sample(path: str) -> CleanSample:
    """Read a training container; only noise-free unit-flux cubes are accepted."""
    cube = load_cube(path)
    if cube.signed:
        raise DataError(f"{path}: training containers must hold clean (unsigned) data")
    ground_truth = load_ground_truth(path)
    expected = tuple(s * r for s, r in zip(cube.scan_shape, _upscale_of(cube, ground_truth)))
    if ground_truth.shape != expected:
        raise ShapeError(f"{path}: ground truth {ground_truth.shape} is not an integer upscale of {cube.scan_shape}")
    return CleanSample(cube=cube, ground_truth=ground_truth)


def _upscale_of(cube: DataCube4D, ground_truth: np.ndarray) -> Sequence[int]:
    return [max(1, g // s) for g, s in zip(ground_truth.shape, cube.scan_shape)]


class CorruptedViewDataset(Dataset):
    """
    Clean containers seen through a fresh corruption every epoch.

    Item i of epoch e is corrupted with sample_corruption(e, cfg, i), so the
    draw depends on the sample's position in the index, never on the loader order.
    """

    def __init__(self, paths: Sequence[str], views: ViewSettings, corruption: CorruptionConfig,
                 cache: bool = True) -> None:
        if not paths:
            raise ConfigError("dataset has no training samples")
        self.paths = list(paths)
        self.views = views
        self.corruption = corruption
        self.epoch = 0
        self._cache: Optional[Dict[int, CleanSample]] = {} if cache else None

    def __len__(self) -> int:
        return len(self.paths)

    def set_epoch(self, epoch: int) -> None:
        self.epoch = int(epoch)

    def clean(self, index: int) -> CleanSample:
        if self._cache is None:
            return load_clean_sample(self.paths[index])
        if index not in self._cache:
            self._cache[index] = load_clean_sample(self.paths[index])
        return self._cache[index]

    def __getitem__(self, index: int) -> Dict[str, Any]:
        sample = self.clean(index)
        spec = sample_corruption(self.epoch, self.corruption, index)
        stack = build_view_stack(apply_dose(sample.cube, spec), self.views)
        return {
            "views": torch.from_numpy(stack.views.astype(np.float32)),
            "target": torch.from_numpy(sample.ground_truth.astype(np.float32))[None],
            "index": index,
            "dose": float(spec.dose),
        }
