"""HDF5 containers holding a datacube, its calibration, the ground truth and extracted views."""

import os
import logging
from typing import Optional, Tuple

import h5py
import numpy as np

from src.core.error_handler import DataError
from src.imaging.datacube import DataCube4D, Layout, ScanCalibration

logger = logging.getLogger(__name__)

CUBE_DATASET = "datacube"
GROUND_TRUTH_DATASET = "ground_truth"
VIEWS_DATASET = "views"
VIEW_ANGLES_DATASET = "view_angles_mrad"

_CALIBRATION_ATTRS = {
    "step_size_A": "step_size",
    "energy_keV": "energy",
    "convergence_mrad": "convergence",
    "defocus_A": "defocus",
    "detector_pixel_mrad": "detector_pixel",
}


def _dataset_options(array: np.ndarray) -> dict:
    # no timestamps, so rebuilding the same data gives the same file
    return {"data": array, "track_times": False}


def save_cube(path: str, cube: DataCube4D, ground_truth: Optional[np.ndarray] = None,
              extra_attrs: Optional[dict] = None) -> str:
    """
    Write a datacube (and optionally its ground truth) to an HDF5 container.

    Args:
        path (str): Output file, overwritten if present
        cube (DataCube4D): Cube to store as float32
        ground_truth (Optional[np.ndarray]): Phase map of shape (rH, rW)
        extra_attrs (Optional[dict]): Additional root attributes (recipe name, seed...)

    Returns:
        str: The path written
    """
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with h5py.File(path, "w", track_order=True) as f:
        dset = f.create_dataset(CUBE_DATASET, **_dataset_options(np.asarray(cube.values, dtype=np.float32)))
        dset.attrs["layout"] = cube.layout.value
        for attr, name in _CALIBRATION_ATTRS.items():
            dset.attrs[attr] = float(getattr(cube.calib, name))
        dset.attrs["center_x"] = float(cube.calib.center[0])
        dset.attrs["center_y"] = float(cube.calib.center[1])
        dset.attrs["signed"] = int(bool(cube.signed))
        if ground_truth is not None:
            f.create_dataset(GROUND_TRUTH_DATASET, **_dataset_options(np.asarray(ground_truth, dtype=np.float32)))
        for key, value in (extra_attrs or {}).items():
            f.attrs[key] = value
    logger.debug("Saved datacube %s to %s", cube.values.shape, path)
    return path


def load_cube(path: str) -> DataCube4D:
    """Read the `/datacube` dataset and its calibration attributes."""
    try:
        with h5py.File(path, "r") as f:
            if CUBE_DATASET not in f:
                raise DataError(f"{path}: no /{CUBE_DATASET} dataset")
            dset = f[CUBE_DATASET]
            values = dset[()]
            attrs = dict(dset.attrs)
    except OSError as exc:
        raise DataError(f"cannot read container {path}: {exc}") from exc

    layout = Layout(str(attrs.get("layout", Layout.REAL_MAJOR.value)))
    detector = values.shape[2:] if layout is Layout.REAL_MAJOR else values.shape[:2]
    calib = ScanCalibration(
        detector_shape=tuple(int(v) for v in detector),
        center=(float(attrs["center_x"]), float(attrs["center_y"])),
        **{name: float(attrs[attr]) for attr, name in _CALIBRATION_ATTRS.items()},
    )
    if values.dtype == np.uint32:
        values = values.astype(np.float64)
    return DataCube4D(values=values, calib=calib, layout=layout, signed=bool(int(attrs.get("signed", 0))))


def load_ground_truth(path: str) -> np.ndarray:
    with h5py.File(path, "r") as f:
        if GROUND_TRUTH_DATASET not in f:
            raise DataError(f"{path}: no /{GROUND_TRUTH_DATASET} dataset")
        return f[GROUND_TRUTH_DATASET][()].astype(np.float64)


def read_attrs(path: str) -> dict:
    with h5py.File(path, "r") as f:
        return dict(f.attrs)


def save_views(path: str, views: np.ndarray, angles: np.ndarray) -> str:
    """Add (or replace) `/views` and `/view_angles_mrad` in an existing or new container."""
    with h5py.File(path, "a") as f:
        for name in (VIEWS_DATASET, VIEW_ANGLES_DATASET):
            if name in f:
                del f[name]
        f.create_dataset(VIEWS_DATASET, **_dataset_options(np.asarray(views, dtype=np.float32)))
        f.create_dataset(VIEW_ANGLES_DATASET, **_dataset_options(np.asarray(angles, dtype=np.float32)))
    return path


def load_views(path: str) -> Tuple[np.ndarray, np.ndarray]:
    with h5py.File(path, "r") as f:
        if VIEWS_DATASET not in f:
            raise DataError(f"{path}: no /{VIEWS_DATASET} dataset")
        return f[VIEWS_DATASET][()].astype(np.float64), f[VIEW_ANGLES_DATASET][()].astype(np.float64)
