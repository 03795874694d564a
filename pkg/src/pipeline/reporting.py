"""TIFF, CSV and JSON artifacts of evaluations and dose sweeps."""

import os
import csv
import math
import logging
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
import tifffile

from src.core.error_handler import DataError
from src.core.utils import FileUtils
from src.imaging.metrics import line_profile, profile_contrast, radial_power, spectral_cutoff

logger = logging.getLogger(__name__)

SWEEP_CSV_NAME = "sweep.csv"
SWEEP_JSON_NAME = "sweep.json"
EQUIVALENCE_CSV_NAME = "dose_equivalence.csv"


# ----------------------------------------------------------------------
# primitives
# ----------------------------------------------------------------------
def write_image(path: str, image: np.ndarray) -> str:
    """Single float32 TIFF page."""
    parent = os.path.dirname(path)
    if parent:
        FileUtils.ensure_directory(parent)
    tifffile.imwrite(path, np.asarray(image, dtype=np.float32))
    return path


def read_image(path: str) -> np.ndarray:
    if not os.path.exists(path):
        raise DataError(f"image not found: {path}")
    image = np.asarray(tifffile.imread(path), dtype=np.float64)
    if image.ndim != 2:
        raise DataError(f"{path}: expected a single 2-D image, got shape {image.shape}")
    return image


def _cell(value: Any) -> Any:
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    if isinstance(value, float) and math.isnan(value):
        return ""
    if value is None:
        return ""
    return value


def write_rows_csv(path: str, rows: Iterable[Dict[str, Any]], columns: Optional[Sequence[str]] = None) -> str:
    rows = list(rows)
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    parent = os.path.dirname(path)
    if parent:
        FileUtils.ensure_directory(parent)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(columns), extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({key: _cell(row.get(key)) for key in columns})
    return path


# ----------------------------------------------------------------------
# figure-ready curves
# ----------------------------------------------------------------------
def standard_profiles(image: np.ndarray, n_samples: Optional[int] = None) -> Dict[str, np.ndarray]:
    """Horizontal line through the centre and the main diagonal."""
    h, w = image.shape
    n = n_samples or max(h, w)
    return {
        "horizontal": line_profile(image, (h // 2, 0), (h // 2, w - 1), n),
        "diagonal": line_profile(image, (0, 0), (h - 1, w - 1), n),
    }


def profile_rows(images: Dict[str, np.ndarray]) -> List[Dict[str, Any]]:
    """One row per sample position with a column per (image, line)."""
    columns: Dict[str, np.ndarray] = {}
    for label, image in images.items():
        for line, values in standard_profiles(image).items():
            columns[f"{label}_{line}"] = values
    length = min(len(v) for v in columns.values())
    return [{"position": i, **{key: float(v[i]) for key, v in columns.items()}} for i in range(length)]


def radial_power_rows(images: Dict[str, np.ndarray], pixel_size: float) -> List[Dict[str, Any]]:
    curves = {label: radial_power(image, pixel_size) for label, image in images.items()}
    frequencies = next(iter(curves.values()))[0]
    return [
        {"frequency": float(f), **{label: float(curve[1][i]) for label, curve in curves.items()}}
        for i, f in enumerate(frequencies)
    ]


def evaluation_report(pred: np.ndarray, target: np.ndarray, scores: Dict[str, Any],
                      pixel_size: float) -> Dict[str, Any]:
    """Scores plus profile contrast and spectral details for one reconstruction."""
    report = dict(scores)
    report["pixel_size"] = pixel_size
    report["profiles"] = {
        label: {line: profile_contrast(values).to_dict() for line, values in standard_profiles(image).items()}
        for label, image in (("pred", pred), ("gt", target))
    }
    if min(pred.shape) > 32:
        spectrum = spectral_cutoff(pred, pixel_size)
        report["noise_floor"] = spectrum.noise_floor
    return report


# ----------------------------------------------------------------------
# sweep artifacts
# ----------------------------------------------------------------------
def _dose_label(dose: float) -> str:
    return "inf" if math.isinf(dose) else f"{dose:g}"


def write_sweep_outputs(report, out_dir: str, save_images: bool = True) -> Dict[str, str]:
    """
    Comparison table (CSV + JSON), dose equivalence, per-dose images and curves.

    Returns:
        Dict[str, str]: Artifact name -> path
    """
    FileUtils.ensure_directory(out_dir)
    rows = [row.to_dict() for row in report.rows]
    written = {
        "table": write_rows_csv(os.path.join(out_dir, SWEEP_CSV_NAME), rows),
        "json": FileUtils.write_json_file(os.path.join(out_dir, SWEEP_JSON_NAME), {
            "sample": report.sample,
            "pixel_size": report.pixel_size,
            "rows": rows,
            "dose_equivalence": report.equivalence,
        }),
    }
    if report.equivalence:
        written["equivalence"] = write_rows_csv(os.path.join(out_dir, EQUIVALENCE_CSV_NAME), report.equivalence)

    doses = sorted({row.dose for row in report.rows})
    for dose in doses:
        label = _dose_label(dose)
        images = {method: by_dose[dose] for method, by_dose in report.images.items() if dose in by_dose}
        if not images:
            continue
        if report.ground_truth is not None:
            images = {"gt": report.ground_truth, **images}
        written[f"profiles_{label}"] = write_rows_csv(os.path.join(out_dir, f"profiles_dose_{label}.csv"),
                                                      profile_rows(images))
        written[f"radial_power_{label}"] = write_rows_csv(os.path.join(out_dir, f"radial_power_dose_{label}.csv"),
                                                          radial_power_rows(images, report.pixel_size))
        if save_images:
            for method, image in images.items():
                if method == "gt":
                    continue
                write_image(os.path.join(out_dir, "images", f"{method}_dose_{label}.tiff"), image)
    if save_images and report.ground_truth is not None:
        written["ground_truth"] = write_image(os.path.join(out_dir, "images", "ground_truth.tiff"),
                                              report.ground_truth)
    logger.info("Wrote %d sweep artifacts to %s", len(written), out_dir)
    return written
