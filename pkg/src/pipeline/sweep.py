"""
Dose sweeps: one sample corrupted at a series of doses, reconstructed by the
network and every baseline, and scored against its ground truth.
"""

import math
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.core.config import ViewSettings
from src.core.constants import DEFAULT_SWEEP_DOSES
from src.core.database import DatabaseManager
from src.core.error_handler import ConfigError, DataError
from src.core.utils import derive_seed
from src.imaging.baselines import bf_sum_upsampled, idpc, parallax, upsample_bicubic
from src.imaging.container import load_cube, load_ground_truth
from src.imaging.corruption import DoseSpec, apply_dose
from src.imaging.datacube import DataCube4D
from src.imaging.metrics import evaluate, match_intensity
from src.imaging.multiview import bf_mask, extract_views, normalize_views
from src.pipeline.inference import Reconstructor

logger = logging.getLogger(__name__)

MODEL_METHOD = "misr4d"
BASELINE_METHODS = ("bf", "idpc", "parallax")
METHODS = (MODEL_METHOD,) + BASELINE_METHODS


@dataclass
class SweepRow:
    sample: str
    method: str
    dose: float
    psnr: float
    ssim: float
    cnr: float
    cutoff: float
    floor_dominated: bool
    psnr_center: float
    psnr_periphery: float

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)


@dataclass
class SweepReport:
    sample: str
    rows: List[SweepRow]
    images: Dict[str, Dict[float, np.ndarray]] = field(default_factory=dict)
    ground_truth: Optional[np.ndarray] = None
    pixel_size: float = 1.0
    equivalence: List[Dict[str, Any]] = field(default_factory=list)

    def rows_for(self, method: str) -> List[SweepRow]:
        return [row for row in self.rows if row.method == method]


def baseline_images(cube: DataCube4D, upscale: int, views: ViewSettings,
                    methods: Sequence[str] = BASELINE_METHODS) -> Dict[str, np.ndarray]:
    """
    Every requested classical reconstruction on the (rH, rW) grid.

    bf and idpc are resampled bicubically; parallax upsamples while it sums.
    """
    return {method: run_baseline(cube, method, upscale, views)[0] for method in methods}


def run_baseline(cube: DataCube4D, method: str, upscale: int,
                 views: ViewSettings) -> Tuple[np.ndarray, Dict[str, Any]]:
    """
    One classical reconstruction and the parameters that produced it.

    Returns:
        The (rH, rW) image and a JSON-ready record; for parallax the record also
        carries the fitted shift model and the per-view shift table.
    """
    record: Dict[str, Any] = {"method": method, "upscale": int(upscale), "radius_fraction": views.radius_fraction}
    mask = bf_mask(cube.calib, views.radius_fraction)
    if method == "bf":
        return bf_sum_upsampled(cube, mask, upscale), record
    if method == "idpc":
        return upsample_bicubic(idpc(cube), upscale), record
    if method == "parallax":
        result = parallax(normalize_views(extract_views(cube, mask, views.bin)), upscale=upscale)
        record.update(
            bin=views.bin,
            excluded_views=list(result.excluded),
            shift_model=result.model.to_dict() if result.model is not None else None,
            shift_table=result.shift_table(),
        )
        return result.image, record
    raise ConfigError(f"unknown baseline method {method!r}; expected one of {', '.join(BASELINE_METHODS)}")


def dose_sweep(checkpoint: Union[str, Reconstructor], sample_path: str,
               doses: Sequence[float] = DEFAULT_SWEEP_DOSES, seed: int = 0,
               gaussian_sigma: float = 0.0, bias: float = 0.0,
               methods: Sequence[str] = METHODS, sample: Optional[str] = None,
               db_manager: Optional[DatabaseManager] = None, run_id: Optional[int] = None) -> SweepReport:
    """
    Score the network and the baselines on one sample across doses.

    Args:
        checkpoint (Union[str, Reconstructor]): Checkpoint directory or a loaded reconstructor
        sample_path (str): Clean container with ground truth
        doses (Sequence[float]): Doses in e⁻/Å²; math.inf for noise-free counts
        seed (int): Master seed; each dose gets its own derived noise seed
        gaussian_sigma (float): Read-out noise added at every dose
        bias (float): Read-out offset added at every dose
        methods (Sequence[str]): Subset of METHODS to run
        sample (Optional[str]): Label used in the rows, defaults to the path
        db_manager (Optional[DatabaseManager]): Records every row under run_id when given
        run_id (Optional[int]): Sweep run the rows belong to

    Returns:
        SweepReport: len(doses) × len(methods) rows plus the images behind them
    """
    if not doses:
        raise ConfigError("dose sweep needs at least one dose")
    unknown = sorted(set(methods) - set(METHODS))
    if unknown:
        raise ConfigError(f"unknown sweep method(s) {', '.join(unknown)}")
    reconstructor = checkpoint if isinstance(checkpoint, Reconstructor) else Reconstructor(checkpoint)
    clean = load_cube(sample_path)
    if clean.signed:
        raise DataError(f"{sample_path}: sweeps start from a clean container")
    ground_truth = load_ground_truth(sample_path)
    upscale = reconstructor.upscale
    pixel_size = clean.calib.step_size / upscale
    label = sample or sample_path

    report = SweepReport(sample=label, rows=[], ground_truth=ground_truth, pixel_size=pixel_size)
    for dose in doses:
        spec = DoseSpec(dose=float(dose), gaussian_sigma=gaussian_sigma, bias=bias,
                        seed=derive_seed(seed, "sweep", dose))
        noisy = apply_dose(clean, spec)
        images: Dict[str, np.ndarray] = {}
        if MODEL_METHOD in methods:
            images[MODEL_METHOD] = reconstructor(noisy)
        images.update(baseline_images(noisy, upscale, reconstructor.info.views,
                                      [m for m in methods if m != MODEL_METHOD]))

        for method, image in images.items():
            if image.shape != ground_truth.shape:
                raise DataError(f"{method} image {image.shape} does not match ground truth {ground_truth.shape}")
            scores = evaluate(image, ground_truth, pixel_size)
            row = SweepRow(sample=label, method=method, dose=float(dose), **scores)
            report.rows.append(row)
            report.images.setdefault(method, {})[float(dose)] = match_intensity(image, ground_truth)
            if db_manager is not None and run_id is not None:
                db_manager.add_sweep_result(run_id, label, method, dose, row.psnr, row.ssim, row.cnr, row.cutoff)
        logger.info("Dose %s: %s", dose, ", ".join(
            f"{row.method} {row.psnr:.2f} dB" for row in report.rows if row.dose == float(dose)))

    if MODEL_METHOD in methods:
        for reference in (m for m in BASELINE_METHODS if m in methods):
            report.equivalence.extend(dose_equivalence(report.rows, MODEL_METHOD, reference))
    return report


def dose_equivalence(rows: Sequence[SweepRow], method: str = MODEL_METHOD,
                     reference: str = "bf") -> List[Dict[str, Any]]:
    """
    Dose a reference method needs to match `method`'s PSNR, per finite dose.

    The reference curve is made non-decreasing, then interpolated linearly in
    log(dose). When the reference never reaches the PSNR within the swept range
    the equivalent dose is None.
    """
    ours = sorted((r.dose, r.psnr) for r in rows if r.method == method and math.isfinite(r.dose))
    theirs = sorted((r.dose, r.psnr) for r in rows if r.method == reference and math.isfinite(r.dose))
    if not ours or len(theirs) < 1:
        return []
    ref_doses = np.log(np.array([d for d, _ in theirs]))
    ref_psnr = np.maximum.accumulate(np.array([p for _, p in theirs]))

    results = []
    for dose, target in ours:
        if target > ref_psnr[-1]:
            equivalent = None
        elif target <= ref_psnr[0]:
            equivalent = float(np.exp(ref_doses[0]))
        else:
            upper = int(np.searchsorted(ref_psnr, target, side="left"))
            lower = upper - 1
            span = ref_psnr[upper] - ref_psnr[lower]
            t = 0.0 if span == 0 else (target - ref_psnr[lower]) / span
            equivalent = float(np.exp(ref_doses[lower] + t * (ref_doses[upper] - ref_doses[lower])))
        results.append({
            "method": method,
            "reference": reference,
            "dose": dose,
            "psnr": target,
            "equivalent_dose": equivalent,
            "dose_ratio": None if equivalent is None else equivalent / dose,
        })
    return results
