import os
import logging
from typing import Any, Dict, List, Optional, Sequence

from src.core.config import DatasetManifest, TrainingConfig, ViewSettings, apply_seed_override
from src.core.constants import DEFAULT_SWEEP_DOSES, DEFAULT_UPSCALE
from src.core.database import DatabaseManager
from src.core.error_handler import ConfigError, DataError, ErrorHandler
from src.core.utils import FileUtils
from src.imaging.container import load_cube, load_ground_truth, read_attrs, save_cube, save_views
from src.imaging.corruption import DoseSpec, apply_dose
from src.imaging.metrics import evaluate
from src.imaging.multiview import build_view_stack
from src.pipeline.dataset import build_dataset, dataset_samples
from src.pipeline.inference import Reconstructor
from src.pipeline.reporting import (
    evaluation_report,
    profile_rows,
    radial_power_rows,
    read_image,
    write_image,
    write_rows_csv,
    write_sweep_outputs,
)
from src.pipeline.sweep import BASELINE_METHODS, dose_sweep, run_baseline
from src.pipeline.trainer import Trainer

logger = logging.getLogger(__name__)


def _with_suffix(path: str, suffix: str) -> str:
    root, ext = os.path.splitext(path)
    return f"{root}{suffix}{ext or '.h5'}"


def sidecar_path(image_path: str) -> str:
    return f"{os.path.splitext(image_path)[0]}.json"


class PipelineOrchestrator:
    """Runs one pipeline request at a time and records it in the run history."""

    def __init__(self, db_manager: Optional[DatabaseManager], error_handler: ErrorHandler) -> None:
        self.db_manager = db_manager
        self.error_handler = error_handler

    # ------------------------------------------------------------------
    # data preparation
    # ------------------------------------------------------------------
    def simulate(self, manifest_path: str, out_dir: str, workers: Optional[int] = None) -> List[str]:
        manifest = DatasetManifest.load(manifest_path)
        logger.info("Simulating %d samples from %s", manifest.sample_count, manifest_path)
        run_id = self._start_run("simulate", {"manifest": manifest_path, "out_dir": out_dir})
        try:
            entries = build_dataset(manifest, out_dir, workers)
        except Exception as exc:
            self._fail_run(run_id, exc)
            raise
        self._finish_run(run_id, steps=len(entries))
        return [entry["path"] for entry in entries]

    def corrupt(self, in_path: str, dose: float, sigma: float = 0.0, bias: float = 0.0, seed: int = 0,
                out_path: Optional[str] = None) -> str:
        cube = load_cube(in_path)
        spec = DoseSpec(dose=dose, gaussian_sigma=sigma, bias=bias, seed=seed)
        noisy = apply_dose(cube, spec)
        out_path = out_path or _with_suffix(in_path, f"_dose{dose:g}")
        ground_truth = self._ground_truth_or_none(in_path)
        if ground_truth is None:
            self.error_handler.log_warning(f"{in_path} has no ground truth; {out_path} cannot be scored",
                                           module="orchestrator")
        save_cube(out_path, noisy, ground_truth, extra_attrs={
            "source": os.path.abspath(in_path), "source_sha256": FileUtils.get_file_hash(in_path),
            "dose": str(dose), "gaussian_sigma": sigma, "bias": bias, "noise_seed": int(seed),
        })
        self.error_handler.log_info(f"Corrupted {in_path} at dose {dose:g} -> {out_path}", module="orchestrator")
        return out_path

    def views(self, in_path: str, bin: int, radius_fraction: float, normalize: bool = True,
              out_path: Optional[str] = None) -> str:
        settings = ViewSettings(radius_fraction=radius_fraction, bin=bin, normalize=normalize)
        stack = build_view_stack(load_cube(in_path), settings)
        out_path = out_path or in_path
        save_views(out_path, stack.views, stack.angles)
        logger.info("Stored %d views of %s in %s", stack.count, in_path, out_path)
        return out_path

    # ------------------------------------------------------------------
    # network
    # ------------------------------------------------------------------
    def train(self, config_path: str) -> Dict[str, Any]:
        cfg = apply_seed_override(TrainingConfig.load(config_path))
        if cfg.manifest and not os.path.exists(os.path.join(cfg.dataset_root, "index.db")):
            logger.info("Dataset %s not built yet; simulating from %s", cfg.dataset_root, cfg.manifest)
            self.simulate(cfg.manifest, cfg.dataset_root)
        result = Trainer(cfg, self.db_manager).run()
        return {"checkpoint": result.checkpoint_dir, "metrics_log": result.metrics_log,
                "steps": result.steps, "final_loss": result.final_loss}

    def infer(self, checkpoint: str, in_path: str, out_path: str, center: bool = False) -> str:
        image = Reconstructor(checkpoint)(load_cube(in_path), center=center)
        return write_image(out_path, image)

    # ------------------------------------------------------------------
    # comparison
    # ------------------------------------------------------------------
    def baseline(self, method: str, in_path: str, out_path: str, upscale: int = DEFAULT_UPSCALE,
                 bin: int = 1, radius_fraction: Optional[float] = None) -> str:
        if method not in BASELINE_METHODS:
            raise ConfigError(f"unknown baseline method {method!r}; expected one of {', '.join(BASELINE_METHODS)}")
        settings = ViewSettings(bin=bin) if radius_fraction is None else ViewSettings(radius_fraction, bin)
        image, record = run_baseline(load_cube(in_path), method, upscale, settings)
        record["source"] = os.path.abspath(in_path)
        FileUtils.write_json_file(sidecar_path(out_path), record)
        return write_image(out_path, image)

    def evaluate(self, pred_path: str, gt_path: str, report_path: str,
                 pixel_size: Optional[float] = None) -> Dict[str, Any]:
        pred = read_image(pred_path)
        target = self._read_target(gt_path)
        pixel_size = pixel_size or self._pixel_size_hint(gt_path)
        report = evaluation_report(pred, target, evaluate(pred, target, pixel_size), pixel_size)
        FileUtils.write_json_file(report_path, report)
        root, _ = os.path.splitext(report_path)
        write_rows_csv(f"{root}_profiles.csv", profile_rows({"pred": pred, "gt": target}))
        write_rows_csv(f"{root}_radial_power.csv", radial_power_rows({"pred": pred, "gt": target}, pixel_size))
        logger.info("PSNR %.2f dB, SSIM %.4f, CNR %.3f", report["psnr"], report["ssim"], report["cnr"])
        return report

    def sweep(self, checkpoint: str, out_dir: str, sample_path: Optional[str] = None,
              dataset_root: Optional[str] = None, doses: Sequence[float] = DEFAULT_SWEEP_DOSES,
              seed: int = 0, sigma: float = 0.0, bias: float = 0.0) -> Dict[str, str]:
        paths = self._sweep_samples(sample_path, dataset_root)
        run_id = self._start_run("sweep", {"checkpoint": checkpoint, "samples": paths, "doses": list(doses),
                                           "seed": seed, "sigma": sigma, "bias": bias})
        reconstructor = Reconstructor(checkpoint)
        written: Dict[str, str] = {}
        try:
            for path in paths:
                name = os.path.splitext(os.path.basename(path))[0]
                report = dose_sweep(reconstructor, path, doses, seed=seed, gaussian_sigma=sigma, bias=bias,
                                    sample=name, db_manager=self.db_manager, run_id=run_id)
                target_dir = out_dir if len(paths) == 1 else os.path.join(out_dir, name)
                written.update({f"{name}:{k}": v for k, v in write_sweep_outputs(report, target_dir).items()})
        except Exception as exc:
            self._fail_run(run_id, exc)
            raise
        self._finish_run(run_id, steps=len(paths))
        return written

    # ------------------------------------------------------------------
    # history
    # ------------------------------------------------------------------
    def history(self, kind: Optional[str] = None, run_id: Optional[int] = None) -> List[Dict[str, Any]]:
        """Recorded runs, newest first, or the sweep scores of one run."""
        if not self.db_manager:
            raise ConfigError("no run history configured")
        if run_id is not None:
            return self.db_manager.get_sweep_results(run_id)
        return self.db_manager.get_runs(kind)

    # ------------------------------------------------------------------
    # helpers
    # ------------------------------------------------------------------
    def _sweep_samples(self, sample_path: Optional[str], dataset_root: Optional[str]) -> List[str]:
        if sample_path:
            return [sample_path]
        if dataset_root:
            samples = dataset_samples(dataset_root, split="test")
            if not samples:
                raise ConfigError(f"dataset {dataset_root} has no test-split samples to sweep")
            return [s["path"] for s in samples]
        raise ConfigError("sweep needs --sample or --dataset")

    @staticmethod
    def _ground_truth_or_none(path: str):
        try:
            return load_ground_truth(path)
        except DataError:
            return None

    @staticmethod
    def _read_target(path: str):
        if path.lower().endswith((".h5", ".hdf5")):
            return load_ground_truth(path)
        return read_image(path)

    @staticmethod
    def _pixel_size_hint(gt_path: str) -> float:
        if gt_path.lower().endswith((".h5", ".hdf5")):
            cube = load_cube(gt_path)
            upscale = int(read_attrs(gt_path).get("upscale", DEFAULT_UPSCALE))
            return cube.calib.step_size / upscale
        raise ConfigError("--pixel-size is required when the ground truth is an image file")

    def _start_run(self, kind: str, config: Dict[str, Any]) -> Optional[int]:
        if not self.db_manager:
            return None
        run_id = self.db_manager.add_run(kind, config=config)
        self.error_handler.log_debug(f"Run {run_id} ({kind}) started", module="orchestrator", extra={"run_id": run_id})
        return run_id

    def _finish_run(self, run_id: Optional[int], **updates: Any) -> None:
        if run_id is not None:
            self.db_manager.update_run(run_id, status="completed", **updates)

    def _fail_run(self, run_id: Optional[int], exc: Exception) -> None:
        if run_id is not None:
            self.db_manager.update_run(run_id, status="failed", message=str(exc))
