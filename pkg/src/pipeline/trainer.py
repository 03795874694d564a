"""
Training loop: clean containers are corrupted on the fly, the loss branch follows
the scan step size and checkpoints are written every few epochs.
"""

import os
import math
import time
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

import torch
from torch.utils.data import DataLoader

from src.core.config import TrainingConfig
from src.core.constants import METRICS_LOG_NAME
from src.core.database import DatabaseManager
from src.core.error_handler import ConfigError, NumericalError
from src.core.utils import FileUtils, TimeUtils, derive_seed
from src.imaging.datacube import ScanCalibration
from src.imaging.multiview import view_count
from src.model.checkpoint import save_checkpoint
from src.model.losses import composite_loss, uses_perceptual, vgg19_extractor
from src.model.network import init_model, parameter_count
from src.pipeline.dataset import CorruptedViewDataset, dataset_samples

logger = logging.getLogger(__name__)

CHECKPOINT_DIR_NAME = "checkpoint"


@dataclass
class TrainingResult:
    checkpoint_dir: str
    metrics_log: str
    steps: int
    final_loss: float
    run_id: Optional[int] = None


class Trainer:
    """Optimizes the network on clean containers corrupted on the fly."""

    def __init__(self, cfg: TrainingConfig, db_manager: Optional[DatabaseManager] = None) -> None:
        self.cfg = cfg
        self.db_manager = db_manager
        self.samples = dataset_samples(cfg.dataset_root, split="train")
        if not self.samples:
            raise ConfigError(f"dataset {cfg.dataset_root} has no train-split samples")
        self.dataset = CorruptedViewDataset([s["path"] for s in self.samples], cfg.views, cfg.corruption)

        first = self.dataset.clean(0)
        self.calib: ScanCalibration = first.cube.calib
        self._check_uniform_geometry()
        upscale = first.ground_truth.shape[0] // first.cube.scan_shape[0]
        if upscale != cfg.model.upscale:
            raise ConfigError(f"model.upscale = {cfg.model.upscale} but the dataset ground truth is {upscale}x the scan")

        self.model_cfg = cfg.model.with_views(view_count(self.calib, cfg.views))
        self.loss_cfg = cfg.loss
        if uses_perceptual(self.calib.step_size, cfg.loss):
            if not cfg.perceptual_weights:
                raise ConfigError(
                    f"step size {self.calib.step_size} Å selects the perceptual loss; set perceptual_weights "
                    f"to a VGG19 state dict"
                )
            self.loss_cfg = cfg.loss.with_extractor(vgg19_extractor(cfg.perceptual_weights).to(cfg.device))

        self.device = torch.device(cfg.device)
        self.model = init_model(self.model_cfg, seed=derive_seed(cfg.seed, "init")).to(self.device)
        opt = cfg.optimizer
        self.optimizer = torch.optim.Adam(self.model.parameters(), lr=opt.lr, betas=tuple(opt.betas),
                                          weight_decay=opt.weight_decay)
        self.checkpoint_dir = os.path.join(cfg.output_dir, CHECKPOINT_DIR_NAME)
        self.metrics_log = os.path.join(cfg.output_dir, METRICS_LOG_NAME)
        self.step = 0

    # ------------------------------------------------------------------
    # helpers
    # ------------------------------------------------------------------
    def _geometry(self, index: int) -> Dict[str, Any]:
        sample = self.dataset.clean(index)
        calib = sample.cube.calib
        return {
            "step_size": calib.step_size,
            "detector_shape": calib.detector_shape,
            "scan_shape": tuple(sample.cube.scan_shape),
            "ground_truth_shape": tuple(sample.ground_truth.shape),
            "views": view_count(calib, self.cfg.views),
        }

    def _check_uniform_geometry(self) -> None:
        """Every train sample must share the geometry that fixes V, the loss branch and the checkpoint."""
        reference = self._geometry(0)
        for index in range(1, len(self.dataset)):
            geometry = self._geometry(index)
            differing = [key for key in reference if geometry[key] != reference[key]]
            if differing:
                key = differing[0]
                raise ConfigError(
                    f"train samples must share one acquisition geometry: {self.samples[index]['path']} has "
                    f"{key} = {geometry[key]} but {self.samples[0]['path']} has {reference[key]}"
                )

    def _loader(self, epoch: int) -> DataLoader:
        self.dataset.set_epoch(epoch)
        generator = torch.Generator()
        generator.manual_seed(derive_seed(self.cfg.seed, "shuffle", epoch))
        return DataLoader(self.dataset, batch_size=self.cfg.batch_size, shuffle=True,
                          num_workers=self.cfg.num_workers, generator=generator)

    def _save(self, epoch: int) -> None:
        save_checkpoint(self.checkpoint_dir, self.model, self.cfg.views, calibration=self.calib,
                        provenance={"epoch": epoch, "step": self.step, "seed": self.cfg.seed,
                                    "dataset_root": self.cfg.dataset_root, "saved_at": TimeUtils.utc_now_iso()})

    def train_step(self, batch: Dict[str, Any], epoch: int) -> Dict[str, Any]:
        views = batch["views"].to(self.device)
        target = batch["target"].to(self.device)
        self.model.train()
        self.optimizer.zero_grad(set_to_none=True)
        breakdown = composite_loss(self.model(views), target, self.calib.step_size, self.loss_cfg)
        if not torch.isfinite(breakdown.total):
            raise NumericalError(
                f"non-finite loss at epoch {epoch}, step {self.step + 1}; last good checkpoint kept at "
                f"{self.checkpoint_dir}"
            )
        breakdown.total.backward()
        self.optimizer.step()
        self.step += 1
        record = breakdown.to_record(self.step)
        record["epoch"] = epoch
        record["samples"] = [int(i) for i in batch["index"]]
        record["doses"] = [float(d) for d in batch["dose"]]
        return record

    # ------------------------------------------------------------------
    # main loop
    # ------------------------------------------------------------------
    def run(self) -> TrainingResult:
        cfg = self.cfg
        FileUtils.ensure_directory(cfg.output_dir)
        if os.path.exists(self.metrics_log):
            os.remove(self.metrics_log)
        run_id = self.db_manager.add_run("train", config=cfg.to_dict()) if self.db_manager else None

        logger.info("Training %d-parameter model on %d samples, V = %d, %d epochs",
                    parameter_count(self.model), len(self.dataset), self.model_cfg.in_views, cfg.epochs)
        started = time.monotonic()
        final_loss = math.nan
        try:
            for epoch in range(cfg.epochs):
                epoch_losses: List[float] = []
                for batch in self._loader(epoch):
                    record = self.train_step(batch, epoch)
                    FileUtils.append_json_line(self.metrics_log, record)
                    epoch_losses.append(record["total"])
                final_loss = epoch_losses[-1]
                logger.info("Epoch %d/%d: mean loss %.5f", epoch + 1, cfg.epochs,
                            sum(epoch_losses) / len(epoch_losses))
                if (epoch + 1) % cfg.checkpoint_every == 0 or epoch + 1 == cfg.epochs:
                    self._save(epoch)
        except Exception as exc:
            if run_id is not None:
                self.db_manager.update_run(run_id, status="failed", message=str(exc), steps=self.step)
            raise

        if run_id is not None:
            self.db_manager.update_run(run_id, status="completed", steps=self.step, final_loss=final_loss)
        logger.info("Training finished: %d steps in %s", self.step,
                    TimeUtils.humanize_duration(time.monotonic() - started))
        return TrainingResult(checkpoint_dir=self.checkpoint_dir, metrics_log=self.metrics_log,
                              steps=self.step, final_loss=final_loss, run_id=run_id)


def train(cfg: TrainingConfig, db_manager: Optional[DatabaseManager] = None) -> TrainingResult:
    return Trainer(cfg, db_manager).run()
