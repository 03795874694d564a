"""
Dataset manifests and training configuration.

Every section is a frozen dataclass validated on construction; JSON documents
with unknown keys are rejected.
"""

import os
import math
import logging
from dataclasses import dataclass, field, fields, replace
from typing import Any, Callable, Dict, List, Optional, Tuple

from src.core.constants import (
    DEFAULT_BETAS,
    DEFAULT_BIAS_MAX,
    DEFAULT_DETECTOR_OVERSAMPLE,
    DEFAULT_DOSE_MAX,
    DEFAULT_DOSE_MIN,
    DEFAULT_ENCODER_CHANNELS,
    DEFAULT_F_INT_RATIO,
    DEFAULT_LEARNING_RATE,
    DEFAULT_MSSSIM_WEIGHTS,
    MSSSIM_WEIGHT_TOLERANCE,
    DEFAULT_PERCEPTUAL_LAMBDA,
    DEFAULT_PRELU_INIT,
    DEFAULT_RADIUS_FRACTION,
    DEFAULT_SIGMA_MAX,
    DEFAULT_STEP_THRESHOLD_A,
    DEFAULT_UPSCALE,
    DEFAULT_VIEW_BIN,
    SEED_ENV_VAR,
    SSIM_K1,
    SSIM_K2,
    SSIM_WINDOW_SIGMA,
    SSIM_WINDOW_SIZE,
)
from src.core.error_handler import ConfigError
from src.core.utils import FileUtils, parse_dose
from src.imaging.datacube import ScanCalibration

logger = logging.getLogger(__name__)

PHANTOM_KINDS = ("CRYSTAL", "AMORPHOUS", "BLOB", "SINUSOID", "POINT_ARRAY")
SPLITS = ("train", "test")


def _check_keys(data: Dict[str, Any], allowed, where: str) -> None:
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")


def _field_names(cls) -> List[str]:
    return [f.name for f in fields(cls)]


def load_json(path: str) -> Dict[str, Any]:
    """Read a JSON configuration document."""
    return FileUtils.read_json_file(path)


def seed_override() -> Optional[int]:
    """Seed from the MISR4D_SEED environment variable, if set."""
    value = os.environ.get(SEED_ENV_VAR)
    if value is None or value.strip() == "":
        return None
    try:
        return int(value)
    except ValueError as exc:
        raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {value!r}") from exc


# ----------------------------------------------------------------------
# multi-view extraction
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class ViewSettings:
    radius_fraction: float = DEFAULT_RADIUS_FRACTION
    bin: int = DEFAULT_VIEW_BIN
    normalize: bool = True

    def __post_init__(self):
        if not 0 < self.radius_fraction <= 1:
            raise ConfigError(f"views.radius_fraction must be in (0, 1], got {self.radius_fraction}")
        if int(self.bin) != self.bin or self.bin < 1:
            raise ConfigError(f"views.bin must be a positive integer, got {self.bin}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ViewSettings":
        _check_keys(data, _field_names(cls), "views")
        return cls(
            radius_fraction=float(data.get("radius_fraction", DEFAULT_RADIUS_FRACTION)),
            bin=int(data.get("bin", DEFAULT_VIEW_BIN)),
            normalize=bool(data.get("normalize", True)),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {"radius_fraction": self.radius_fraction, "bin": self.bin, "normalize": self.normalize}


# ----------------------------------------------------------------------
# network
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters of the attention U-Net with the sub-pixel head.

    in_views may be left unset in JSON; the trainer resolves it from the view settings.
    """

    in_views: Optional[int] = None
    encoder_channels: Tuple[int, ...] = DEFAULT_ENCODER_CHANNELS
    upscale: int = DEFAULT_UPSCALE
    f_int_ratio: float = DEFAULT_F_INT_RATIO
    prelu_init: float = DEFAULT_PRELU_INIT

    def __post_init__(self):
        object.__setattr__(self, "encoder_channels", tuple(int(c) for c in self.encoder_channels))
        channels = self.encoder_channels
        if not channels:
            raise ConfigError("model.encoder_channels must not be empty")
        if any(c < 1 for c in channels):
            raise ConfigError("model.encoder_channels must be positive")
        if any(b <= a for a, b in zip(channels, channels[1:])):
            raise ConfigError(f"model.encoder_channels must be strictly increasing, got {list(channels)}")
        if self.upscale < 1:
            raise ConfigError(f"model.upscale must be >= 1, got {self.upscale}")
        if not 0 < self.f_int_ratio <= 1:
            raise ConfigError(f"model.f_int_ratio must be in (0, 1], got {self.f_int_ratio}")
        if self.in_views is not None and self.in_views < 1:
            raise ConfigError(f"model.in_views must be >= 1, got {self.in_views}")

    @property
    def spatial_divisor(self) -> int:
        return 2 ** (len(self.encoder_channels) - 1)

    def with_views(self, in_views: int) -> "ModelConfig":
        if self.in_views is not None and self.in_views != in_views:
            raise ConfigError(
                f"model.in_views = {self.in_views} but the view settings yield {in_views} views; "
                "adjust views.bin / views.radius_fraction or drop model.in_views"
            )
        return replace(self, in_views=in_views)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelConfig":
        _check_keys(data, _field_names(cls), "model")
        in_views = data.get("in_views")
        return cls(
            in_views=int(in_views) if in_views is not None else None,
            encoder_channels=tuple(data.get("encoder_channels", DEFAULT_ENCODER_CHANNELS)),
            upscale=int(data.get("upscale", DEFAULT_UPSCALE)),
            f_int_ratio=float(data.get("f_int_ratio", DEFAULT_F_INT_RATIO)),
            prelu_init=float(data.get("prelu_init", DEFAULT_PRELU_INIT)),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "in_views": self.in_views,
            "encoder_channels": list(self.encoder_channels),
            "upscale": self.upscale,
            "f_int_ratio": self.f_int_ratio,
            "prelu_init": self.prelu_init,
        }


# ----------------------------------------------------------------------
# losses
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class LossConfig:
    perceptual_lambda: float = DEFAULT_PERCEPTUAL_LAMBDA
    step_threshold: float = DEFAULT_STEP_THRESHOLD_A
    msssim_weights: Tuple[float, ...] = DEFAULT_MSSSIM_WEIGHTS
    window_size: int = SSIM_WINDOW_SIZE
    window_sigma: float = SSIM_WINDOW_SIGMA
    k1: float = SSIM_K1
    k2: float = SSIM_K2
    # maps a (N, 3, H, W) tensor to a feature tensor; never serialized
    perceptual_extractor: Optional[Callable] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "msssim_weights", tuple(float(w) for w in self.msssim_weights))
        if self.perceptual_lambda < 0:
            raise ConfigError(f"loss.perceptual_lambda must be >= 0, got {self.perceptual_lambda}")
        if self.step_threshold <= 0:
            raise ConfigError(f"loss.step_threshold must be > 0, got {self.step_threshold}")
        if not self.msssim_weights:
            raise ConfigError("loss.msssim_weights must not be empty")
        total = sum(self.msssim_weights)
        if any(w < 0 for w in self.msssim_weights) or abs(total - 1.0) > MSSSIM_WEIGHT_TOLERANCE:
            raise ConfigError(f"loss.msssim_weights must be non-negative and sum to 1, got {total:.8f}")
        if self.window_size < 1 or self.window_size % 2 == 0:
            raise ConfigError(f"loss.window_size must be a positive odd integer, got {self.window_size}")
        if self.window_sigma <= 0:
            raise ConfigError(f"loss.window_sigma must be > 0, got {self.window_sigma}")

    @property
    def scales(self) -> int:
        return len(self.msssim_weights)

    def with_extractor(self, extractor: Optional[Callable]) -> "LossConfig":
        return replace(self, perceptual_extractor=extractor)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LossConfig":
        allowed = [name for name in _field_names(cls) if name != "perceptual_extractor"]
        _check_keys(data, allowed, "loss")
        return cls(
            perceptual_lambda=float(data.get("perceptual_lambda", DEFAULT_PERCEPTUAL_LAMBDA)),
            step_threshold=float(data.get("step_threshold", DEFAULT_STEP_THRESHOLD_A)),
            msssim_weights=tuple(data.get("msssim_weights", DEFAULT_MSSSIM_WEIGHTS)),
            window_size=int(data.get("window_size", SSIM_WINDOW_SIZE)),
            window_sigma=float(data.get("window_sigma", SSIM_WINDOW_SIGMA)),
            k1=float(data.get("k1", SSIM_K1)),
            k2=float(data.get("k2", SSIM_K2)),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "perceptual_lambda": self.perceptual_lambda,
            "step_threshold": self.step_threshold,
            "msssim_weights": list(self.msssim_weights),
            "window_size": self.window_size,
            "window_sigma": self.window_sigma,
            "k1": self.k1,
            "k2": self.k2,
        }


# ----------------------------------------------------------------------
# corruption
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class CorruptionConfig:
    dose_min: float = DEFAULT_DOSE_MIN
    dose_max: float = DEFAULT_DOSE_MAX
    sigma_min: float = 0.0
    sigma_max: float = DEFAULT_SIGMA_MAX
    bias_min: float = 0.0
    bias_max: float = DEFAULT_BIAS_MAX
    seed: int = 1234

    def __post_init__(self):
        if not self.dose_min > 0:
            raise ConfigError(f"corruption.dose_min must be > 0, got {self.dose_min}")
        if self.dose_min > self.dose_max:
            raise ConfigError(f"corruption.dose_min ({self.dose_min}) exceeds dose_max ({self.dose_max})")
        if math.isinf(self.dose_max) and not math.isinf(self.dose_min):
            raise ConfigError("corruption dose range cannot mix a finite dose_min with an infinite dose_max")
        if self.sigma_min < 0 or self.sigma_min > self.sigma_max:
            raise ConfigError(f"corruption sigma range invalid: [{self.sigma_min}, {self.sigma_max}]")
        if self.bias_min > self.bias_max:
            raise ConfigError(f"corruption bias range invalid: [{self.bias_min}, {self.bias_max}]")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CorruptionConfig":
        _check_keys(data, _field_names(cls), "corruption")
        return cls(
            dose_min=parse_dose(data.get("dose_min", DEFAULT_DOSE_MIN)),
            dose_max=parse_dose(data.get("dose_max", DEFAULT_DOSE_MAX)),
            sigma_min=float(data.get("sigma_min", 0.0)),
            sigma_max=float(data.get("sigma_max", DEFAULT_SIGMA_MAX)),
            bias_min=float(data.get("bias_min", 0.0)),
            bias_max=float(data.get("bias_max", DEFAULT_BIAS_MAX)),
            seed=int(data.get("seed", 1234)),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "dose_min": self.dose_min,
            "dose_max": self.dose_max,
            "sigma_min": self.sigma_min,
            "sigma_max": self.sigma_max,
            "bias_min": self.bias_min,
            "bias_max": self.bias_max,
            "seed": self.seed,
        }


# ----------------------------------------------------------------------
# optimizer
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class OptimizerConfig:
    name: str = "adam"
    lr: float = DEFAULT_LEARNING_RATE
    betas: Tuple[float, float] = DEFAULT_BETAS
    weight_decay: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if self.name.lower() != "adam":
            raise ConfigError(f"optimizer.name must be 'adam', got {self.name!r}")
        if self.lr <= 0:
            raise ConfigError(f"optimizer.lr must be > 0, got {self.lr}")
        if len(self.betas) != 2 or not all(0 <= b < 1 for b in self.betas):
            raise ConfigError(f"optimizer.betas must be two values in [0, 1), got {list(self.betas)}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "OptimizerConfig":
        _check_keys(data, _field_names(cls), "optimizer")
        return cls(
            name=str(data.get("name", "adam")),
            lr=float(data.get("lr", DEFAULT_LEARNING_RATE)),
            betas=tuple(data.get("betas", DEFAULT_BETAS)),
            weight_decay=float(data.get("weight_decay", 0.0)),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "lr": self.lr, "betas": list(self.betas), "weight_decay": self.weight_decay}


# ----------------------------------------------------------------------
# dataset manifest
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class PhantomRecipe:
    kind: str
    seed: int
    params: Dict[str, Any] = field(default_factory=dict)
    split: str = "train"
    variants: int = 1
    name: Optional[str] = None
    # per-recipe overrides of the acquisition, e.g. {"defocus": 500}
    calibration: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", str(self.kind).upper())
        if self.kind not in PHANTOM_KINDS:
            raise ConfigError(f"recipe kind must be one of {', '.join(PHANTOM_KINDS)}, got {self.kind!r}")
        if self.split not in SPLITS:
            raise ConfigError(f"recipe split must be one of {', '.join(SPLITS)}, got {self.split!r}")
        if self.variants < 1:
            raise ConfigError(f"recipe variants must be >= 1, got {self.variants}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any], default_variants: int = 1) -> "PhantomRecipe":
        _check_keys(data, _field_names(cls), "recipe")
        if "kind" not in data or "seed" not in data:
            raise ConfigError(f"recipe needs 'kind' and 'seed': {data}")
        return cls(
            kind=data["kind"],
            seed=int(data["seed"]),
            params=dict(data.get("params", {})),
            split=str(data.get("split", "train")),
            variants=int(data.get("variants", default_variants)),
            name=data.get("name"),
            calibration=dict(data.get("calibration", {})),
        )

    def to_dict(self) -> Dict[str, Any]:
        data = {
            "kind": self.kind,
            "seed": self.seed,
            "params": dict(self.params),
            "split": self.split,
            "variants": self.variants,
        }
        if self.name:
            data["name"] = self.name
        if self.calibration:
            data["calibration"] = dict(self.calibration)
        return data


@dataclass(frozen=True)
class DatasetManifest:
    calibration: ScanCalibration
    scan_shape: Tuple[int, int]
    recipes: Tuple[PhantomRecipe, ...]
    upscale: int = DEFAULT_UPSCALE
    detector_oversample: int = DEFAULT_DETECTOR_OVERSAMPLE

    def __post_init__(self):
        object.__setattr__(self, "scan_shape", tuple(int(v) for v in self.scan_shape))
        object.__setattr__(self, "recipes", tuple(self.recipes))
        if len(self.scan_shape) != 2 or min(self.scan_shape) < 1:
            raise ConfigError(f"manifest scan_shape must be two positive integers, got {list(self.scan_shape)}")
        if not self.recipes:
            raise ConfigError("manifest has no recipes")
        if self.upscale < 1:
            raise ConfigError(f"manifest upscale must be >= 1, got {self.upscale}")
        if self.detector_oversample < 1 or self.detector_oversample % 2 == 0:
            raise ConfigError(f"manifest detector_oversample must be a positive odd integer, got {self.detector_oversample}")

    @property
    def sample_count(self) -> int:
        return sum(recipe.variants for recipe in self.recipes)

    def calibration_for(self, recipe: PhantomRecipe) -> ScanCalibration:
        if not recipe.calibration:
            return self.calibration
        merged = self.calibration.to_dict()
        merged.update(recipe.calibration)
        try:
            return ScanCalibration.from_dict(merged)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"recipe {recipe.name or recipe.seed}: invalid calibration override: {exc}") from exc

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DatasetManifest":
        _check_keys(data, ["calibration", "scan_shape", "recipes", "upscale", "detector_oversample", "variants"],
                    "manifest")
        if "calibration" not in data or "recipes" not in data:
            raise ConfigError("manifest needs 'calibration' and 'recipes'")
        try:
            calibration = ScanCalibration.from_dict(data["calibration"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"manifest calibration invalid: {exc}") from exc
        default_variants = int(data.get("variants", 1))
        recipes = []
        for position, entry in enumerate(data["recipes"]):
            try:
                recipes.append(PhantomRecipe.from_dict(entry, default_variants))
            except ConfigError as exc:
                raise ConfigError(f"manifest recipe #{position}: {exc}") from exc
        return cls(
            calibration=calibration,
            scan_shape=tuple(data.get("scan_shape", (64, 64))),
            recipes=tuple(recipes),
            upscale=int(data.get("upscale", DEFAULT_UPSCALE)),
            detector_oversample=int(data.get("detector_oversample", DEFAULT_DETECTOR_OVERSAMPLE)),
        )

    @classmethod
    def load(cls, path: str) -> "DatasetManifest":
        return cls.from_dict(load_json(path))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "calibration": self.calibration.to_dict(),
            "scan_shape": list(self.scan_shape),
            "upscale": self.upscale,
            "detector_oversample": self.detector_oversample,
            "recipes": [recipe.to_dict() for recipe in self.recipes],
        }


# ----------------------------------------------------------------------
# training
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class TrainingConfig:
    dataset_root: str
    output_dir: str
    manifest: Optional[str] = None
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    corruption: CorruptionConfig = field(default_factory=CorruptionConfig)
    views: ViewSettings = field(default_factory=ViewSettings)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    epochs: int = 1
    batch_size: int = 1
    seed: int = 0
    num_workers: int = 0
    checkpoint_every: int = 1
    log_dir: Optional[str] = None
    perceptual_weights: Optional[str] = None
    device: str = "cpu"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.num_workers < 0:
            raise ConfigError(f"num_workers must be >= 0, got {self.num_workers}")
        if self.checkpoint_every < 1:
            raise ConfigError(f"checkpoint_every must be >= 1, got {self.checkpoint_every}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any], base_dir: Optional[str] = None) -> "TrainingConfig":
        """
        Build a training configuration from its JSON form.

        Args:
            data (Dict[str, Any]): Parsed JSON document
            base_dir (Optional[str]): Directory relative paths are resolved against

        Returns:
            TrainingConfig: Validated configuration
        """
        _check_keys(data, _field_names(cls), "training config")
        for key in ("dataset_root", "output_dir"):
            if key not in data:
                raise ConfigError(f"training config needs {key!r}")

        def _path(value: Optional[str]) -> Optional[str]:
            if value is None or base_dir is None or os.path.isabs(value):
                return value
            return os.path.normpath(os.path.join(base_dir, value))

        return cls(
            dataset_root=_path(data["dataset_root"]),
            output_dir=_path(data["output_dir"]),
            manifest=_path(data.get("manifest")),
            model=ModelConfig.from_dict(data.get("model", {})),
            loss=LossConfig.from_dict(data.get("loss", {})),
            corruption=CorruptionConfig.from_dict(data.get("corruption", {})),
            views=ViewSettings.from_dict(data.get("views", {})),
            optimizer=OptimizerConfig.from_dict(data.get("optimizer", {})),
            epochs=int(data.get("epochs", 1)),
            batch_size=int(data.get("batch_size", 1)),
            seed=int(data.get("seed", 0)),
            num_workers=int(data.get("num_workers", 0)),
            checkpoint_every=int(data.get("checkpoint_every", 1)),
            log_dir=_path(data.get("log_dir")),
            perceptual_weights=_path(data.get("perceptual_weights")),
            device=str(data.get("device", "cpu")),
        )

    @classmethod
    def load(cls, path: str) -> "TrainingConfig":
        return cls.from_dict(load_json(path), base_dir=os.path.dirname(os.path.abspath(path)))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "dataset_root": self.dataset_root,
            "output_dir": self.output_dir,
            "manifest": self.manifest,
            "model": self.model.to_dict(),
            "loss": self.loss.to_dict(),
            "corruption": self.corruption.to_dict(),
            "views": self.views.to_dict(),
            "optimizer": self.optimizer.to_dict(),
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "num_workers": self.num_workers,
            "checkpoint_every": self.checkpoint_every,
            "log_dir": self.log_dir,
            "perceptual_weights": self.perceptual_weights,
            "device": self.device,
        }


def apply_seed_override(cfg: TrainingConfig) -> TrainingConfig:
    """Replace the training and corruption seeds when MISR4D_SEED is set."""
    seed = seed_override()
    if seed is None:
        return cfg
    logger.info("%s=%d overrides training seed %d and corruption seed %d",
                SEED_ENV_VAR, seed, cfg.seed, cfg.corruption.seed)
    return replace(cfg, seed=seed, corruption=replace(cfg.corruption, seed=seed))
