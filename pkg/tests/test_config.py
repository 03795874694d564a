import json
import math
import os

import pytest

from src.core.config import (
    CorruptionConfig,
    DatasetManifest,
    LossConfig,
    ModelConfig,
    OptimizerConfig,
    PhantomRecipe,
    TrainingConfig,
    ViewSettings,
    apply_seed_override,
    seed_override,
)
from src.core.constants import DEFAULT_MSSSIM_WEIGHTS, SEED_ENV_VAR
from src.core.error_handler import ConfigError

SMOKE_MANIFEST = os.path.join(os.path.dirname(__file__), os.pardir, "configs", "smoke_manifest.json")
SMOKE_TRAINING = os.path.join(os.path.dirname(__file__), os.pardir, "configs", "train_smoke.json")


def _manifest_dict(**overrides):
    data = {
        "calibration": {"step_size": 4.0, "energy": 300.0, "convergence": 5.0, "defocus": 0.0,
                        "detector_pixel": 1.0, "detector_shape": [16, 16]},
        "scan_shape": [8, 8],
        "recipes": [{"kind": "crystal", "seed": 1}, {"kind": "SINUSOID", "seed": 2, "split": "test"}],
    }
    data.update(overrides)
    return data


# ----------------------------------------------------------------------
# sections
# ----------------------------------------------------------------------
def test_model_config_defaults_and_validation():
    cfg = ModelConfig()
    assert cfg.encoder_channels == (64, 128, 256, 512, 1024)
    assert cfg.spatial_divisor == 16
    assert cfg.in_views is None
    with pytest.raises(ConfigError):
        ModelConfig(encoder_channels=(8, 8))
    with pytest.raises(ConfigError):
        ModelConfig(upscale=0)
    with pytest.raises(ConfigError, match="unknown key"):
        ModelConfig.from_dict({"depth": 4})


def test_model_view_resolution():
    assert ModelConfig().with_views(21).in_views == 21
    assert ModelConfig(in_views=21).with_views(21).in_views == 21
    with pytest.raises(ConfigError, match="views.bin"):
        ModelConfig(in_views=16).with_views(21)


def test_loss_config_validation():
    assert LossConfig().scales == 5
    assert LossConfig().msssim_weights == DEFAULT_MSSSIM_WEIGHTS
    assert LossConfig(msssim_weights=(0.3334, 0.3333, 0.3334)).scales == 3
    with pytest.raises(ConfigError, match="sum to 1"):
        LossConfig(msssim_weights=(0.5, 0.4))
    with pytest.raises(ConfigError, match="non-negative"):
        LossConfig(msssim_weights=(1.5, -0.5))
    with pytest.raises(ConfigError):
        LossConfig(window_size=10)
    with pytest.raises(ConfigError):
        LossConfig.from_dict({"perceptual_extractor": "vgg"})
    assert LossConfig().with_extractor(abs) == LossConfig()


def test_corruption_config_ranges():
    cfg = CorruptionConfig.from_dict({"dose_min": "inf", "dose_max": "Infinity"})
    assert math.isinf(cfg.dose_min) and math.isinf(cfg.dose_max)
    with pytest.raises(ConfigError):
        CorruptionConfig(dose_min=100.0, dose_max=math.inf)
    with pytest.raises(ConfigError):
        CorruptionConfig(dose_min=500.0, dose_max=100.0)
    with pytest.raises(ConfigError):
        CorruptionConfig(sigma_min=0.6, sigma_max=0.5)


def test_view_and_optimizer_settings():
    assert ViewSettings.from_dict({"bin": 1}).to_dict() == {"radius_fraction": 0.9, "bin": 1, "normalize": True}
    with pytest.raises(ConfigError):
        ViewSettings(radius_fraction=0.0)
    assert OptimizerConfig.from_dict({"lr": 1e-3}).betas == (0.9, 0.999)
    with pytest.raises(ConfigError):
        OptimizerConfig(name="sgd")


# ----------------------------------------------------------------------
# manifest
# ----------------------------------------------------------------------
def test_manifest_from_dict():
    manifest = DatasetManifest.from_dict(_manifest_dict(variants=2))
    assert manifest.sample_count == 4
    assert manifest.recipes[0].kind == "CRYSTAL"
    assert manifest.recipes[1].split == "test"
    assert DatasetManifest.from_dict(manifest.to_dict()) == manifest


def test_manifest_rejects_bad_recipes():
    with pytest.raises(ConfigError, match="recipe #0"):
        DatasetManifest.from_dict(_manifest_dict(recipes=[{"kind": "HELIX", "seed": 1}]))
    with pytest.raises(ConfigError, match="'kind' and 'seed'"):
        PhantomRecipe.from_dict({"kind": "BLOB"})
    with pytest.raises(ConfigError):
        DatasetManifest.from_dict(_manifest_dict(recipes=[]))
    with pytest.raises(ConfigError, match="unknown key"):
        DatasetManifest.from_dict(_manifest_dict(detector=3))


def test_recipe_calibration_override():
    manifest = DatasetManifest.from_dict(_manifest_dict(
        recipes=[{"kind": "CRYSTAL", "seed": 1, "calibration": {"defocus": 500.0}}]))
    calib = manifest.calibration_for(manifest.recipes[0])
    assert calib.defocus == 500.0
    assert calib.step_size == 4.0


def test_shipped_configs_parse():
    manifest = DatasetManifest.load(SMOKE_MANIFEST)
    assert manifest.scan_shape == (64, 64)
    assert {recipe.split for recipe in manifest.recipes} == {"train", "test"}
    cfg = TrainingConfig.load(SMOKE_TRAINING)
    assert os.path.isabs(cfg.dataset_root)
    assert cfg.manifest == os.path.normpath(os.path.abspath(SMOKE_MANIFEST))


# ----------------------------------------------------------------------
# training config
# ----------------------------------------------------------------------
def test_training_config_resolves_relative_paths(tmp_path):
    path = tmp_path / "train.json"
    path.write_text(json.dumps({"dataset_root": "data", "output_dir": "/abs/out", "epochs": 3}))
    cfg = TrainingConfig.load(str(path))
    assert cfg.dataset_root == str(tmp_path / "data")
    assert cfg.output_dir == "/abs/out"
    assert cfg.epochs == 3
    assert TrainingConfig.from_dict(cfg.to_dict()) == cfg


def test_training_config_requires_paths():
    with pytest.raises(ConfigError, match="dataset_root"):
        TrainingConfig.from_dict({"output_dir": "out"})
    with pytest.raises(ConfigError):
        TrainingConfig.from_dict({"dataset_root": "d", "output_dir": "o", "batch_size": 0})


def test_malformed_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError, match="malformed JSON"):
        TrainingConfig.load(str(path))
    with pytest.raises(ConfigError, match="file not found"):
        TrainingConfig.load(str(tmp_path / "missing.json"))


def test_seed_override(monkeypatch):
    cfg = TrainingConfig(dataset_root="d", output_dir="o", seed=1)
    monkeypatch.delenv(SEED_ENV_VAR, raising=False)
    assert seed_override() is None
    assert apply_seed_override(cfg) is cfg

    monkeypatch.setenv(SEED_ENV_VAR, "42")
    overridden = apply_seed_override(cfg)
    assert overridden.seed == 42 and overridden.corruption.seed == 42

    monkeypatch.setenv(SEED_ENV_VAR, "forty-two")
    with pytest.raises(ConfigError):
        seed_override()
