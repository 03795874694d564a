import csv
import json
import math
import os

import pytest

from src.cli.app import RUNS_DB_NAME, build_parser, main
from src.core.constants import EXIT_CONFIG_ERROR, EXIT_OK, EXIT_UNEXPECTED, SEED_ENV_VAR
from src.core.database import DatabaseManager
from src.core.orchestrator import PipelineOrchestrator
from src.core.utils import FileUtils
from src.imaging.container import load_cube, load_views, read_attrs
from src.pipeline.reporting import SWEEP_CSV_NAME, read_image

MANIFEST = {
    "calibration": {"step_size": 4.0, "energy": 300.0, "convergence": 5.0, "defocus": 0.0,
                    "detector_pixel": 1.0, "detector_shape": [16, 16]},
    "scan_shape": [8, 8],
    "recipes": [
        {"kind": "CRYSTAL", "seed": 1},
        {"kind": "CRYSTAL", "seed": 2, "params": {"a": 6.0, "rotation": 20.0}},
        {"kind": "AMORPHOUS", "seed": 3, "split": "test", "params": {"density": 0.01}},
    ],
}


@pytest.fixture(autouse=True)
def _no_seed_override(monkeypatch):
    monkeypatch.delenv(SEED_ENV_VAR, raising=False)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "manifest.json").write_text(json.dumps(MANIFEST), encoding="utf-8")
    (root / "train.json").write_text(json.dumps({
        "dataset_root": "data",
        "output_dir": "run",
        "model": {"encoder_channels": [4, 8]},
        "loss": {"msssim_weights": [1.0]},
        "corruption": {"dose_min": 100, "dose_max": 1000, "sigma_max": 0.0},
        "views": {"bin": 3},
        "epochs": 1,
        "batch_size": 2,
    }), encoding="utf-8")
    return root


def run_cli(workspace, *args):
    return main(["--log-dir", str(workspace / "logs"), *args])


def test_parser_reads_dose_lists():
    args = build_parser().parse_args(["sweep", "--ckpt", "c", "--sample", "s.h5", "--doses", "100, 250,inf"])
    assert args.doses == [100.0, 250.0, math.inf]
    assert args.out == "sweep"


def test_parser_rejects_bad_arguments(capsys):
    with pytest.raises(SystemExit) as exc:
        build_parser().parse_args(["corrupt", "--in", "a.h5", "--dose", "lots"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit):
        build_parser().parse_args(["sweep", "--ckpt", "c", "--sample", "s.h5", "--dataset", "d"])
    with pytest.raises(SystemExit):
        build_parser().parse_args(["baseline", "--method", "ptycho", "--in", "a.h5", "--out", "b.tiff"])


def test_missing_config_exits_with_config_error(tmp_path, capsys):
    code = main(["--log-dir", str(tmp_path / "logs"), "train", "--config", str(tmp_path / "absent.json")])
    assert code == EXIT_CONFIG_ERROR
    assert "file not found" in capsys.readouterr().err
    assert "train failed" in (tmp_path / "logs" / "misr4d_errors.log").read_text(encoding="utf-8")


def test_full_workflow(workspace, capsys):
    data = workspace / "data"
    assert run_cli(workspace, "simulate", "--manifest", str(workspace / "manifest.json"), "--out", str(data)) == EXIT_OK
    assert "3 samples written" in capsys.readouterr().out
    sample = str(data / "sample_0000.h5")
    test_sample = str(data / "sample_0002.h5")

    noisy = str(workspace / "noisy.h5")
    assert run_cli(workspace, "corrupt", "--in", sample, "--dose", "200", "--seed", "4", "--out", noisy) == EXIT_OK
    assert not load_cube(noisy).signed
    assert read_attrs(noisy)["source_sha256"] == FileUtils.get_file_hash(sample)

    assert run_cli(workspace, "views", "--in", noisy, "--bin", "3") == EXIT_OK
    views, angles = load_views(noisy)
    assert views.shape == (5, 8, 8)
    assert angles.shape == (5, 2)

    bf = str(workspace / "bf.tiff")
    assert run_cli(workspace, "baseline", "--method", "bf", "--in", noisy, "--out", bf) == EXIT_OK
    assert read_image(bf).shape == (24, 24)
    assert json.loads((workspace / "bf.json").read_text(encoding="utf-8"))["method"] == "bf"

    par = str(workspace / "par.tiff")
    assert run_cli(workspace, "baseline", "--method", "parallax", "--in", noisy, "--out", par, "--bin", "3") == EXIT_OK
    sidecar = json.loads((workspace / "par.json").read_text(encoding="utf-8"))
    assert (sidecar["method"], sidecar["upscale"], sidecar["bin"]) == ("parallax", 3, 3)
    assert len(sidecar["shift_table"]) == 5
    assert {"view", "theta_x_mrad", "shift_x_px", "confidence", "included"} <= set(sidecar["shift_table"][0])
    assert "shift_model" in sidecar

    report = workspace / "bf_report.json"
    assert run_cli(workspace, "evaluate", "--pred", bf, "--gt", sample, "--report", str(report)) == EXIT_OK
    scores = json.loads(report.read_text(encoding="utf-8"))
    assert scores["pixel_size"] == pytest.approx(4.0 / 3)
    assert {"psnr", "ssim", "cnr", "cutoff", "profiles"} <= set(scores)
    assert (workspace / "bf_report_profiles.csv").exists()
    assert (workspace / "bf_report_radial_power.csv").exists()

    assert run_cli(workspace, "train", "--config", str(workspace / "train.json")) == EXIT_OK
    assert "1 steps" in capsys.readouterr().out
    checkpoint = str(workspace / "run" / "checkpoint")

    recon = str(workspace / "recon.tiff")
    assert run_cli(workspace, "infer", "--ckpt", checkpoint, "--in", noisy, "--out", recon) == EXIT_OK
    assert read_image(recon).shape == (24, 24)

    out = workspace / "sweep"
    assert run_cli(workspace, "sweep", "--ckpt", checkpoint, "--sample", test_sample,
                   "--doses", "100,inf", "--out", str(out)) == EXIT_OK
    with open(out / SWEEP_CSV_NAME, newline="", encoding="utf-8") as handle:
        rows = list(csv.DictReader(handle))
    assert len(rows) == 8
    assert {row["dose"] for row in rows} == {"100.0", "inf"}

    runs = DatabaseManager(str(workspace / "logs" / RUNS_DB_NAME)).get_runs()
    assert {run["kind"] for run in runs} == {"simulate", "train", "sweep"}
    assert all(run["status"] == "completed" for run in runs)
    assert len(DatabaseManager(str(workspace / "logs" / RUNS_DB_NAME)).get_sweep_results(
        next(run["id"] for run in runs if run["kind"] == "sweep"))) == 8

    capsys.readouterr()
    assert run_cli(workspace, "runs") == EXIT_OK
    listing = capsys.readouterr().out
    assert all(kind in listing for kind in ("simulate", "train", "sweep"))
    sweep_id = next(run["id"] for run in runs if run["kind"] == "sweep")
    assert run_cli(workspace, "runs", "--run", str(sweep_id)) == EXIT_OK
    scores = [line for line in capsys.readouterr().out.splitlines() if "PSNR" in line]
    assert len(scores) == 8
    assert any("dose inf" in line for line in scores)


def test_sweep_over_dataset_test_split(workspace):
    checkpoint = workspace / "run" / "checkpoint"
    if not checkpoint.exists():
        pytest.skip("needs the checkpoint trained by test_full_workflow")
    out = workspace / "dataset_sweep"
    code = run_cli(workspace, "sweep", "--ckpt", str(checkpoint), "--dataset", str(workspace / "data"),
                   "--doses", "300", "--out", str(out))
    assert code == EXIT_OK
    assert os.path.exists(out / SWEEP_CSV_NAME)


def test_unexpected_failure_is_logged_with_traceback(tmp_path, monkeypatch, capsys):
    def broken(*args, **kwargs):
        raise RuntimeError("disk on fire")

    monkeypatch.setattr(PipelineOrchestrator, "views", broken)
    code = main(["--log-dir", str(tmp_path / "logs"), "views", "--in", str(tmp_path / "x.h5")])
    assert code == EXIT_UNEXPECTED
    assert "disk on fire" in capsys.readouterr().err
    errors = (tmp_path / "logs" / "misr4d_errors.log").read_text(encoding="utf-8")
    assert "Unhandled exception: RuntimeError" in errors and "Traceback" in errors


def test_infer_with_incompatible_checkpoint(workspace, tmp_path, capsys):
    code = run_cli(workspace, "infer", "--ckpt", str(tmp_path), "--in", str(tmp_path / "x.h5"),
                   "--out", str(tmp_path / "y.tiff"))
    assert code == EXIT_CONFIG_ERROR
    assert "not a checkpoint directory" in capsys.readouterr().err
