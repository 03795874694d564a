"""Command-line front end: `misr4d <command> ...`."""

import os
import sys
import logging
import argparse
from typing import List, Optional

from src.core.constants import (
    APP_NAME,
    APP_VERSION,
    DEFAULT_LOG_DIR,
    DEFAULT_LOG_LEVEL,
    DEFAULT_RADIUS_FRACTION,
    DEFAULT_SWEEP_DOSES,
    DEFAULT_UPSCALE,
    DEFAULT_VIEW_BIN,
    EXIT_OK,
    SEED_ENV_VAR,
)
from src.core.config import seed_override
from src.core.database import DatabaseManager
from src.core.error_handler import ConfigError, ErrorHandler, Misr4dError
from src.core.orchestrator import PipelineOrchestrator
from src.core.utils import parse_dose
from src.pipeline.sweep import BASELINE_METHODS

logger = logging.getLogger(__name__)

RUNS_DB_NAME = "runs.db"
RUN_KINDS = ("simulate", "train", "sweep")
LOG_LEVELS = {
    "debug": logging.DEBUG,
    "info": logging.INFO,
    "warning": logging.WARNING,
    "error": logging.ERROR,
}


def _dose_list(text: str) -> List[float]:
    try:
        return [parse_dose(part) for part in text.split(",") if part.strip()]
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _dose(text: str) -> float:
    try:
        return parse_dose(text)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=APP_NAME,
        description="Low-dose 4D-STEM multi-view super-resolution toolkit.",
        epilog=f"{SEED_ENV_VAR} overrides every run seed.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {APP_VERSION}")
    parser.add_argument("--log-dir", default=DEFAULT_LOG_DIR, help="directory for log files and the run history")
    parser.add_argument("--log-level", default=DEFAULT_LOG_LEVEL, choices=sorted(LOG_LEVELS))
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="build a clean dataset from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="dataset directory")
    p.add_argument("--workers", type=int, default=None, help="FFT threads")

    p = sub.add_parser("corrupt", help="apply a finite dose and read-out noise to a clean cube")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--dose", type=_dose, required=True, help="e-/A^2, or inf")
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--bias", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)

    p = sub.add_parser("views", help="extract virtual bright-field views into the container")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--bin", type=int, default=DEFAULT_VIEW_BIN)
    p.add_argument("--radius-fraction", type=float, default=DEFAULT_RADIUS_FRACTION)
    p.add_argument("--raw", action="store_true", help="skip per-view mean normalization")
    p.add_argument("--out", default=None)

    p = sub.add_parser("train", help="train the network")
    p.add_argument("--config", required=True)

    p = sub.add_parser("infer", help="reconstruct one measurement")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True, help="output TIFF")
    p.add_argument("--center", action="store_true", help="recenter the beam before extracting views")

    p = sub.add_parser("baseline", help="classical reconstruction")
    p.add_argument("--method", required=True, choices=BASELINE_METHODS)
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True, help="output TIFF")
    p.add_argument("--upscale", type=int, default=DEFAULT_UPSCALE)
    p.add_argument("--bin", type=int, default=1, help="detector block size for parallax views")
    p.add_argument("--radius-fraction", type=float, default=None)

    p = sub.add_parser("evaluate", help="score a reconstruction against its ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True, help="TIFF image or container with /ground_truth")
    p.add_argument("--report", required=True, help="output JSON")
    p.add_argument("--pixel-size", type=float, default=None, help="A per pixel of the ground truth")

    p = sub.add_parser("sweep", help="score model and baselines across doses")
    p.add_argument("--ckpt", required=True)
    target = p.add_mutually_exclusive_group(required=True)
    target.add_argument("--sample", default=None, help="clean container")
    target.add_argument("--dataset", default=None, help="dataset root; sweeps every test-split sample")
    p.add_argument("--doses", type=_dose_list, default=list(DEFAULT_SWEEP_DOSES))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--bias", type=float, default=0.0)
    p.add_argument("--out", default="sweep")

    p = sub.add_parser("runs", help="list the run history, or the scores of one sweep")
    p.add_argument("--kind", default=None, choices=RUN_KINDS)
    p.add_argument("--run", type=int, default=None, help="sweep run id")
    return parser


def _print_history(rows, sweep_scores: bool) -> None:
    if sweep_scores:
        for row in rows:
            print(f"{row['sample']}  {row['method']:<8} dose {row['dose']:g}  PSNR {_cell(row['psnr'])}  "
                  f"SSIM {_cell(row['ssim'])}  CNR {_cell(row['cnr'])}")
        return
    for row in rows:
        print(f"{row['id']:>4}  {row['kind']:<8} {row['status']:<9} {row['start_time'] or ''}  "
              f"steps {row['steps'] or 0}  {row['message'] or ''}".rstrip())


def _cell(value) -> str:
    return "-" if value is None else f"{value:.4g}"


def _run(args: argparse.Namespace, orchestrator: PipelineOrchestrator) -> None:
    seed = seed_override()
    if args.command == "simulate":
        paths = orchestrator.simulate(args.manifest, args.out, args.workers)
        print(f"{len(paths)} samples written to {args.out}")
    elif args.command == "corrupt":
        print(orchestrator.corrupt(args.in_path, args.dose, args.sigma, args.bias,
                                   args.seed if seed is None else seed, args.out))
    elif args.command == "views":
        print(orchestrator.views(args.in_path, args.bin, args.radius_fraction, not args.raw, args.out))
    elif args.command == "train":
        result = orchestrator.train(args.config)
        print(f"{result['steps']} steps, final loss {result['final_loss']:.5f}; checkpoint {result['checkpoint']}")
    elif args.command == "infer":
        print(orchestrator.infer(args.ckpt, args.in_path, args.out, args.center))
    elif args.command == "baseline":
        print(orchestrator.baseline(args.method, args.in_path, args.out, args.upscale, args.bin,
                                    args.radius_fraction))
    elif args.command == "evaluate":
        report = orchestrator.evaluate(args.pred, args.gt, args.report, args.pixel_size)
        print(f"PSNR {report['psnr']:.2f} dB  SSIM {report['ssim']:.4f}  CNR {report['cnr']:.3f}  "
              f"cutoff {report['cutoff']:.4f} 1/A")
    elif args.command == "sweep":
        written = orchestrator.sweep(args.ckpt, args.out, sample_path=args.sample, dataset_root=args.dataset,
                                     doses=args.doses, seed=args.seed if seed is None else seed,
                                     sigma=args.sigma, bias=args.bias)
        print(f"{len(written)} files written to {args.out}")
    elif args.command == "runs":
        _print_history(orchestrator.history(args.kind, args.run), args.run is not None)


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run one command and return the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)

    error_handler = ErrorHandler(app_name=APP_NAME, log_dir=args.log_dir,
                                 log_level=LOG_LEVELS[args.log_level], install_excepthook=False)
    try:
        db_manager = DatabaseManager(os.path.join(args.log_dir, RUNS_DB_NAME))
        _run(args, PipelineOrchestrator(db_manager, error_handler))
        return EXIT_OK
    except Misr4dError as exc:
        error_handler.log_error(f"{args.command} failed: {exc}", exc_info=exc, module=args.command)
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:
        error_handler.handle_exception(type(exc), exc, exc.__traceback__, module=args.command)
        print(f"unexpected error: {exc}", file=sys.stderr)
        return ErrorHandler.exit_code_for(exc)
    finally:
        error_handler.close()
