#!/usr/bin/env python3
"""
Command-line interface for the scene completion harness.

Subcommands write their artifacts under ``--out`` (default: the configured
``out_dir``); every file is a pure function of the configuration and seed.
"""

import argparse
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from pydantic import ValidationError

from ..attention.oracles import ORACLES, oracle_report
from ..config import HarnessConfig, load_config
from ..errors import NumericalCheckError, OceanError
from ..losses.metrics import iou_miou
from ..pipeline.model import forward
from ..pipeline.params import init_params, load_params
from ..pipeline.train import TRAJECTORY_HEADER, train_steps
from ..utils.io import read_volume, to_gray, write_csv, write_json, write_pgm, write_volume
from ..utils.logging import flush_logging, setup_logging
from .fixtures import generate_scene, load_fixture, save_fixture
from .gradcheck import REGISTRY, gradcheck, probe_pipeline
from .reporting import HarnessReporter

from logging import getLogger
log = getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NUMERICAL = 2

PROBE_OP = "pipeline"


class HarnessArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=str, help='JSON configuration overlaid on the packaged defaults')
    common.add_argument('--seed', type=int, help='Seed for the fixture, initialisation and sampling')
    common.add_argument('--out', type=str, help='Output directory (default: out_dir from the configuration)')
    common.add_argument('--verbose', '-v', action='store_true', help='Enable debug logging')
    common.add_argument('--quiet', '-q', action='store_true', help='Only log errors')
    return common


def create_argument_parser() -> argparse.ArgumentParser:
    """Create and configure the argument parser."""
    parser = HarnessArgumentParser(
        prog="oceanssc",
        description="Desk-scale object-centric semantic scene completion harness",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Write a synthetic scene
  oceanssc generate --seed 3 --out scene/

  # Run the pipeline once and dump logits, losses and BEV slices
  oceanssc forward --config c.json --seed 7 --out run/

  # Overfit one scene for 50 steps
  oceanssc train --steps 50 --lr 0.1 --out train/

  # Finite-difference checks (all ops, or one; "pipeline" probes the full loss)
  oceanssc gradcheck --op sga_cluster --trials 100

  # Metrics from saved logits and labels
  oceanssc eval --pred run/logits.ocnv --labels run/labels.ocnv

  # Kernels against their brute-force oracles
  oceanssc oracle --op sga3d
        """
    )
    common = _common_options()
    sub = parser.add_subparsers(dest='command', metavar='COMMAND', parser_class=HarnessArgumentParser)
    sub.required = True

    gen = sub.add_parser('generate', parents=[common], help='Write a synthetic fixture')
    gen.set_defaults(handler=run_generate)

    fwd = sub.add_parser('forward', parents=[common], help='Run one forward pass')
    fwd.add_argument('--fixture', type=str, help='Fixture directory written by "generate"')
    fwd.add_argument('--params', type=str, help='Parameter file (OCNP) to use instead of a fresh init')
    fwd.add_argument('--identity', action='store_true',
                     help='Initialise with zeroed output projections')
    fwd.set_defaults(handler=run_forward)

    trn = sub.add_parser('train', parents=[common], help='Overfit one fixture with gradient descent')
    trn.add_argument('--steps', type=int, help='Number of steps (default: from the configuration)')
    trn.add_argument('--lr', type=float, help='Learning rate (default: from the configuration)')
    trn.add_argument('--fixture', type=str, help='Fixture directory written by "generate"')
    trn.set_defaults(handler=run_train)

    grad = sub.add_parser('gradcheck', parents=[common], help='Finite-difference VJP checks')
    grad.add_argument('--op', type=str, help=f'Registered op or "{PROBE_OP}" (default: all)')
    grad.add_argument('--trials', type=int, default=100, help='Random trials per op (default: 100)')
    grad.set_defaults(handler=run_gradcheck)

    ev = sub.add_parser('eval', parents=[common], help='IoU / mIoU from saved predictions')
    ev.add_argument('--pred', type=str, required=True, help='Logits or label volume (OCNV)')
    ev.add_argument('--labels', type=str, required=True, help='Ground-truth label volume (OCNV)')
    ev.set_defaults(handler=run_eval)

    orc = sub.add_parser('oracle', parents=[common], help='Compare attention kernels with brute-force oracles')
    orc.add_argument('--op', type=str, help=f'One of {", ".join(ORACLES)} (default: all)')
    orc.add_argument('--trials', type=int, default=100, help='Random trials per op (default: 100)')
    orc.set_defaults(handler=run_oracle)

    return parser


def load_configuration(args) -> HarnessConfig:
    """Defaults, then ``--config``, then command-line overrides."""
    overrides = {}
    for flag, key in (('seed', 'seed'), ('steps', 'steps'), ('lr', 'lr'), ('out', 'out_dir')):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    return load_config(args.config, **overrides)


def validate_arguments(args) -> bool:
    if args.verbose and args.quiet:
        log.error("Cannot use --verbose and --quiet together")
        return False
    if args.config and not Path(args.config).is_file():
        log.error(f"Configuration file '{args.config}' does not exist")
        return False
    if getattr(args, 'trials', 0) < 0:
        log.error("--trials must be nonnegative")
        return False
    if getattr(args, 'steps', None) is not None and args.steps < 1:
        log.error("--steps must be at least 1")
        return False
    if getattr(args, 'lr', None) is not None and args.lr < 0:
        log.error("--lr must be nonnegative")
        return False
    for flag in ('fixture', 'params', 'pred', 'labels'):
        path = getattr(args, flag, None)
        if path and not Path(path).exists():
            log.error(f"--{flag} path '{path}' does not exist")
            return False
    return True


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _fixture(args, config: HarnessConfig):
    if getattr(args, 'fixture', None):
        return load_fixture(args.fixture)
    return generate_scene(config, config.seed)


def run_generate(args, config: HarnessConfig, reporter: HarnessReporter) -> int:
    fixture = generate_scene(config, config.seed)
    out = save_fixture(fixture, config.out_dir)
    reporter.report_fixture(fixture, out)
    return EXIT_OK


def _ild_summary(result) -> dict:
    ild = result.cache.ild
    if ild is None:
        return {"instances": [], "alpha": [], "weights": [], "selected": []}
    return {
        "instances": [int(i) for i in ild.pooled.instance_ids],
        "alpha": [float(a) for a in ild.decoded.alpha],
        "weights": [float(w) for w in ild.weights],
        "selected": [float(z) for z in ild.Z],
    }


def run_forward(args, config: HarnessConfig, reporter: HarnessReporter) -> int:
    fixture = _fixture(args, config)
    if args.params:
        params = load_params(args.params)
    else:
        params = init_params(config, seed=config.seed, identity=args.identity)
    result = forward(fixture, params, config, seed=config.seed)

    out = Path(config.out_dir)
    write_volume(out / "logits.ocnv", result.logits)
    write_volume(out / "labels.ocnv", fixture.labels[..., None], integer=True)
    write_json(out / "losses.json", result.report.data)
    write_json(out / "ild.json", _ild_summary(result))
    if result.p_hat is not None:
        write_pgm(out / "bev_p_hat.pgm", to_gray(result.p_hat.mean(axis=-1)), maxval=255)
        ild = result.cache.ild
        for row, inst in enumerate(ild.pooled.instance_ids):
            slice_ = ild.weights[row] * ild.decoded.maps[row].mean(axis=-1)
            write_pgm(out / f"bev_instance_{int(inst)}.pgm", to_gray(slice_), maxval=255)
    log.info(f"forward artifacts written to {out}")
    reporter.report_losses(result.report)
    return EXIT_OK


def run_train(args, config: HarnessConfig, reporter: HarnessReporter) -> int:
    fixture = _fixture(args, config)
    params = init_params(config, seed=config.seed)
    run = train_steps(fixture, params, config, seed=config.seed, progress=not args.quiet)
    out = Path(config.out_dir)
    path = write_csv(out / "trajectory.csv", TRAJECTORY_HEADER, run.rows())
    run.params.save(out / "params.ocnp")
    reporter.report_training(run.totals, path)
    return EXIT_OK


def run_gradcheck(args, config: HarnessConfig, reporter: HarnessReporter) -> int:
    ops: List[str] = [args.op] if args.op else list(REGISTRY) + [PROBE_OP]
    reports: Dict[str, object] = {}
    probe = None
    for op in ops:
        if op == PROBE_OP:
            probe = probe_pipeline(config, seed=config.seed)
        else:
            reports[op] = gradcheck(op, args.trials, config.seed)

    summary = {op: r.data for op, r in reports.items()}
    if probe is not None:
        summary[PROBE_OP] = {"samples": probe.samples, "max_error": probe.max_error,
                             "passed": probe.passed}
    write_json(Path(config.out_dir) / "gradcheck.json", summary)
    reporter.report_gradcheck(reports, probe)

    failed = [op for op, r in reports.items() if not r.passed]
    if probe is not None and not probe.passed:
        failed.append(PROBE_OP)
    if failed:
        raise NumericalCheckError(f"gradient check failed for {', '.join(failed)}")
    return EXIT_OK


def _labels_from(volume: np.ndarray) -> np.ndarray:
    """Single-channel volumes hold labels; anything wider holds logits."""
    return volume[..., 0] if volume.shape[-1] == 1 else np.argmax(volume, axis=-1)


def run_eval(args, config: HarnessConfig, reporter: HarnessReporter) -> int:
    pred_volume = read_volume(args.pred)
    pred = _labels_from(pred_volume)
    gt = read_volume(args.labels)[..., 0]
    classes: Optional[int] = pred_volume.shape[-1] if pred_volume.shape[-1] > 1 else None
    report = iou_miou(pred, gt, classes)
    write_json(Path(config.out_dir) / "metrics.json", report.data)
    reporter.report_metrics(report)
    return EXIT_OK


def run_oracle(args, config: HarnessConfig, reporter: HarnessReporter) -> int:
    ops = [args.op] if args.op else list(ORACLES)
    reports = {op: oracle_report(op, args.trials, config.seed) for op in ops}
    write_json(Path(config.out_dir) / "oracle.json",
               {op: {"trials": r.trials, "max_deviation": r.max_deviation, "passed": r.passed}
                for op, r in reports.items()})
    reporter.report_oracles(reports)
    failed = [r for r in reports.values() if not r.passed]
    if failed:
        raise NumericalCheckError(", ".join(f"{r.op} deviates by {r.max_deviation:.3e}" for r in failed))
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def main(argv: Optional[List[str]] = None) -> int:
    """
    Main entry point for the CLI application.

    Returns
    -------
    int
        0 on success, 1 for invalid input, 2 when a numerical check fails.
    """
    parser = create_argument_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    setup_logging(verbose=args.verbose, quiet=args.quiet)
    try:
        if not validate_arguments(args):
            return EXIT_INVALID
        config = load_configuration(args)
        reporter = HarnessReporter(quiet=args.quiet)
        return args.handler(args, config, reporter)
    except NumericalCheckError as e:
        log.error(f"Numerical check failed: {e}")
        return EXIT_NUMERICAL
    except (OceanError, ValidationError, KeyError, OSError, ValueError) as e:
        log.error(f"Error: {e}")
        return EXIT_INVALID
    finally:
        flush_logging()


if __name__ == "__main__":
    sys.exit(main())
