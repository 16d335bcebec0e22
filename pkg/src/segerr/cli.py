"""
Command line front end. Installing the package provides the ``segerr`` console
script (see ``[options.entry_points]`` in ``setup.cfg``)::

    segerr boundaries --input scene.ply --output mask.txt
    segerr eval --gt scene.ply --pred labels.txt --output report.json
    segerr synth --spec spec.json --out scene.ply --corrupt speckle --magnitude 5 \\
        --out-pred labels.txt
    segerr bench --n 158784 --radius 0.06 --method grid --out bench.json
    segerr aggregate reports/ --output total.json
    segerr sweep --gt scene.ply --pred labels.txt --output sweep.json

Summaries go to standard output, diagnostics to standard error. The exit code is
0 on success, 1 for invalid input or usage, 2 for unreadable or malformed files
and 3 when an internal cross-check fails.
"""

import argparse
import logging
import sys
import time
from typing import List, Optional

import numpy as np
from tqdm import tqdm

from segerr import __version__
from segerr.apis.data import (
    DEFAULT_IOU_THRESHOLD,
    DEFAULT_MIN_COMPONENT_SIZE,
    DEFAULT_RADIUS_M,
    ClassGroups,
    EvalConfig,
    LabelField,
)
from segerr.apis.logging import EvaluationLogger
from segerr.apis.results import BenchResult
from segerr.bench import BRUTE_FORCE_MAX_POINTS, run_bench
from segerr.boundary import compute_boundary_mask
from segerr.errors import FormatError, InvariantViolation
from segerr.fileio import (
    read_groups,
    read_pred_labels,
    read_report,
    read_scene,
    read_scene_spec,
    write_bench_results,
    write_boundary_mask,
    write_pred_labels,
    write_report,
    write_scene,
    write_sweep,
)
from segerr.metrics import (
    DEFAULT_SWEEP_RADII,
    aggregate,
    evaluate_scene,
    radius_sweep,
)
from segerr.names import (
    BenchMethod,
    CorruptionMode,
    DErrSampleMode,
    ExitCode,
    SceneFormat,
)
from segerr.synth import corrupt_labels, generate_scene
from segerr.utils import collect_paths

__author__ = "YY Lab AI"
__copyright__ = "YY Lab AI"
__license__ = "MIT"

_logger = logging.getLogger(__name__)


class UsageError(ValueError):
    """Invalid command line."""


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0 or not np.isfinite(value):
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {text}")
    return value


# ---- Commands ----


def cmd_boundaries(args) -> ExitCode:
    """Writes the boundary pseudo-labels of a scene."""
    cloud, labels = read_scene(args.input)
    start = time.perf_counter()
    mask = compute_boundary_mask(cloud, labels, args.radius, workers=args.workers)
    elapsed_ms = (time.perf_counter() - start) * 1000.0
    write_boundary_mask(args.output, mask)
    print(
        f"N={cloud.count} boundary={mask.num_boundary} elapsed_ms={elapsed_ms:.1f}"
    )
    return ExitCode.OK


def _eval_config(args, gt: LabelField, pred: LabelField) -> EvalConfig:
    num_classes = args.num_classes
    if num_classes is None:
        present = np.concatenate([gt.labels[gt.valid], pred.labels])
        num_classes = int(present.max()) + 1 if present.size else 1
        _logger.info(f"assuming {num_classes} classes")
    return EvalConfig(
        num_classes=num_classes,
        radius_m=args.radius,
        iou_threshold=args.iou_thresh,
        min_component_size=args.min_component_size,
        derr_samples=DErrSampleMode(args.derr_samples),
    )


def _load_eval_inputs(args):
    cloud, gt = read_scene(args.gt)
    pred = read_pred_labels(args.pred, cloud.count)
    cfg = _eval_config(args, gt, pred)
    groups = ClassGroups({})
    if args.groups is not None:
        groups = read_groups(args.groups, cfg.num_classes)
    return cloud, gt, pred, cfg, groups


def cmd_eval(args) -> ExitCode:
    """Evaluates a prediction against the ground truth of a scene."""
    cloud, gt, pred, cfg, groups = _load_eval_inputs(args)
    report = evaluate_scene(cloud, gt, pred, cfg, groups, workers=args.workers)
    write_report(args.output, report)
    print(report.summary())
    return ExitCode.OK


def cmd_sweep(args) -> ExitCode:
    """Evaluates a prediction at every radius of the sweep."""
    cloud, gt, pred, cfg, groups = _load_eval_inputs(args)
    reports = radius_sweep(cloud, gt, pred, cfg, args.radii, groups, args.workers)
    write_sweep(args.output, reports)
    for radius, report in reports.items():
        print(f"r={radius:g}")
        print(report.summary())
    return ExitCode.OK


def cmd_synth(args) -> ExitCode:
    """Generates a synthetic scene and optionally a corrupted prediction."""
    if args.corrupt is not None and args.out_pred is None:
        raise UsageError("--corrupt needs --out-pred")
    spec = read_scene_spec(args.spec)
    cloud, gt = generate_scene(spec)
    write_scene(args.out, cloud, gt, SceneFormat(args.format))
    summary = f"{spec.kind.value}: N={cloud.count} classes={spec.num_classes}"
    if args.out_pred is not None:
        pred = gt
        if args.corrupt is not None:
            pred = corrupt_labels(
                gt,
                cloud,
                CorruptionMode(args.corrupt),
                args.magnitude,
                args.seed if args.seed is not None else spec.seed,
                num_classes=spec.num_classes,
                radius_m=args.radius,
                target_class=args.target_class,
            )
            changed = int(np.count_nonzero(pred.labels != gt.labels))
            summary += f" corruption={args.corrupt} changed={changed}"
        write_pred_labels(args.out_pred, pred)
    print(summary)
    return ExitCode.OK


def cmd_bench(args) -> ExitCode:
    """Times the boundary pass of the chosen methods."""
    methods = args.method or [BenchMethod.GRID.value, BenchMethod.BRUTE.value]
    results: List[BenchResult] = run_bench(
        args.n,
        args.radius,
        [BenchMethod(m) for m in methods],
        repeat=args.repeat,
        workers=args.workers,
        seed=args.seed,
        brute_max_points=args.brute_max_points,
        progress=not args.no_progress,
    )
    write_bench_results(args.out, results)
    for result in results:
        print(result.summary())
    return ExitCode.OK


def cmd_aggregate(args) -> ExitCode:
    """Micro-averages saved scene reports."""
    paths = list(collect_paths(args.reports, "json"))
    if not paths:
        raise UsageError("No report files found")
    evaluation = EvaluationLogger(aggregate)
    for path in tqdm(paths, desc="reports", leave=False):
        evaluation.new_scene(read_report(path), name=str(path))
    report = evaluation.finish()
    if args.output is not None:
        write_report(args.output, report)
    print(report.summary())
    return ExitCode.OK


# ---- CLI ----


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument(
        "-v",
        "--verbose",
        dest="loglevel",
        help="set loglevel to INFO",
        action="store_const",
        const=logging.INFO,
    )
    parser.add_argument(
        "-vv",
        "--very-verbose",
        dest="loglevel",
        help="set loglevel to DEBUG",
        action="store_const",
        const=logging.DEBUG,
    )


def _add_workers(parser: argparse.ArgumentParser):
    parser.add_argument(
        "--workers",
        type=_positive_int,
        default=None,
        help="number of threads, defaults to the hardware parallelism",
    )


def _add_evaluation(parser: argparse.ArgumentParser):
    parser.add_argument("--gt", required=True, help="ground-truth scene (PLY)")
    parser.add_argument("--pred", required=True, help="predicted labels, one per line")
    parser.add_argument("--radius", type=_positive_float, default=DEFAULT_RADIUS_M)
    parser.add_argument(
        "--iou-thresh", type=float, default=DEFAULT_IOU_THRESHOLD, dest="iou_thresh"
    )
    parser.add_argument(
        "--min-component-size",
        type=_positive_int,
        default=DEFAULT_MIN_COMPONENT_SIZE,
        dest="min_component_size",
    )
    parser.add_argument(
        "--num-classes",
        type=_positive_int,
        default=None,
        dest="num_classes",
        help="defaults to one more than the largest label",
    )
    parser.add_argument("--groups", default=None, help="class groups (JSON)")
    parser.add_argument(
        "--derr-samples",
        choices=[m.value for m in DErrSampleMode],
        default=DErrSampleMode.CLASS.value,
        dest="derr_samples",
    )
    parser.add_argument("--output", required=True)
    _add_workers(parser)


def parse_args(args):
    """Parse command line parameters

    Args:
      args (List[str]): command line parameters as list of strings
          (for example  ``["--help"]``).

    Returns:
      :obj:`argparse.Namespace`: command line parameters namespace
    """
    parser = _ArgumentParser(
        prog="segerr", description="Point cloud segmentation error analysis"
    )
    parser.add_argument(
        "--version",
        action="version",
        version="segerr {ver}".format(ver=__version__),
    )
    _add_common(parser)
    commands = parser.add_subparsers(dest="command", parser_class=_ArgumentParser)
    commands.required = True

    boundaries = commands.add_parser("boundaries", help="boundary pseudo-labels")
    boundaries.add_argument("--input", required=True, help="scene (PLY)")
    boundaries.add_argument("--radius", type=_positive_float, default=DEFAULT_RADIUS_M)
    boundaries.add_argument("--output", required=True, help="0/1 flag per line")
    _add_workers(boundaries)
    boundaries.set_defaults(func=cmd_boundaries)

    evaluate = commands.add_parser("eval", help="evaluate a prediction")
    _add_evaluation(evaluate)
    evaluate.set_defaults(func=cmd_eval)

    sweep = commands.add_parser("sweep", help="evaluate at several radii")
    _add_evaluation(sweep)
    sweep.add_argument(
        "--radii", type=_positive_float, nargs="+", default=list(DEFAULT_SWEEP_RADII)
    )
    sweep.set_defaults(func=cmd_sweep)

    synth = commands.add_parser("synth", help="generate a synthetic scene")
    synth.add_argument("--spec", required=True, help="scene spec (JSON)")
    synth.add_argument("--out", required=True, help="scene (PLY)")
    synth.add_argument(
        "--format",
        choices=[f.value for f in SceneFormat],
        default=SceneFormat.BINARY.value,
    )
    synth.add_argument("--corrupt", choices=[m.value for m in CorruptionMode])
    synth.add_argument("--magnitude", type=float, default=1.0)
    synth.add_argument(
        "--seed", type=int, default=None, help="defaults to the seed of the scene spec"
    )
    synth.add_argument("--radius", type=_positive_float, default=DEFAULT_RADIUS_M)
    synth.add_argument("--target-class", type=int, default=0, dest="target_class")
    synth.add_argument("--out-pred", default=None, dest="out_pred")
    synth.set_defaults(func=cmd_synth)

    bench = commands.add_parser("bench", help="time the boundary pass")
    bench.add_argument("--n", type=_positive_int, required=True)
    bench.add_argument("--radius", type=_positive_float, default=DEFAULT_RADIUS_M)
    bench.add_argument(
        "--method",
        choices=[m.value for m in BenchMethod],
        action="append",
        help="repeatable, defaults to grid and brute",
    )
    bench.add_argument(
        "--repeat", type=_positive_int, default=BenchResult.MIN_REPETITIONS
    )
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument(
        "--brute-max-points",
        type=_positive_int,
        default=BRUTE_FORCE_MAX_POINTS,
        dest="brute_max_points",
    )
    bench.add_argument("--no-progress", action="store_true", dest="no_progress")
    bench.add_argument("--out", required=True)
    _add_workers(bench)
    bench.set_defaults(func=cmd_bench)

    aggregate = commands.add_parser("aggregate", help="micro-average saved reports")
    aggregate.add_argument("reports", nargs="+", help="report files or directories")
    aggregate.add_argument("--output", default=None)
    aggregate.set_defaults(func=cmd_aggregate)

    return parser.parse_args(args)


def setup_logging(loglevel):
    """Setup basic logging on standard error

    Args:
      loglevel (int): minimum loglevel for emitting messages
    """
    logformat = "[%(asctime)s] %(levelname)s:%(name)s:%(message)s"
    logging.basicConfig(
        level=loglevel or logging.WARNING,
        stream=sys.stderr,
        format=logformat,
        datefmt="%Y-%m-%d %H:%M:%S",
    )


def main(args) -> int:
    """Runs one command and maps its failure, if any, to an exit code.

    Args:
      args (List[str]): command line parameters as list of strings
          (for example  ``["--verbose", "eval", ...]``).

    Returns: The exit code
    """
    try:
        parsed = parse_args(args)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return ExitCode.USAGE
    setup_logging(parsed.loglevel)
    try:
        return parsed.func(parsed)
    except (FormatError, OSError) as e:
        code, error = ExitCode.IO, e
    except (InvariantViolation, AssertionError) as e:
        code, error = ExitCode.INTERNAL, e
    except ValueError as e:
        code, error = ExitCode.USAGE, e
    _logger.debug("command failed", exc_info=error)
    print(f"segerr: error: {error}", file=sys.stderr)
    return code


def run(argv: Optional[List[str]] = None):
    """Calls :func:`main` passing the CLI arguments extracted from :obj:`sys.argv`

    This function can be used as entry point to create console scripts with setuptools.
    """
    sys.exit(int(main(sys.argv[1:] if argv is None else argv)))


if __name__ == "__main__":
    run()
