"""Command line interface of scattersim.

Every failure is reported on standard error as ``error:<category>: message``
and mapped to an exit code: 1 for usage errors, 2 for data and format
errors, 3 for numerical failures.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from scattersim.datasets.builder import CaseRecipe, DatasetSpec, build_dataset
from scattersim.datasets.external import load_external
from scattersim.datasets.generators import TargetFamily, TargetImage
from scattersim.datasets.idx import prepare_targets, read_idx_files
from scattersim.diagnostics import (
    DEFAULT_BINS,
    coverage_fraction,
    pixel_histograms,
    superpose,
    write_histograms_csv,
)
from scattersim.experiments import (
    CaseId,
    compare_cases,
    load_config,
    resolve_seed,
    run_all,
    run_case,
    summarize_reports,
)
from scattersim.io.binary import (
    load_dataset,
    load_mapping,
    load_medium,
    save_dataset,
    save_mapping,
    save_medium,
)
from scattersim.io.pgm import write_pgm
from scattersim.io.report import (
    emit_report,
    load_report,
    write_metrics_csv,
    write_summary_csv,
    write_trend_csv,
)
from scattersim.learners.mapping import MappingKind, predict_batch
from scattersim.learners.net import NetConfig
from scattersim.learners.ridge import RidgeConfig, RidgeSolver
from scattersim.learners.training import train
from scattersim.media import MediumKind, MediumSpec, generate_medium
from scattersim.metrics import evaluate_pair
from scattersim.util import (
    Dims,
    InvalidArgumentError,
    ScatterIOError,
    ScatterSimError,
    StageTiming,
    parse_dims,
    tool_version,
)

_LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

EXIT_CODES = {
    "usage": EXIT_USAGE,
    "argument": EXIT_USAGE,
    "numerical": EXIT_NUMERICAL,
}


class UsageError(Exception):
    """Raised by the argument parser instead of exiting."""


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _dims(text: str) -> Dims:
    try:
        return parse_dims(text)
    except InvalidArgumentError as error:
        raise argparse.ArgumentTypeError(str(error)) from error


def _points(text: str) -> List[Tuple[int, int]]:
    """Parse ``y,x;y,x;...``."""
    points = []
    for item in text.split(";"):
        if not item.strip():
            continue
        try:
            y, x = (int(value) for value in item.split(","))
        except ValueError as error:
            raise argparse.ArgumentTypeError(
                f"points must look like 'y,x;y,x', got '{text}'"
            ) from error
        points.append((y, x))
    if not points:
        raise argparse.ArgumentTypeError("no points given")
    return points


def _offset(text: str) -> Dims:
    return _points(text.replace(";", ""))[0]


def _choices(enum_type) -> List[str]:
    return [member.value for member in enum_type]


def _add_output(parser: argparse.ArgumentParser, help: str) -> None:
    parser.add_argument("-o", "--output", required=True, type=Path, help=help)


def build_parser() -> argparse.ArgumentParser:
    """Create the parser with all subcommands."""
    parser = _ArgumentParser(
        prog="scattersim",
        description="Simulate learned imaging through scattering media.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {tool_version()}")
    parser.add_argument(
        "-v", "--verbose", action="count", default=0, help="INFO with -v, DEBUG with -vv"
    )
    commands = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    medium = commands.add_parser("gen-medium", help="generate a transmission medium")
    medium.add_argument("--kind", choices=_choices(MediumKind), default=MediumKind.LINEAR.value)
    medium.add_argument("--in", dest="in_dims", type=_dims, required=True, help="HxW")
    medium.add_argument("--out", dest="out_dims", type=_dims, required=True, help="HxW")
    medium.add_argument("--seed", type=int, help="overrides SCATTER_SEED")
    _add_output(medium, ".stm file")

    dataset = commands.add_parser("gen-dataset", help="build a paired dataset")
    dataset.add_argument("--family", choices=_choices(TargetFamily), required=True)
    dataset.add_argument("--recipe", choices=_choices(CaseRecipe), default=CaseRecipe.PLAIN.value)
    dataset.add_argument("--n", type=int, required=True, help="number of pairs")
    dataset.add_argument("--medium", type=Path, required=True, help=".stm file")
    dataset.add_argument("--seed", type=int, help="overrides SCATTER_SEED")
    dataset.add_argument(
        "--target", type=_dims, help="target HxW, required for embedded recipes"
    )
    dataset.add_argument("--offset", type=_offset, help="embed-fixed offset y,x")
    dataset.add_argument("--binning", type=int, default=1, help="speckle binning factor")
    dataset.add_argument("--images", type=Path, nargs="+", help="PGM targets")
    dataset.add_argument("--idx", type=Path, help="IDX image file with targets")
    dataset.add_argument("--labels", type=Path, help="IDX label file")
    _add_output(dataset, ".sds file")

    learner = commands.add_parser("train", help="train a mapping on a dataset")
    learner.add_argument(
        "--learner", choices=_choices(MappingKind), default=MappingKind.RIDGE_AFFINE.value
    )
    learner.add_argument("--dataset", type=Path, required=True, help=".sds file")
    learner.add_argument("--lambda-rel", type=float, default=RidgeConfig().lambda_rel)
    learner.add_argument("--solver", choices=_choices(RidgeSolver), default=RidgeSolver.CHOLESKY.value)
    learner.add_argument("--hidden", type=int, default=NetConfig().hidden_width)
    learner.add_argument("--lr", type=float, default=NetConfig().learning_rate)
    learner.add_argument("--epochs", type=int, default=NetConfig().max_epochs)
    learner.add_argument("--batch-size", type=int, default=NetConfig().batch_size)
    learner.add_argument("--patience", type=int, default=NetConfig().early_stop_patience)
    learner.add_argument("--dice-weight", type=float, default=NetConfig().dice_weight)
    learner.add_argument("--init-seed", type=int, default=NetConfig().init_seed)
    _add_output(learner, ".slm file")

    evaluate = commands.add_parser("eval", help="evaluate a mapping on a dataset")
    evaluate.add_argument("--map", type=Path, required=True, help=".slm file")
    evaluate.add_argument("--dataset", type=Path, required=True, help=".sds file")
    _add_output(evaluate, "metrics CSV")

    diagnose = commands.add_parser("diagnose", help="coverage maps and histograms")
    diagnose.add_argument("--dataset", type=Path, required=True, help=".sds file")
    diagnose.add_argument("--mode", choices=["saturate", "normalize", "hist"], required=True)
    diagnose.add_argument("--points", type=_points, help="pixels y,x;y,x for hist")
    diagnose.add_argument("--bins", type=int, default=DEFAULT_BINS)
    diagnose.add_argument("--exclude-zero", action="store_true", help="drop the first bin")
    _add_output(diagnose, "output directory")

    case = commands.add_parser("run-case", help="run one experiment case")
    case.add_argument("--case", choices=_choices(CaseId), required=True)
    case.add_argument("--config", type=Path, help="ExperimentConfig JSON")
    case.add_argument("--seed", type=int, help="overrides SCATTER_SEED and the config")
    _add_output(case, "report directory")

    compare = commands.add_parser("compare", help="compare case reports")
    compare.add_argument("--reports", type=Path, nargs="+", required=True, help="report directories")
    _add_output(compare, "trend CSV, summary.csv is written next to it")

    every = commands.add_parser("run-all", help="run and compare all cases")
    every.add_argument("--config", type=Path, help="ExperimentConfig JSON")
    every.add_argument("--seed", type=int, help="overrides SCATTER_SEED and the config")
    _add_output(every, "output directory")
    return parser


def _gen_medium(args: argparse.Namespace) -> None:
    spec = MediumSpec(args.kind, args.in_dims, args.out_dims, resolve_seed(args.seed, 0))
    save_medium(generate_medium(spec.validated()), args.output)


def _target_pool(args: argparse.Namespace, dims: Dims) -> Optional[List[TargetImage]]:
    if args.images:
        return load_external(args.images, dims)
    if args.idx:
        family = TargetFamily(args.family)
        return prepare_targets(read_idx_files(args.idx, args.labels), dims, family)
    return None


def _gen_dataset(args: argparse.Namespace) -> None:
    medium = load_medium(args.medium)
    recipe = CaseRecipe(args.recipe)
    if recipe.embedded:
        if args.target is None:
            raise InvalidArgumentError(f"--target is required for the {recipe.value} recipe")
        target_dims, canvas_dims = args.target, medium.in_dims
    else:
        target_dims, canvas_dims = args.target or medium.in_dims, None
    spec = DatasetSpec(
        family=args.family,
        case_recipe=recipe,
        count=args.n,
        target_dims=target_dims,
        canvas_dims=canvas_dims,
        seed=resolve_seed(args.seed, 0),
        speckle_binning=args.binning,
        embed_offset=args.offset,
    ).validated()
    dataset = build_dataset(spec, medium, pool=_target_pool(args, target_dims))
    save_dataset(dataset, args.output)


def _train(args: argparse.Namespace) -> None:
    dataset = load_dataset(args.dataset)
    if MappingKind(args.learner) is MappingKind.RIDGE_AFFINE:
        cfg = RidgeConfig(lambda_rel=args.lambda_rel, solver=args.solver).validated()
    else:
        cfg = NetConfig(
            hidden_width=args.hidden,
            learning_rate=args.lr,
            batch_size=args.batch_size,
            max_epochs=args.epochs,
            early_stop_patience=args.patience,
            dice_weight=args.dice_weight,
            init_seed=args.init_seed,
        ).validated()
    save_mapping(train(dataset, args.learner, cfg), args.output)


def _evaluate(args: argparse.Namespace) -> None:
    mapping = load_mapping(args.map)
    dataset = load_dataset(args.dataset)
    reconstruction = predict_batch(mapping, dataset.speckles())
    family = TargetFamily(dataset.spec.family).value
    metrics = [
        evaluate_pair(values, truth, family, index)
        for index, (values, truth) in enumerate(zip(reconstruction.values, dataset.targets()))
    ]
    write_metrics_csv(metrics, args.output)


def _diagnose(args: argparse.Namespace) -> None:
    dataset = load_dataset(args.dataset)
    try:
        args.output.mkdir(parents=True, exist_ok=True)
    except OSError as error:
        raise ScatterIOError(f"cannot create {args.output}: {error}") from error
    if args.mode == "hist":
        if not args.points:
            raise InvalidArgumentError("--points is required for --mode hist")
        histograms = pixel_histograms(
            dataset.targets(), args.points, args.bins, args.exclude_zero
        )
        write_histograms_csv(histograms, args.output / "histograms.csv")
        return
    coverage = superpose(dataset.targets(), args.mode)
    write_pgm(args.output / f"coverage_{coverage.mode.name.lower()}.pgm", coverage.values)
    print(f"coverage fraction {coverage_fraction(dataset.targets()):.6g}")


def _run_case(args: argparse.Namespace) -> None:
    cfg = load_config(args.config, args.seed)
    timings: Dict[str, StageTiming] = {}
    report = run_case(args.case, cfg, timings)
    emit_report(report, args.output, timings=timings)


def _compare(args: argparse.Namespace) -> None:
    reports = [load_report(directory) for directory in args.reports]
    table = compare_cases(reports)
    write_trend_csv(table, args.output)
    write_summary_csv(summarize_reports(reports), args.output.parent / "summary.csv")
    print(f"{len(table.rows) - len(table.failed())} of {len(table.rows)} trend rows passed")


def _run_all(args: argparse.Namespace) -> None:
    cfg = load_config(args.config, args.seed)
    _, table = run_all(cfg, args.output)
    print(f"{len(table.rows) - len(table.failed())} of {len(table.rows)} trend rows passed")


COMMANDS = {
    "gen-medium": _gen_medium,
    "gen-dataset": _gen_dataset,
    "train": _train,
    "eval": _evaluate,
    "diagnose": _diagnose,
    "run-case": _run_case,
    "compare": _compare,
    "run-all": _run_all,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run the command line interface.

    Parameters
    ----------
    argv : Sequence[str], optional
        arguments without the program name, sys.argv if None

    Returns
    -------
    int
        exit code
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as error:
        print(f"error:usage: {error}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exit_request:
        # --help and --version
        return int(exit_request.code or 0)

    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except ScatterSimError as error:
        print(f"error:{error.category}: {error}", file=sys.stderr)
        return EXIT_CODES.get(error.category, EXIT_DATA)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
