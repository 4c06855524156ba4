"""Module for writing and reading case report directories.

A report directory holds::

    report.csv               one row per test image
    trend.csv                trend rows concerning the case
    coverage_saturated.pgm   coverage maps of the training set
    coverage_normalized.pgm
    recon_<family>_<i>.pgm   exported reconstructions and their truths
    truth_<family>_<i>.pgm
    config.json              resolved ExperimentConfig
    manifest.json            written last, hashes of all other files

CSV files use '.' as decimal separator, 6 significant digits and an
empty cell for a missing value.
"""
import csv
import hashlib
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, NamedTuple, Optional, Sequence, Union

from scattersim.experiments import (
    CaseId,
    CaseReport,
    SummaryRow,
    TrendTable,
    family_means,
)
from scattersim.io.pgm import read_pgm, write_pgm
from scattersim.metrics import METRIC_NAMES, MetricReport
from scattersim.util import (
    ConsistencyError,
    FormatError,
    ScatterIOError,
    StageTiming,
    tool_version,
)

_LOGGER = logging.getLogger(__name__)

PathLike = Union[str, Path]

REPORT_FILE = "report.csv"
TREND_FILE = "trend.csv"
CONFIG_FILE = "config.json"
MANIFEST_FILE = "manifest.json"
COVERAGE_FILES = {
    "coverage_saturated": "coverage_saturated.pgm",
    "coverage_normalized": "coverage_normalized.pgm",
}
REPORT_COLUMNS = ["case", "family", "index"] + list(METRIC_NAMES)
TREND_COLUMNS = [
    "criterion",
    "left",
    "relation",
    "right",
    "margin",
    "left_value",
    "right_value",
    "passed",
]
SUMMARY_COLUMNS = ["case", "family", "count"] + list(METRIC_NAMES)


class RunManifest(NamedTuple):
    """Inventory of a written report directory"""

    version: str
    config: Dict[str, Any]
    files: Dict[str, str]
    timings: Dict[str, StageTiming]
    provenance: Dict[str, Any]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "version": self.version,
            "config": self.config,
            "files": self.files,
            "timings": {stage: timing._asdict() for stage, timing in self.timings.items()},
            "provenance": self.provenance,
        }


def format_value(value: float) -> str:
    """Locale independent 6 significant digit text, empty for NaN."""
    value = float(value)
    if math.isnan(value):
        return ""
    return f"{value:.6g}"


def _parse_value(text: str) -> float:
    return math.nan if text == "" else float(text)


def _write_rows(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as file:
            writer = csv.writer(file, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as error:
        raise ScatterIOError(f"cannot write {path}: {error}") from error


def write_metrics_csv(metrics: Sequence[MetricReport], path: PathLike) -> None:
    """Write one row per MetricReport."""
    _write_rows(
        path,
        REPORT_COLUMNS,
        (
            [metric.case, metric.family, metric.index]
            + [format_value(getattr(metric, name)) for name in METRIC_NAMES]
            for metric in metrics
        ),
    )


def read_metrics_csv(path: PathLike) -> List[MetricReport]:
    """Read a report.csv written by :func:`write_metrics_csv`.

    Raises
    ------
    FormatError
        If columns or values are malformed.
    """
    try:
        with open(path, newline="", encoding="utf-8") as file:
            rows = list(csv.reader(file))
    except OSError as error:
        raise ScatterIOError(f"cannot read {path}: {error}") from error
    if not rows or rows[0] != REPORT_COLUMNS:
        raise FormatError(
            f"{path} has an unexpected header",
            expected=REPORT_COLUMNS,
            actual=rows[0] if rows else None,
        )
    metrics = []
    for number, row in enumerate(rows[1:], start=2):
        try:
            case, family, index, *values = row
            metrics.append(
                MetricReport(case, family, int(index), *(_parse_value(value) for value in values))
            )
        except (TypeError, ValueError) as error:
            raise FormatError(f"{path} line {number} is malformed: {error}") from error
    return metrics


def write_trend_csv(table: TrendTable, path: PathLike) -> None:
    _write_rows(
        path,
        TREND_COLUMNS,
        (
            [
                row.criterion,
                row.left,
                row.relation.value,
                row.right,
                format_value(row.margin),
                format_value(row.left_value),
                format_value(row.right_value),
                "pass" if row.passed else "fail",
            ]
            for row in table.rows
        ),
    )


def write_summary_csv(rows: Sequence[SummaryRow], path: PathLike) -> None:
    """Write the metric means per case and family."""
    _write_rows(
        path,
        SUMMARY_COLUMNS,
        (
            [row.case, row.family, row.count]
            + [format_value(getattr(row, name)) for name in METRIC_NAMES]
            for row in rows
        ),
    )


def _write_json(path: Path, content: Dict[str, Any]) -> None:
    try:
        path.write_text(json.dumps(content, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as error:
        raise ScatterIOError(f"cannot write {path}: {error}") from error


def _read_json(path: Path) -> Dict[str, Any]:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as error:
        raise ScatterIOError(f"cannot read {path}: {error}") from error
    except ValueError as error:
        raise FormatError(f"{path} is not valid JSON: {error}") from error


def file_hash(path: PathLike) -> str:
    """sha256 of the file content."""
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError as error:
        raise ScatterIOError(f"cannot read {path}: {error}") from error


def emit_report(
    report: CaseReport,
    directory: PathLike,
    trend: Optional[TrendTable] = None,
    timings: Optional[Dict[str, StageTiming]] = None,
) -> RunManifest:
    """Write a case report directory.

    Parameters
    ----------
    report : CaseReport
        report to write
    directory : PathLike
        target directory, created if missing
    trend : TrendTable, optional
        rows for trend.csv, header only if None
    timings : dict, optional
        stage timings recorded in the manifest

    Returns
    -------
    RunManifest
        the manifest that was written last

    Raises
    ------
    ScatterIOError
        If the directory or a file cannot be written.
    """
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as error:
        raise ScatterIOError(f"cannot create {directory}: {error}") from error

    written = [REPORT_FILE, TREND_FILE]
    write_metrics_csv(report.metrics, directory / REPORT_FILE)
    write_trend_csv(trend if trend is not None else TrendTable([]), directory / TREND_FILE)
    for field, name in COVERAGE_FILES.items():
        values = getattr(report, field)
        if values is not None:
            write_pgm(directory / name, values)
            written.append(name)
    for image in report.images:
        for prefix, values in (("recon", image.reconstruction), ("truth", image.truth)):
            name = f"{prefix}_{image.family}_{image.index}.pgm"
            write_pgm(directory / name, values)
            written.append(name)
    _write_json(directory / CONFIG_FILE, report.config)
    written.append(CONFIG_FILE)

    manifest = RunManifest(
        version=tool_version(),
        config=report.config,
        files={name: file_hash(directory / name) for name in written},
        timings=dict(timings or {}),
        provenance=report.provenance(),
    )
    _write_json(directory / MANIFEST_FILE, manifest.to_dict())
    _LOGGER.info("wrote report of case %s to %s", report.case.value, directory)
    return manifest


def load_report(directory: PathLike) -> CaseReport:
    """Read a report directory back into a CaseReport.

    Exported reconstructions are not loaded; coverage maps are loaded
    with 8-bit precision when present.

    Raises
    ------
    ScatterIOError
        If the manifest or report.csv cannot be read.
    ConsistencyError
        If report.csv does not match its manifest hash.
    FormatError
        If a file is malformed.
    """
    directory = Path(directory)
    manifest = _read_json(directory / MANIFEST_FILE)
    try:
        provenance = manifest["provenance"]
        expected_hash = manifest["files"][REPORT_FILE]
        case = CaseId(provenance["case"])
    except (KeyError, TypeError, ValueError) as error:
        raise FormatError(f"{directory / MANIFEST_FILE} is incomplete: {error}") from error
    if file_hash(directory / REPORT_FILE) != expected_hash:
        raise ConsistencyError(f"{directory / REPORT_FILE} was changed after the run")
    metrics = read_metrics_csv(directory / REPORT_FILE)
    coverage = {
        field: read_pgm(directory / name) if (directory / name).exists() else None
        for field, name in COVERAGE_FILES.items()
    }
    untrained = provenance.get("untrained_max_abs")
    return CaseReport(
        case=case,
        metrics=metrics,
        means=family_means(metrics),
        config=manifest.get("config", {}),
        config_hash=str(provenance.get("config_hash", "")),
        medium_fingerprint=int(provenance.get("medium_fingerprint", 0)),
        training_fingerprint=int(provenance.get("training_fingerprint", 0)),
        disjoint=bool(provenance.get("disjoint", False)),
        untrained_max_abs=math.nan if untrained is None else float(untrained),
        **coverage,
    )
