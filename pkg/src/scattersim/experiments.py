"""Module for the end to end generalization experiments.

Each case trains a mapping on a dataset with a characteristic coverage
and grayscale diversity and evaluates it on held-out targets. The
cases are compared through ordinal trends instead of absolute values.

=====  ==================  ===============================================
case   training set        evaluation
=====  ==================  ===============================================
1      TEXTURE plain       held-out TEXTURE and DIGIT targets
2      DIGIT plain         held-out TEXTURE and DIGIT targets
3      DIGIT enlarged      held-out TEXTURE and DIGIT targets
4a-4c  DIGIT modulated     held-out TEXTURE and DIGIT targets
5      TEXTURE on canvas   TEXTURE at the training and two shifted offsets
sic    DIGIT on canvas     digit 5 at the four corners of the canvas
=====  ==================  ===============================================
"""
import hashlib
import json
import logging
import math
import os
from enum import Enum, unique
from pathlib import Path
from typing import (
    Any,
    Collection,
    Dict,
    List,
    NamedTuple,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np

from scattersim.datasets.builder import (
    DISJOINT_ATTEMPTS,
    CaseRecipe,
    Dataset,
    DatasetSpec,
    build_dataset,
)
from scattersim.datasets.generators import TargetFamily, TargetImage, gen_digit
from scattersim.datasets.transforms import center_offset, embed, valid_offsets
from scattersim.diagnostics import superpose_normalized, superpose_saturated
from scattersim.learners.mapping import MappingKind, predict_batch
from scattersim.learners.net import NetConfig
from scattersim.learners.ridge import RidgeConfig
from scattersim.learners.training import train
from scattersim.media import MediumKind, MediumSpec, generate_medium
from scattersim.metrics import METRIC_NAMES, MetricReport, evaluate_pair, mean_report
from scattersim.util import (
    ConsistencyError,
    Dims,
    FormatError,
    InvalidArgumentError,
    InvalidSpecError,
    ScatterIOError,
    StageClock,
    StageTiming,
    array_hash,
    check_dims,
    check_seed,
    coerce_enum,
    derive_seed,
)

_LOGGER = logging.getLogger(__name__)

SEED_ENV = "SCATTER_SEED"
SIC_GLYPH = 5
UNTRAINED_TOLERANCE = 1e-6

FULL_COVERAGE_FLOOR = 0.99
ASYMMETRY_MARGIN = 0.2
DIVERSITY_MARGIN = 0.05
DIGIT_FLOOR = 0.9
SHIFT_SHARE = 0.5
CORNER_FLOOR = 0.8


@unique
class CaseId(str, Enum):
    """Experiment cases, the values are the command line spellings"""

    C1 = "1"
    C2 = "2"
    C3 = "3"
    C4A = "4a"
    C4B = "4b"
    C4C = "4c"
    C5 = "5"
    SIC = "sic"

    @property
    def label(self) -> str:
        return self.name

    @property
    def on_canvas(self) -> bool:
        return self in (CaseId.C5, CaseId.SIC)

    @property
    def training(self) -> Tuple[TargetFamily, CaseRecipe]:
        """Family and recipe of the training set."""
        return _CASE_TRAINING[self]


_CASE_TRAINING = {
    CaseId.C1: (TargetFamily.TEXTURE, CaseRecipe.PLAIN),
    CaseId.C2: (TargetFamily.DIGIT, CaseRecipe.PLAIN),
    CaseId.C3: (TargetFamily.DIGIT, CaseRecipe.ENLARGED),
    CaseId.C4A: (TargetFamily.DIGIT, CaseRecipe.MOD_A),
    CaseId.C4B: (TargetFamily.DIGIT, CaseRecipe.MOD_B),
    CaseId.C4C: (TargetFamily.DIGIT, CaseRecipe.MOD_C),
    CaseId.C5: (TargetFamily.TEXTURE, CaseRecipe.EMBEDDED_FIXED),
    CaseId.SIC: (TargetFamily.DIGIT, CaseRecipe.EMBEDDED_RANDOM),
}

PLANE_CASES = (CaseId.C1, CaseId.C2, CaseId.C3, CaseId.C4A, CaseId.C4B, CaseId.C4C)
# cases rerun with the network learner for the diversity ladder
LADDER_CASES = (CaseId.C2, CaseId.C3, CaseId.C4A, CaseId.C4B, CaseId.C4C)
SHIFT_LABELS = ("texture-original", "texture-shift-i", "texture-shift-ii")
# pooled shifted-position row of the trend table
SHIFTED_LABEL = "texture-shifted"
CORNER_LABELS = ("digit-top-left", "digit-top-right", "digit-bottom-left", "digit-bottom-right")


def _config_dims(value: Any, name: str, minimum: int = 1) -> Dims:
    try:
        return check_dims(value, name, minimum)
    except InvalidSpecError as error:
        raise ValueError(str(error)) from error


class ExperimentConfig:
    """Options of the experiment cases.

    Parameters
    ----------
    seed : int, optional
        master seed, every other seed is derived from it, by default 0
    medium_kind : MediumKind or str, optional
        forward model, by default "linear"
    target_dims : Dims, optional
        object plane of cases 1-4, by default (16, 16)
    speckle_dims : Dims, optional
        detector plane of cases 1-4 before binning, by default (24, 24)
    canvas_dims : Dims, optional
        object plane of cases 5 and sic, by default (32, 32)
    canvas_speckle_dims : Dims, optional
        detector plane of cases 5 and sic before binning, by default (40, 40)
    train_count : int, optional
        training pairs, by default 4096
    test_count : int, optional
        test targets per evaluation family, by default 32
    learner : MappingKind or str, optional
        "ridge" or "net", by default "ridge"
    ridge : RidgeConfig, optional
        options of the ridge learner
    net : NetConfig, optional
        options of the net learner
    speckle_binning : int, optional
        detector binning factor, by default 1
    export_images : int, optional
        reconstructions written per evaluation family, by default 4
    output_dir : str, optional
        directory used by run_all when none is given

    Raises
    ------
    ValueError
        If an option is out of range.
    """

    def __init__(
        self,
        seed: int = 0,
        medium_kind: Union[MediumKind, str] = MediumKind.LINEAR,
        target_dims: Dims = (16, 16),
        speckle_dims: Dims = (24, 24),
        canvas_dims: Dims = (32, 32),
        canvas_speckle_dims: Dims = (40, 40),
        train_count: int = 4096,
        test_count: int = 32,
        learner: Union[MappingKind, str] = MappingKind.RIDGE_AFFINE,
        ridge: Optional[RidgeConfig] = None,
        net: Optional[NetConfig] = None,
        speckle_binning: int = 1,
        export_images: int = 4,
        output_dir: Optional[str] = None,
    ):
        try:
            self.seed = check_seed(seed)
            self.medium_kind = coerce_enum(MediumKind, medium_kind, "medium kind")
            self.learner = coerce_enum(MappingKind, learner, "learner")
            self.ridge = RidgeConfig(*(ridge or RidgeConfig())).validated()
            self.net = NetConfig(*(net or NetConfig())).validated()
        except InvalidSpecError as error:
            raise ValueError(str(error)) from error

        # generated digits need 8x8 and SSIM a 7x7 window
        self.target_dims = _config_dims(target_dims, "target_dims", 8)
        self.canvas_dims = _config_dims(canvas_dims, "canvas_dims", 8)
        self.speckle_dims = _config_dims(speckle_dims, "speckle_dims")
        self.canvas_speckle_dims = _config_dims(canvas_speckle_dims, "canvas_speckle_dims")
        for target_side, canvas_side in zip(self.target_dims, self.canvas_dims):
            spare = canvas_side - target_side
            if spare < spare // 2 + target_side // 2:
                raise ValueError(
                    f"canvas_dims {self.canvas_dims} leave no room to shift "
                    f"{self.target_dims} targets by half a side"
                )

        self.speckle_binning = int(speckle_binning)
        if self.speckle_binning < 1:
            raise ValueError("speckle_binning must be >= 1")
        for name in ("speckle_dims", "canvas_speckle_dims"):
            dims = getattr(self, name)
            if dims[0] % self.speckle_binning or dims[1] % self.speckle_binning:
                raise ValueError(f"{name} {dims} are not divisible by {self.speckle_binning}")

        self.train_count = int(train_count)
        if self.train_count < 2:
            raise ValueError("train_count must be >= 2")
        self.test_count = int(test_count)
        if self.test_count < 1:
            raise ValueError("test_count must be >= 1")
        self.export_images = int(export_images)
        if self.export_images < 0:
            raise ValueError("export_images must be >= 0")
        self.output_dir = None if output_dir is None else str(output_dir)

    @property
    def learner_config(self) -> Union[RidgeConfig, NetConfig]:
        return self.ridge if self.learner is MappingKind.RIDGE_AFFINE else self.net

    def medium_spec(self, on_canvas: bool = False) -> MediumSpec:
        """Spec of the medium of the plane (or canvas) cases."""
        if on_canvas:
            return MediumSpec(
                self.medium_kind,
                self.canvas_dims,
                self.canvas_speckle_dims,
                derive_seed(self.seed, "canvas-medium"),
            )
        return MediumSpec(
            self.medium_kind,
            self.target_dims,
            self.speckle_dims,
            derive_seed(self.seed, "medium"),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "medium_kind": self.medium_kind.value,
            "target_dims": list(self.target_dims),
            "speckle_dims": list(self.speckle_dims),
            "canvas_dims": list(self.canvas_dims),
            "canvas_speckle_dims": list(self.canvas_speckle_dims),
            "train_count": self.train_count,
            "test_count": self.test_count,
            "learner": self.learner.value,
            "ridge": self.ridge.to_dict(),
            "net": self.net.to_dict(),
            "speckle_binning": self.speckle_binning,
            "export_images": self.export_images,
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        """Create a config from a JSON object, omitted fields take defaults.

        Raises
        ------
        InvalidSpecError
            If the object has unknown fields or invalid values.
        """
        if not isinstance(data, dict):
            raise InvalidSpecError("an experiment config must be a JSON object")
        fields = dict(data)
        unknown = sorted(set(fields) - set(cls().to_dict()))
        if unknown:
            raise InvalidSpecError(f"unknown experiment config fields {unknown}")
        try:
            if fields.get("ridge") is not None:
                fields["ridge"] = RidgeConfig.from_dict(fields["ridge"])
            if fields.get("net") is not None:
                fields["net"] = NetConfig.from_dict(fields["net"])
            return cls(**fields)
        except (TypeError, ValueError) as error:
            raise InvalidSpecError(f"invalid experiment config: {error}") from error

    def with_seed(self, seed: int) -> "ExperimentConfig":
        data = self.to_dict()
        data["seed"] = seed
        return ExperimentConfig.from_dict(data)

    def with_learner(self, learner: Union[MappingKind, str]) -> "ExperimentConfig":
        data = self.to_dict()
        data["learner"] = coerce_enum(MappingKind, learner, "learner").value
        return ExperimentConfig.from_dict(data)

    @property
    def config_hash(self) -> str:
        """Hash of the resolved options, without output_dir."""
        data = self.to_dict()
        del data["output_dir"]
        payload = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    def __eq__(self, other: Any) -> bool:
        if not isinstance(other, ExperimentConfig):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __repr__(self):
        return f"<ExperimentConfig seed={self.seed} {self.medium_kind.value}/{self.learner.value}>"


def resolve_seed(flag: Optional[int], configured: int) -> int:
    """Seed precedence: command line flag, then SCATTER_SEED, then config.

    Raises
    ------
    InvalidArgumentError
        If SCATTER_SEED is not a valid seed.
    """
    if flag is not None:
        return check_seed(flag)
    env_value = os.environ.get(SEED_ENV)
    if env_value is not None and env_value.strip():
        try:
            return check_seed(env_value.strip())
        except InvalidSpecError as error:
            raise InvalidArgumentError(f"{SEED_ENV}: {error}") from error
    return configured


def load_config(path: Optional[Union[str, Path]] = None, seed: Optional[int] = None) -> ExperimentConfig:
    """Read an ExperimentConfig JSON file and apply the seed precedence."""
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as error:
            raise ScatterIOError(f"cannot read config {path}: {error}") from error
        except ValueError as error:
            raise FormatError(f"config {path} is not valid JSON: {error}") from error
    cfg = ExperimentConfig.from_dict(data)
    resolved = resolve_seed(seed, cfg.seed)
    return cfg if resolved == cfg.seed else cfg.with_seed(resolved)


class ReconImage(NamedTuple):
    """Reconstruction exported with a case report"""

    family: str
    index: int
    reconstruction: np.ndarray
    truth: np.ndarray


class CaseReport(NamedTuple):
    """Results and provenance of one case.

    ``means`` maps every evaluation family to its metric means.
    Coverage maps, images and raw reconstructions are None or empty for
    reports loaded from disk.
    """

    case: CaseId
    metrics: List[MetricReport]
    means: Dict[str, Dict[str, float]]
    config: Dict[str, Any]
    config_hash: str
    medium_fingerprint: int
    training_fingerprint: int
    disjoint: bool
    coverage_saturated: Optional[np.ndarray] = None
    coverage_normalized: Optional[np.ndarray] = None
    images: Sequence[ReconImage] = ()
    raw_reconstructions: Dict[str, np.ndarray] = {}
    untrained_max_abs: float = math.nan

    @property
    def families(self) -> List[str]:
        return list(self.means)

    def mean(self, family: str, metric: str = "pcc") -> float:
        """Mean metric of an evaluation family, NaN if absent."""
        return self.means.get(family, {}).get(metric, math.nan)

    def shifted_mean(self, metric: str = "pcc") -> float:
        """Mean metric over both shifted positions of a C5 report, NaN if one is absent."""
        return float(np.mean([self.mean(label, metric) for label in SHIFT_LABELS[1:]]))

    def provenance(self) -> Dict[str, Any]:
        return {
            "case": self.case.value,
            "config_hash": self.config_hash,
            "medium_fingerprint": self.medium_fingerprint,
            "training_fingerprint": self.training_fingerprint,
            "disjoint": self.disjoint,
            "untrained_max_abs": None
            if math.isnan(self.untrained_max_abs)
            else self.untrained_max_abs,
        }


def family_means(metrics: Sequence[MetricReport]) -> Dict[str, Dict[str, float]]:
    """Metric means per family in order of first appearance."""
    families: List[str] = []
    for report in metrics:
        if report.family not in families:
            families.append(report.family)
    return {
        family: mean_report(report for report in metrics if report.family == family)
        for family in families
    }


def _test_spec(
    cfg: ExperimentConfig,
    family: TargetFamily,
    recipe: CaseRecipe = CaseRecipe.PLAIN,
    embed_offset: Optional[Dims] = None,
) -> DatasetSpec:
    return DatasetSpec(
        family=family,
        case_recipe=recipe,
        count=cfg.test_count,
        target_dims=cfg.target_dims,
        canvas_dims=cfg.canvas_dims if recipe.embedded else None,
        seed=derive_seed(cfg.seed, "test", family.value),
        speckle_binning=cfg.speckle_binning,
        embed_offset=embed_offset,
    )


def shift_offsets(cfg: ExperimentConfig) -> List[Dims]:
    """Training offset of case 5 followed by the two shifted test offsets."""
    oy, ox = center_offset(cfg.target_dims, cfg.canvas_dims)
    half_h, half_w = cfg.target_dims[0] // 2, cfg.target_dims[1] // 2
    return [(oy, ox), (oy, ox + half_w), (oy + half_h, ox + half_w)]


def corner_offsets(cfg: ExperimentConfig) -> List[Dims]:
    """Corners of the valid offset range, row-major."""
    max_dy, max_dx = valid_offsets(cfg.target_dims, cfg.canvas_dims)
    return [(0, 0), (0, max_dx), (max_dy, 0), (max_dy, max_dx)]


def _corner_pool(cfg: ExperimentConfig, exclude: Collection[str]) -> List[TargetImage]:
    """Digit 5 targets whose corner embeddings are all absent from exclude."""
    base = derive_seed(cfg.seed, "test", "corner")
    corners = corner_offsets(cfg)
    excluded = set(exclude)
    pool = []
    for index in range(cfg.test_count):
        for attempt in range(DISJOINT_ATTEMPTS):
            digit = gen_digit(derive_seed(base, index, attempt), cfg.target_dims, SIC_GLYPH)
            hashes = {
                array_hash(embed(digit, cfg.canvas_dims, offset).values) for offset in corners
            }
            if not hashes & excluded:
                pool.append(digit)
                break
        else:
            raise ConsistencyError(
                f"no corner test digit {index} outside the training set "
                f"after {DISJOINT_ATTEMPTS} attempts"
            )
    return pool


def build_test_sets(
    case: CaseId, cfg: ExperimentConfig, medium, exclude: Collection[str]
) -> Dict[str, Dataset]:
    """Evaluation datasets of a case, keyed by evaluation family.

    Generated test targets are redrawn while their hash is in exclude.
    """
    if case is CaseId.C5:
        return {
            label: build_dataset(
                _test_spec(cfg, TargetFamily.TEXTURE, CaseRecipe.EMBEDDED_FIXED, offset),
                medium,
                exclude=exclude,
            )
            for label, offset in zip(SHIFT_LABELS, shift_offsets(cfg))
        }
    if case is CaseId.SIC:
        pool = _corner_pool(cfg, exclude)
        return {
            label: build_dataset(
                _test_spec(cfg, TargetFamily.DIGIT, CaseRecipe.EMBEDDED_FIXED, offset),
                medium,
                pool=pool,
            )
            for label, offset in zip(CORNER_LABELS, corner_offsets(cfg))
        }
    return {
        family.value: build_dataset(_test_spec(cfg, family), medium, exclude=exclude)
        for family in (TargetFamily.TEXTURE, TargetFamily.DIGIT)
    }


def check_untrained_region(report: CaseReport) -> CaseReport:
    """Record the largest raw reconstruction magnitude outside the trained region.

    The trained region are the effective pixels of the training set,
    i.e. the nonzero pixels of the saturated coverage map.

    Raises
    ------
    InvalidArgumentError
        If the report has no coverage map or no reconstructions.
    """
    if report.coverage_saturated is None or not report.raw_reconstructions:
        raise InvalidArgumentError("the report holds no coverage map or reconstructions")
    untrained = ~(report.coverage_saturated > 0)
    value = 0.0
    if np.any(untrained):
        value = max(
            float(np.max(np.abs(stack[:, untrained]))) if len(stack) else 0.0
            for stack in report.raw_reconstructions.values()
        )
    if value >= UNTRAINED_TOLERANCE:
        _LOGGER.info(
            "case %s reconstructs up to %.3g outside the trained region", report.case.value, value
        )
    return report._replace(untrained_max_abs=value)


def run_case(
    case: Union[CaseId, str],
    cfg: ExperimentConfig,
    timings: Optional[Dict[str, StageTiming]] = None,
) -> CaseReport:
    """Build, train and evaluate one case.

    Parameters
    ----------
    case : CaseId or str
        case to run
    cfg : ExperimentConfig
        options
    timings : dict, optional
        receives a StageTiming per stage

    Returns
    -------
    CaseReport
        metrics, coverage maps, exported reconstructions and provenance
    """
    case = coerce_enum(CaseId, case, "case")
    timings = {} if timings is None else timings
    family, recipe = case.training
    _LOGGER.info("running case %s (%s/%s)", case.value, family.value, recipe.value)

    with StageClock("medium", timings):
        medium = generate_medium(cfg.medium_spec(case.on_canvas).validated())
    train_spec = DatasetSpec(
        family=family,
        case_recipe=recipe,
        count=cfg.train_count,
        target_dims=cfg.target_dims,
        canvas_dims=cfg.canvas_dims if case.on_canvas else None,
        seed=derive_seed(cfg.seed, "train", case.value),
        speckle_binning=cfg.speckle_binning,
        embed_offset=shift_offsets(cfg)[0] if case is CaseId.C5 else None,
    )
    with StageClock("dataset", timings):
        training = build_dataset(train_spec, medium)
        train_hashes = {array_hash(values) for values in training.targets()}
        test_sets = build_test_sets(case, cfg, medium, train_hashes)
    with StageClock("train", timings):
        mapping = train(training, cfg.learner, cfg.learner_config)

    metrics: List[MetricReport] = []
    images: List[ReconImage] = []
    raw: Dict[str, np.ndarray] = {}
    disjoint = True
    with StageClock("evaluate", timings):
        for label, test_set in test_sets.items():
            reconstruction = predict_batch(mapping, test_set.speckles())
            raw[label] = reconstruction.raw_values
            for index, truth in enumerate(test_set.targets()):
                disjoint = disjoint and array_hash(truth) not in train_hashes
                metrics.append(
                    evaluate_pair(reconstruction.values[index], truth, label, index, case.value)
                )
                if index < cfg.export_images:
                    images.append(ReconImage(label, index, reconstruction.values[index], truth))
    with StageClock("diagnose", timings):
        saturated = superpose_saturated(training.targets()).values
        normalized = superpose_normalized(training.targets()).values

    report = CaseReport(
        case=case,
        metrics=metrics,
        means=family_means(metrics),
        config=cfg.to_dict(),
        config_hash=cfg.config_hash,
        medium_fingerprint=medium.fingerprint,
        training_fingerprint=mapping.training_fingerprint,
        disjoint=disjoint,
        coverage_saturated=saturated,
        coverage_normalized=normalized,
        images=images,
        raw_reconstructions=raw,
    )
    if case is CaseId.C5:
        report = check_untrained_region(report)
    _LOGGER.info(
        "case %s finished: %s",
        case.value,
        ", ".join(f"{label} pcc={means['pcc']:.4f}" for label, means in report.means.items()),
    )
    return report


@unique
class Relation(str, Enum):
    """Comparison of a trend row"""

    AT_LEAST = "at-least"  # left >= right
    BELOW = "below"  # left + margin <= right
    EXCEEDS = "exceeds"  # left - right >= margin
    BELOW_SHARE = "below-share"  # left < margin * right
    STRICTLY_BELOW = "strictly-below"  # left < right


class TrendRow(NamedTuple):
    """One ordinal comparison, ``criterion`` names the acceptance criterion it checks"""

    criterion: str
    left: str
    relation: Relation
    right: str
    margin: float
    left_value: float
    right_value: float
    passed: bool

    def mentions(self, case: CaseId) -> bool:
        return case.label in (self.left.split("/")[0], self.right.split("/")[0])


class TrendTable(NamedTuple):
    """Ordered trend rows of a comparison"""

    rows: List[TrendRow]

    @property
    def passed(self) -> bool:
        return all(row.passed for row in self.rows)

    def failed(self) -> List[TrendRow]:
        return [row for row in self.rows if not row.passed]

    def for_case(self, case: CaseId) -> "TrendTable":
        return TrendTable([row for row in self.rows if row.mentions(case)])


def _trend_row(
    criterion: str,
    left: str,
    relation: Relation,
    right: str,
    left_value: float,
    right_value: float,
    margin: float = 0.0,
) -> TrendRow:
    if math.isnan(left_value) or math.isnan(right_value):
        passed = False
    elif relation is Relation.AT_LEAST:
        passed = left_value >= right_value
    elif relation is Relation.BELOW:
        passed = left_value + margin <= right_value
    elif relation is Relation.EXCEEDS:
        passed = left_value - right_value >= margin
    elif relation is Relation.STRICTLY_BELOW:
        passed = left_value < right_value
    else:
        passed = left_value < margin * right_value
    return TrendRow(criterion, left, relation, right, margin, left_value, right_value, passed)


def compare_cases(reports: Sequence[CaseReport]) -> TrendTable:
    """Evaluate the ordinal trends between case reports.

    Rows are only created for cases present in reports. Fewer than two
    reports give an empty table. The diversity ladder rows need reports of
    the network learner.

    Parameters
    ----------
    reports : Sequence[CaseReport]
        reports of one config

    Returns
    -------
    TrendTable
        comparisons in a fixed order

    Raises
    ------
    ConsistencyError
        If the reports come from different configs or a case repeats.
    """
    if len(reports) < 2:
        return TrendTable([])
    hashes = sorted({report.config_hash for report in reports})
    if len(hashes) > 1:
        raise ConsistencyError(f"reports come from different configs {hashes}")
    by_case: Dict[CaseId, CaseReport] = {}
    for report in reports:
        if report.case in by_case:
            raise ConsistencyError(f"case {report.case.value} is reported twice")
        by_case[report.case] = report
    plane_media = {by_case[case].medium_fingerprint for case in PLANE_CASES if case in by_case}
    if len(plane_media) > 1:
        raise ConsistencyError("reports of cases 1-4 come from different media")

    def name(case: CaseId, family: str) -> str:
        return f"{case.label}/{family}"

    def texture(case: CaseId) -> float:
        return by_case[case].mean(TargetFamily.TEXTURE.value)

    def network(case: CaseId) -> bool:
        return by_case[case].config.get("learner") == MappingKind.SMALL_NET.value

    rows = []
    if CaseId.C1 in by_case:
        for family in (TargetFamily.TEXTURE.value, TargetFamily.DIGIT.value):
            rows.append(
                _trend_row(
                    "1",
                    name(CaseId.C1, family),
                    Relation.AT_LEAST,
                    f"{FULL_COVERAGE_FLOOR}",
                    by_case[CaseId.C1].mean(family),
                    FULL_COVERAGE_FLOOR,
                )
            )
    if CaseId.C1 in by_case and CaseId.C2 in by_case:
        rows.append(
            _trend_row(
                "2",
                name(CaseId.C1, "texture"),
                Relation.EXCEEDS,
                name(CaseId.C2, "texture"),
                texture(CaseId.C1),
                texture(CaseId.C2),
                ASYMMETRY_MARGIN,
            )
        )
    for case in PLANE_CASES:
        if case in by_case:
            rows.append(
                _trend_row(
                    "2",
                    name(case, "digit"),
                    Relation.AT_LEAST,
                    f"{DIGIT_FLOOR}",
                    by_case[case].mean(TargetFamily.DIGIT.value),
                    DIGIT_FLOOR,
                )
            )
    # ladder rows compare network reports only
    for lower, higher in ((CaseId.C2, CaseId.C3), (CaseId.C3, CaseId.C4B), (CaseId.C2, CaseId.C4A)):
        if lower in by_case and higher in by_case and network(lower) and network(higher):
            rows.append(
                _trend_row(
                    "3",
                    name(lower, "texture"),
                    Relation.BELOW,
                    name(higher, "texture"),
                    texture(lower),
                    texture(higher),
                    DIVERSITY_MARGIN,
                )
            )
    if CaseId.C5 in by_case:
        shifted = by_case[CaseId.C5]
        ridge = shifted.config.get("learner") == MappingKind.RIDGE_AFFINE.value
        if ridge and not math.isnan(shifted.untrained_max_abs):
            rows.append(
                _trend_row(
                    "4",
                    name(CaseId.C5, "untrained"),
                    Relation.STRICTLY_BELOW,
                    f"{UNTRAINED_TOLERANCE}",
                    shifted.untrained_max_abs,
                    UNTRAINED_TOLERANCE,
                )
            )
        rows.append(
            _trend_row(
                "5",
                name(CaseId.C5, SHIFTED_LABEL),
                Relation.BELOW_SHARE,
                name(CaseId.C5, SHIFT_LABELS[0]),
                shifted.shifted_mean(),
                shifted.mean(SHIFT_LABELS[0]),
                SHIFT_SHARE,
            )
        )
    if CaseId.SIC in by_case:
        for label in CORNER_LABELS:
            rows.append(
                _trend_row(
                    "5",
                    name(CaseId.SIC, label),
                    Relation.AT_LEAST,
                    f"{CORNER_FLOOR}",
                    by_case[CaseId.SIC].mean(label),
                    CORNER_FLOOR,
                )
            )
    table = TrendTable(rows)
    _LOGGER.info("%d of %d trend rows passed", len(rows) - len(table.failed()), len(rows))
    return table


class SummaryRow(NamedTuple):
    """Metric means of one (case, family) pair"""

    case: str
    family: str
    count: int
    pcc: float
    ssim: float
    cosine: float
    dice: float


def summarize_reports(reports: Sequence[CaseReport]) -> List[SummaryRow]:
    """One row per case and evaluation family, cases in CaseId order."""
    order = list(CaseId)
    rows = []
    for report in sorted(reports, key=lambda report: order.index(report.case)):
        for family, means in report.means.items():
            count = sum(1 for metric in report.metrics if metric.family == family)
            rows.append(
                SummaryRow(
                    report.case.value, family, count, *(means[name] for name in METRIC_NAMES)
                )
            )
    return rows


def run_all(
    cfg: ExperimentConfig, output_dir: Optional[Union[str, Path]] = None
) -> Tuple[List[CaseReport], TrendTable]:
    """Run every case, compare them and write all reports.

    Every case goes to ``<output_dir>/case-<id>``; the comparison is
    written as trend.csv and summary.csv into output_dir. With the ridge
    learner the ladder cases are run a second time with the network and
    written to ``<output_dir>/case-<id>-net``; the ladder rows of the
    returned table come from those reruns.

    Raises
    ------
    InvalidArgumentError
        If neither output_dir nor cfg.output_dir is set.
    """
    # io.report depends on the types of this module
    from scattersim.io.report import emit_report, write_summary_csv, write_trend_csv

    target = output_dir if output_dir is not None else cfg.output_dir
    if target is None:
        raise InvalidArgumentError("run_all needs an output directory")
    target = Path(target)
    reports = []
    all_timings = {}
    for case in CaseId:
        timings: Dict[str, StageTiming] = {}
        reports.append(run_case(case, cfg, timings))
        all_timings[case] = timings
    table = compare_cases(reports)
    for report in reports:
        emit_report(
            report,
            target / f"case-{report.case.value}",
            table.for_case(report.case),
            all_timings[report.case],
        )
    if cfg.learner is not MappingKind.SMALL_NET:
        ladder_cfg = cfg.with_learner(MappingKind.SMALL_NET)
        ladder_reports = []
        ladder_timings: Dict[CaseId, Dict[str, StageTiming]] = {}
        for case in LADDER_CASES:
            ladder_timings[case] = {}
            ladder_reports.append(run_case(case, ladder_cfg, ladder_timings[case]))
        ladder = TrendTable(
            [row for row in compare_cases(ladder_reports).rows if row.criterion == "3"]
        )
        for report in ladder_reports:
            emit_report(
                report,
                target / f"case-{report.case.value}-net",
                ladder.for_case(report.case),
                ladder_timings[report.case],
            )
        table = TrendTable(sorted(table.rows + ladder.rows, key=lambda row: row.criterion))
    write_trend_csv(table, target / "trend.csv")
    write_summary_csv(summarize_reports(reports), target / "summary.csv")
    _LOGGER.info("all cases written to %s", target)
    return reports, table
