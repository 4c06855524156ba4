"""Module for building paired (target, speckle) datasets."""
import logging
from enum import Enum, unique
from typing import (
    Any,
    Collection,
    Dict,
    Iterator,
    List,
    NamedTuple,
    Optional,
    Sequence,
    Tuple,
)

import numpy as np

from scattersim.datasets.generators import (
    TargetFamily,
    TargetImage,
    generate_target,
)
from scattersim.datasets.transforms import (
    ENLARGE_FACTOR,
    AmplitudeMode,
    ModulationParams,
    center_offset,
    embed,
    enlarge_center_crop,
    modulate,
    superpose_targets,
    valid_offsets,
)
from scattersim.media import (
    SpecklePattern,
    TransmissionMedium,
    bin_values,
    propagate_batch,
)
from scattersim.util import (
    ConsistencyError,
    Dims,
    InvalidSpecError,
    ShapeError,
    array_hash,
    check_dims,
    check_seed,
    coerce_enum,
    derive_seed,
    fingerprint,
    make_rng,
)

_LOGGER = logging.getLogger(__name__)

DISJOINT_ATTEMPTS = 1000


@unique
class CaseRecipe(str, Enum):
    """Transformation pipeline applied to every generated target"""

    PLAIN = "plain"
    ENLARGED = "enlarged"
    MOD_A = "mod-a"
    MOD_B = "mod-b"
    MOD_C = "mod-c"
    EMBEDDED_FIXED = "embed-fixed"
    EMBEDDED_RANDOM = "embed-random"

    @property
    def embedded(self) -> bool:
        return self in (CaseRecipe.EMBEDDED_FIXED, CaseRecipe.EMBEDDED_RANDOM)


class DatasetSpec(NamedTuple):
    """Everything needed to regenerate a dataset for a given medium.

    ``texture_exposure`` is the range of the per-item gain applied to
    TEXTURE targets, ``speckle_binning`` the detector binning factor and
    ``embed_offset`` the EMBEDDED_FIXED offset (None centers the target).
    """

    family: TargetFamily
    case_recipe: CaseRecipe
    count: int
    target_dims: Dims
    canvas_dims: Optional[Dims] = None
    seed: int = 0
    speckle_binning: int = 1
    texture_exposure: Tuple[float, float] = (1.0, 1.0)
    embed_offset: Optional[Dims] = None

    @property
    def plane_dims(self) -> Dims:
        """Dims of the images that are propagated."""
        if CaseRecipe(self.case_recipe).embedded:
            return self.canvas_dims if self.canvas_dims is not None else self.target_dims
        return self.target_dims

    def validated(self) -> "DatasetSpec":
        """Return a normalized copy of this spec.

        Raises
        ------
        InvalidSpecError
            If a field violates its invariants.
        """
        family = coerce_enum(TargetFamily, self.family, "target family")
        recipe = coerce_enum(CaseRecipe, self.case_recipe, "case recipe")
        try:
            count = int(self.count)
        except (TypeError, ValueError) as error:
            raise InvalidSpecError(f"count must be an integer, got {self.count!r}") from error
        if count < 0:
            raise InvalidSpecError(f"count must be >= 0, got {count}")
        target_dims = check_dims(self.target_dims, "target_dims")
        canvas_dims = check_dims(
            target_dims if self.canvas_dims is None else self.canvas_dims, "canvas_dims"
        )
        if canvas_dims[0] < target_dims[0] or canvas_dims[1] < target_dims[1]:
            raise InvalidSpecError(
                f"canvas_dims {canvas_dims} must be >= target_dims {target_dims}"
            )
        binning = int(self.speckle_binning)
        if binning < 1:
            raise InvalidSpecError(f"speckle_binning must be >= 1, got {binning}")
        low, high = (float(value) for value in self.texture_exposure)
        if not 0.0 < low <= high <= 1.0:
            raise InvalidSpecError(
                f"texture_exposure must satisfy 0 < low <= high <= 1, got {(low, high)}"
            )
        offset = None
        if self.embed_offset is not None:
            offset = tuple(int(value) for value in self.embed_offset)
            max_dy, max_dx = valid_offsets(target_dims, canvas_dims)
            if len(offset) != 2 or not (0 <= offset[0] <= max_dy and 0 <= offset[1] <= max_dx):
                raise InvalidSpecError(f"embed_offset {offset} is outside the canvas")
        return DatasetSpec(
            family=family,
            case_recipe=recipe,
            count=count,
            target_dims=target_dims,
            canvas_dims=canvas_dims,
            seed=check_seed(self.seed),
            speckle_binning=binning,
            texture_exposure=(low, high),
            embed_offset=offset,
        )

    def to_dict(self) -> Dict[str, Any]:
        spec = self.validated()
        return {
            "family": spec.family.value,
            "case_recipe": spec.case_recipe.value,
            "count": spec.count,
            "target_dims": list(spec.target_dims),
            "canvas_dims": list(spec.canvas_dims),
            "seed": spec.seed,
            "speckle_binning": spec.speckle_binning,
            "texture_exposure": list(spec.texture_exposure),
            "embed_offset": None if spec.embed_offset is None else list(spec.embed_offset),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DatasetSpec":
        try:
            fields = {key: data[key] for key in cls._fields if key in data}
            spec = cls(**fields)
        except TypeError as error:
            raise InvalidSpecError(f"incomplete dataset spec: {error}") from error
        return spec.validated()


def dataset_fingerprint(spec: DatasetSpec, medium_fingerprint: int) -> int:
    """Training fingerprint of a dataset built from spec on a medium."""
    return fingerprint("dataset", spec.to_dict(), int(medium_fingerprint))


class Dataset:
    """Immutable sequence of (TargetImage, SpecklePattern) pairs.

    Targets and speckles are kept as stacked read-only arrays.

    Parameters
    ----------
    spec : DatasetSpec
        spec the dataset was built from
    medium_fingerprint : int
        fingerprint of the medium used for propagation
    targets : np.ndarray
        N x h x w targets
    speckles : np.ndarray
        N x sh x sw speckles
    gen_seeds : Sequence[int], optional
        generator seed of each target
    labels : Sequence[int], optional
        digit label of each target, -1 if unknown
    """

    def __init__(
        self,
        spec: DatasetSpec,
        medium_fingerprint: int,
        targets: np.ndarray,
        speckles: np.ndarray,
        gen_seeds: Optional[Sequence[Optional[int]]] = None,
        labels: Optional[Sequence[int]] = None,
    ) -> None:
        targets = np.array(targets, dtype=np.float64)
        speckles = np.array(speckles, dtype=np.float64)
        if targets.ndim != 3 or speckles.ndim != 3 or len(targets) != len(speckles):
            raise ShapeError(
                f"targets {targets.shape} and speckles {speckles.shape} "
                "must be stacks of equal length"
            )
        count = len(targets)
        targets.setflags(write=False)
        speckles.setflags(write=False)
        self._spec = spec
        self._medium_fingerprint = int(medium_fingerprint)
        self._targets = targets
        self._speckles = speckles
        self._gen_seeds = list(gen_seeds) if gen_seeds is not None else [None] * count
        self._labels = list(labels) if labels is not None else [-1] * count

    @classmethod
    def from_arrays(
        cls,
        targets: Any,
        speckles: Any,
        spec: Optional[DatasetSpec] = None,
        medium_fingerprint: int = 0,
    ) -> "Dataset":
        """Wrap existing arrays, e.g. loaded data or hand made systems."""
        targets = np.asarray(targets, dtype=np.float64)
        if spec is None:
            spec = DatasetSpec(
                family=TargetFamily.EXTERNAL,
                case_recipe=CaseRecipe.PLAIN,
                count=len(targets),
                target_dims=targets.shape[1:] if targets.ndim == 3 else (1, 1),
            )
        return cls(spec, medium_fingerprint, targets, speckles)

    @property
    def spec(self) -> DatasetSpec:
        return self._spec

    @property
    def medium_fingerprint(self) -> int:
        return self._medium_fingerprint

    @property
    def fingerprint(self) -> int:
        return dataset_fingerprint(self._spec, self._medium_fingerprint)

    @property
    def target_dims(self) -> Dims:
        return self._targets.shape[1:]

    @property
    def speckle_dims(self) -> Dims:
        return self._speckles.shape[1:]

    @property
    def labels(self) -> List[int]:
        return list(self._labels)

    def targets(self) -> np.ndarray:
        return self._targets

    def speckles(self) -> np.ndarray:
        return self._speckles

    def target(self, index: int) -> TargetImage:
        label = self._labels[index]
        return TargetImage(
            values=self._targets[index],
            family=TargetFamily(self._spec.family),
            gen_seed=self._gen_seeds[index],
            label=None if label < 0 else label,
        )

    def speckle(self, index: int) -> SpecklePattern:
        return SpecklePattern(self._speckles[index], self._medium_fingerprint)

    @property
    def pairs(self) -> List[Tuple[TargetImage, SpecklePattern]]:
        return list(self)

    def __len__(self) -> int:
        return len(self._targets)

    def __getitem__(self, index: int) -> Tuple[TargetImage, SpecklePattern]:
        if not -len(self) <= index < len(self):
            raise IndexError(f"dataset index {index} out of range")
        index %= len(self)
        return self.target(index), self.speckle(index)

    def __iter__(self) -> Iterator[Tuple[TargetImage, SpecklePattern]]:
        for index in range(len(self)):
            yield self[index]

    def __repr__(self) -> str:
        spec = self._spec
        return (
            f"<Dataset {TargetFamily(spec.family).value}/"
            f"{CaseRecipe(spec.case_recipe).value} n={len(self)}>"
        )


def _base_target(
    spec: DatasetSpec,
    item_seed: int,
    index: int,
    pool: Optional[Sequence[TargetImage]],
) -> TargetImage:
    if pool:
        target = pool[index % len(pool)]
        if target.values.shape != tuple(spec.target_dims):
            raise ShapeError(
                f"pooled target dims {target.values.shape} differ from "
                f"target_dims {tuple(spec.target_dims)}"
            )
        return target._replace(family=spec.family)
    if spec.family is TargetFamily.EXTERNAL:
        raise InvalidSpecError("EXTERNAL datasets need a pool of loaded targets")
    target = generate_target(spec.family, item_seed, spec.target_dims)
    low, high = spec.texture_exposure
    if spec.family is TargetFamily.TEXTURE and low < 1.0:
        gain = make_rng(item_seed, "exposure").uniform(low, high)
        target = target._replace(values=target.values * gain)
    return target


def make_item(
    spec: DatasetSpec,
    item_seed: int,
    index: int = 0,
    pool: Optional[Sequence[TargetImage]] = None,
) -> TargetImage:
    """Generate one target of spec and run it through the case recipe."""
    target = _base_target(spec, item_seed, index, pool)
    recipe = spec.case_recipe
    if recipe is CaseRecipe.PLAIN:
        return target
    if recipe is CaseRecipe.ENLARGED:
        return enlarge_center_crop(target, ENLARGE_FACTOR)
    if recipe in (CaseRecipe.MOD_A, CaseRecipe.MOD_B, CaseRecipe.MOD_C):
        if recipe is CaseRecipe.MOD_C:
            second = _base_target(spec, derive_seed(item_seed, "second"), index + 1, pool)
            target = superpose_targets(target, second)
        mode = AmplitudeMode.FIXED_ONE if recipe is CaseRecipe.MOD_A else AmplitudeMode.UNIFORM
        params = ModulationParams(
            amplitude_mode=mode, phase_seed=derive_seed(item_seed, "modulation")
        )
        return modulate(enlarge_center_crop(target, ENLARGE_FACTOR), params)
    if recipe is CaseRecipe.EMBEDDED_FIXED:
        offset = spec.embed_offset or center_offset(spec.target_dims, spec.canvas_dims)
        return embed(target, spec.canvas_dims, offset)
    rng = make_rng(item_seed, "placement")
    max_dy, max_dx = valid_offsets(spec.target_dims, spec.canvas_dims)
    offset = (int(rng.integers(max_dy + 1)), int(rng.integers(max_dx + 1)))
    return embed(target, spec.canvas_dims, offset)


def build_dataset(
    spec: DatasetSpec,
    medium: TransmissionMedium,
    pool: Optional[Sequence[TargetImage]] = None,
    exclude: Optional[Collection[str]] = None,
) -> Dataset:
    """Generate targets for spec and propagate them through medium.

    Item i is generated from the seed derived from (spec.seed, i), so
    items are independent of each other and of the count.

    Parameters
    ----------
    spec : DatasetSpec
        dataset description
    medium : TransmissionMedium
        medium whose in_dims equal the propagated plane dims
    pool : Sequence[TargetImage], optional
        loaded targets used instead of generated ones (item i takes
        pool[i mod len(pool)]), required for the EXTERNAL family
    exclude : Collection[str], optional
        :func:`scattersim.util.array_hash` values of targets that must not
        be produced; generated items are redrawn until they differ

    Returns
    -------
    Dataset
        spec.count pairs

    Raises
    ------
    ShapeError
        If the plane dims do not match the medium.
    ConsistencyError
        If no excluded-free item is found for an index.
    """
    spec = DatasetSpec(*spec).validated()
    plane = tuple(spec.plane_dims)
    if plane != tuple(medium.in_dims):
        raise ShapeError(
            f"{spec.case_recipe.value} targets of {plane} do not fit a medium "
            f"with in_dims {tuple(medium.in_dims)}"
        )
    targets = np.zeros((spec.count,) + plane, dtype=np.float64)
    gen_seeds: List[Optional[int]] = []
    labels: List[int] = []
    for index in range(spec.count):
        item_seed = derive_seed(spec.seed, index)
        item = make_item(spec, item_seed, index, pool)
        attempt = 0
        while exclude and not pool and array_hash(item.values) in exclude:
            attempt += 1
            if attempt >= DISJOINT_ATTEMPTS:
                raise ConsistencyError(
                    f"no target for item {index} outside the excluded set "
                    f"after {DISJOINT_ATTEMPTS} attempts"
                )
            item_seed = derive_seed(spec.seed, index, attempt)
            item = make_item(spec, item_seed, index, pool)
        if attempt:
            _LOGGER.debug("item %d redrawn %d times to stay disjoint", index, attempt)
        targets[index] = item.values
        gen_seeds.append(item.gen_seed)
        labels.append(-1 if item.label is None else int(item.label))
    speckles = propagate_batch(medium, targets)
    if spec.speckle_binning > 1:
        speckles = bin_values(speckles, spec.speckle_binning)
    _LOGGER.info(
        "built %s/%s dataset with %d pairs",
        spec.family.value,
        spec.case_recipe.value,
        spec.count,
    )
    return Dataset(spec, medium.fingerprint, targets, speckles, gen_seeds, labels)
