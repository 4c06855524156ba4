"""Target transformations used by the case recipes."""
import logging
import math
from enum import Enum, unique
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np
import scipy.ndimage
from pyamapping import linlin

from scattersim.datasets.generators import TargetImage, is_binary
from scattersim.util import (
    Dims,
    InvalidArgumentError,
    ScatterSimError,
    ShapeError,
    check_dims,
    make_rng,
)

_LOGGER = logging.getLogger(__name__)

ENLARGE_FACTOR = 1.5
BINARY_THRESHOLD = 0.5
DEFAULT_CYCLES = (4.0, 8.0 / 3.0)


class InvalidOffsetError(ScatterSimError):
    """Raised when a target does not fit into its canvas at an offset."""

    category = "argument"


@unique
class AmplitudeMode(str, Enum):
    """How the modulation amplitude A is chosen"""

    FIXED_ONE = "fixed-one"
    UNIFORM = "uniform"


class ModulationParams(NamedTuple):
    """Distribution of the periodic grayscale sheet"""

    amplitude_mode: AmplitudeMode = AmplitudeMode.FIXED_ONE
    cycles_choices_x: Tuple[float, ...] = DEFAULT_CYCLES
    cycles_choices_y: Tuple[float, ...] = DEFAULT_CYCLES
    phase_seed: int = 0


class ModulationSample(NamedTuple):
    """One drawn sheet: amplitude, cycles per image side and phases"""

    amplitude: float
    cycles_x: float
    cycles_y: float
    phase_x: float
    phase_y: float


def sample_modulation(params: ModulationParams) -> ModulationSample:
    """Draw amplitude, spatial frequencies and phases from params.

    Raises
    ------
    InvalidArgumentError
        If a cycles choice set is empty.
    """
    if not params.cycles_choices_x or not params.cycles_choices_y:
        raise InvalidArgumentError("cycles choices must not be empty")
    rng = make_rng(params.phase_seed, "modulation")
    mode = AmplitudeMode(params.amplitude_mode)
    # 1 - U[0, 1) lies in (0, 1]
    amplitude = 1.0 if mode is AmplitudeMode.FIXED_ONE else 1.0 - rng.random()
    cycles_x = float(params.cycles_choices_x[rng.integers(len(params.cycles_choices_x))])
    cycles_y = float(params.cycles_choices_y[rng.integers(len(params.cycles_choices_y))])
    phase_x, phase_y = rng.uniform(0.0, 2.0 * math.pi, size=2)
    return ModulationSample(amplitude, cycles_x, cycles_y, float(phase_x), float(phase_y))


def modulation_sheet(dims: Dims, sample: ModulationSample) -> np.ndarray:
    """Rescaled sheet ``(P + 2A) / 4A`` with ``P = A (sin(kx x + px) + sin(ky y + py))``.

    x is the column and y the row index, ``kx = 2 pi cycles_x / width``
    and ``ky = 2 pi cycles_y / height``. The result lies in [0, 1].
    """
    height, width = check_dims(dims)
    if not sample.amplitude > 0:
        raise InvalidArgumentError(f"amplitude must be > 0, got {sample.amplitude}")
    k_x = 2.0 * math.pi * sample.cycles_x / width
    k_y = 2.0 * math.pi * sample.cycles_y / height
    rows, cols = np.mgrid[0:height, 0:width]
    raw = sample.amplitude * (
        np.sin(k_x * cols + sample.phase_x) + np.sin(k_y * rows + sample.phase_y)
    )
    positive = linlin(raw, -2.0 * sample.amplitude, 2.0 * sample.amplitude, 0.0, 1.0)
    return np.clip(positive, 0.0, 1.0)


def modulate(
    target: TargetImage,
    params: ModulationParams,
    sample: Optional[ModulationSample] = None,
) -> TargetImage:
    """Multiply a target with a periodic two-sine sheet.

    Parameters
    ----------
    target : TargetImage
        image to modulate
    params : ModulationParams
        sheet distribution, used when no sample is given
    sample : ModulationSample, optional
        use this sheet instead of drawing one

    Returns
    -------
    TargetImage
        ``target * sheet``, same family and seed as target
    """
    if sample is None:
        sample = sample_modulation(params)
    sheet = modulation_sheet(target.values.shape, sample)
    _LOGGER.debug("modulating with %s", sample)
    return target._replace(values=target.values * sheet)


def enlarge_center_crop(target: TargetImage, factor: float = ENLARGE_FACTOR) -> TargetImage:
    """Bilinearly enlarge a target and crop its center back to the original dims.

    Binary inputs are re-binarized at 0.5.

    Raises
    ------
    InvalidArgumentError
        If factor < 1.
    """
    if not factor >= 1.0:
        raise InvalidArgumentError(f"enlargement factor must be >= 1, got {factor}")
    values = target.values
    if factor == 1.0:
        return target._replace(values=values.copy())
    height, width = values.shape
    zoomed = scipy.ndimage.zoom(values, factor, order=1, mode="nearest", grid_mode=True)
    top = (zoomed.shape[0] - height) // 2
    left = (zoomed.shape[1] - width) // 2
    cropped = zoomed[top : top + height, left : left + width]
    if is_binary(values):
        cropped = (cropped >= BINARY_THRESHOLD).astype(np.float64)
    else:
        cropped = np.clip(cropped, 0.0, 1.0)
    return target._replace(values=cropped)


def superpose_targets(first: TargetImage, second: TargetImage) -> TargetImage:
    """Clipped sum ``min(a + b, 1)`` of two targets.

    Raises
    ------
    ShapeError
        If the dims differ.
    """
    if first.values.shape != second.values.shape:
        raise ShapeError(
            f"cannot superpose {first.values.shape} and {second.values.shape}"
        )
    values = np.minimum(first.values + second.values, 1.0)
    return TargetImage(values=values, family=first.family, gen_seed=first.gen_seed)


def valid_offsets(target_dims: Dims, canvas_dims: Dims) -> Dims:
    """Largest (dy, dx) at which a target still fits on the canvas."""
    return canvas_dims[0] - target_dims[0], canvas_dims[1] - target_dims[1]


def center_offset(target_dims: Dims, canvas_dims: Dims) -> Dims:
    max_dy, max_dx = valid_offsets(target_dims, canvas_dims)
    return max_dy // 2, max_dx // 2


def embed(target: TargetImage, canvas_dims: Dims, offset: Sequence[int]) -> TargetImage:
    """Copy a target onto a zero canvas at offset (dy, dx).

    Raises
    ------
    InvalidOffsetError
        If the target does not fit at offset.
    """
    canvas_dims = check_dims(canvas_dims, "canvas_dims")
    dy, dx = (int(value) for value in offset)
    height, width = target.values.shape
    max_dy, max_dx = valid_offsets((height, width), canvas_dims)
    if not (0 <= dy <= max_dy and 0 <= dx <= max_dx):
        raise InvalidOffsetError(
            f"offset ({dy}, {dx}) places a {height}x{width} target outside "
            f"the {canvas_dims[0]}x{canvas_dims[1]} canvas"
        )
    canvas = np.zeros(canvas_dims, dtype=np.float64)
    canvas[dy : dy + height, dx : dx + width] = target.values
    return target._replace(values=canvas)
