"""Procedural target generators.

``gen_digit`` draws binary glyphs that stay clear of the frame border,
``gen_texture`` draws blurred noise with an exactly uniform value histogram.
"""
import logging
import math
import sys
from enum import Enum, unique
from functools import lru_cache
from typing import Any, NamedTuple, Optional, Tuple

if sys.version_info < (3, 9):
    # `importlib.resources` backported to PY<37 as `importlib_resources`.
    import importlib_resources as libresources
else:
    # only PY>=39 `importlib.resources` offers .files.
    import importlib.resources as libresources

import numpy as np
import scipy.ndimage
from pyamapping import linlin

import scattersim.resources
from scattersim.util import (
    Dims,
    InvalidArgumentError,
    InvalidSpecError,
    check_dims,
    coerce_enum,
    make_rng,
)

_LOGGER = logging.getLogger(__name__)

MIN_GENERATED_SIDE = 8
GLYPH_SHAPE = (7, 5)
GLYPH_BOX_RANGE = (0.5, 0.8)
DILATION_PROBABILITY = 0.5
TEXTURE_SIGMA_RANGE = (1.0, 2.0)
TEXTURE_VALUE_RANGE = (0.02, 1.0)


@unique
class TargetFamily(str, Enum):
    """Origin of target images"""

    DIGIT = "digit"
    TEXTURE = "texture"
    EXTERNAL = "external"


class TargetImage(NamedTuple):
    """Object plane image with values in [0, 1]"""

    values: np.ndarray
    family: TargetFamily
    gen_seed: Optional[int] = None
    label: Optional[int] = None

    @property
    def dims(self) -> Dims:
        return self.values.shape

    def is_binary(self) -> bool:
        return is_binary(self.values)


def is_binary(values: np.ndarray) -> bool:
    """True if every value is exactly 0 or 1."""
    return bool(np.all((values == 0.0) | (values == 1.0)))


def make_target(
    values: Any,
    family: Any = TargetFamily.EXTERNAL,
    gen_seed: Optional[int] = None,
    label: Optional[int] = None,
) -> TargetImage:
    """Create a validated TargetImage.

    Raises
    ------
    InvalidArgumentError
        If values is not a 2D array in [0, 1].
    """
    array = np.array(values, dtype=np.float64)
    if array.ndim != 2:
        raise InvalidArgumentError(f"targets are 2D images, got shape {array.shape}")
    if array.size and (
        not np.all(np.isfinite(array)) or array.min() < 0.0 or array.max() > 1.0
    ):
        raise InvalidArgumentError("target values must lie in [0, 1]")
    return TargetImage(
        values=array,
        family=coerce_enum(TargetFamily, family, "target family"),
        gen_seed=gen_seed,
        label=label,
    )


def _parse_glyphs(text: str) -> Tuple[np.ndarray, ...]:
    rows = {}
    current = None
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.endswith(":"):
            current = int(line[:-1])
            rows[current] = []
        elif current is None:
            raise ValueError("glyph rows before the first glyph label")
        else:
            rows[current].append([char == "X" for char in line])
    glyphs = []
    for digit in range(10):
        glyph = np.array(rows[digit], dtype=bool)
        if glyph.shape != GLYPH_SHAPE:
            raise ValueError(f"glyph {digit} has shape {glyph.shape}")
        glyph.setflags(write=False)
        glyphs.append(glyph)
    return tuple(glyphs)


@lru_cache(maxsize=None)
def load_glyphs() -> Tuple[np.ndarray, ...]:
    """Load the ten built-in 5x7 digit bitmaps (rows x cols = 7 x 5)."""
    ref = libresources.files(scattersim.resources) / "glyphs.txt"
    return _parse_glyphs(ref.read_text(encoding="utf-8"))


def border_width(side: int) -> int:
    """Width of the always-dark border ring (12.5% of the side, rounded up)."""
    return math.ceil(side / 8)


def scale_nearest(mask: np.ndarray, dims: Dims) -> np.ndarray:
    """Nearest neighbour scaling of a 2D array to dims."""
    rows = np.floor((np.arange(dims[0]) + 0.5) * mask.shape[0] / dims[0]).astype(int)
    cols = np.floor((np.arange(dims[1]) + 0.5) * mask.shape[1] / dims[1]).astype(int)
    return mask[np.ix_(rows, cols)]


def gen_digit(seed: int, dims: Dims, glyph: Optional[int] = None) -> TargetImage:
    """Generate a binary digit surrogate.

    Parameters
    ----------
    seed : int
        generator seed
    dims : Dims
        image (height, width), at least 8x8
    glyph : int, optional
        force this digit instead of drawing one

    Returns
    -------
    TargetImage
        binary DIGIT image, labelled with its digit

    Raises
    ------
    InvalidSpecError
        If dims are smaller than 8x8.
    """
    height, width = check_dims(dims, minimum=MIN_GENERATED_SIDE)
    rng = make_rng(seed, "digit")
    digit = int(rng.integers(10))
    if glyph is not None:
        if glyph not in range(10):
            raise InvalidArgumentError(f"glyph must be a digit 0-9, got {glyph}")
        digit = int(glyph)

    ring_y, ring_x = border_width(height), border_width(width)
    inner_h, inner_w = height - 2 * ring_y, width - 2 * ring_x
    side = rng.uniform(*GLYPH_BOX_RANGE) * min(height, width)
    box_h = int(min(max(round(side), 1), inner_h))
    box_w = int(min(max(round(box_h * GLYPH_SHAPE[1] / GLYPH_SHAPE[0]), 1), inner_w))
    dy = ring_y + int(rng.integers(inner_h - box_h + 1))
    dx = ring_x + int(rng.integers(inner_w - box_w + 1))
    dilate = rng.random() < DILATION_PROBABILITY

    mask = np.zeros((height, width), dtype=bool)
    mask[dy : dy + box_h, dx : dx + box_w] = scale_nearest(
        load_glyphs()[digit], (box_h, box_w)
    )
    if dilate:
        mask = scipy.ndimage.binary_dilation(mask)
    mask[:ring_y, :] = False
    mask[height - ring_y :, :] = False
    mask[:, :ring_x] = False
    mask[:, width - ring_x :] = False
    return TargetImage(
        values=mask.astype(np.float64),
        family=TargetFamily.DIGIT,
        gen_seed=seed,
        label=digit,
    )


def texture_grid(pixels: int) -> np.ndarray:
    """Sorted texture values: the uniform grid k/(N+1), k=1..N, mapped into (0.02, 1)."""
    grid = np.arange(1, pixels + 1, dtype=np.float64) / (pixels + 1)
    return linlin(grid, 0.0, 1.0, *TEXTURE_VALUE_RANGE)


def gen_texture(seed: int, dims: Dims) -> TargetImage:
    """Generate a grayscale texture with a flat value histogram.

    White noise is Gaussian filtered (sigma drawn from [1, 2] px, reflective
    boundary) and rank transformed, so the pixel values are an exact
    permutation of :func:`texture_grid`.

    Parameters
    ----------
    seed : int
        generator seed
    dims : Dims
        image (height, width), at least 8x8

    Returns
    -------
    TargetImage
        TEXTURE image with every value in (0.02, 1.0)
    """
    height, width = check_dims(dims, minimum=MIN_GENERATED_SIDE)
    rng = make_rng(seed, "texture")
    sigma = rng.uniform(*TEXTURE_SIGMA_RANGE)
    noise = rng.standard_normal((height, width))
    smooth = scipy.ndimage.gaussian_filter(noise, sigma, mode="reflect")
    order = np.argsort(smooth, axis=None, kind="stable")
    ranks = np.empty(order.size, dtype=np.intp)
    ranks[order] = np.arange(order.size)
    values = texture_grid(order.size)[ranks].reshape(height, width)
    return TargetImage(values=values, family=TargetFamily.TEXTURE, gen_seed=seed)


def generate_target(family: TargetFamily, seed: int, dims: Dims) -> TargetImage:
    """Generate a target of a procedural family."""
    family = coerce_enum(TargetFamily, family, "target family")
    if family is TargetFamily.DIGIT:
        return gen_digit(seed, dims)
    if family is TargetFamily.TEXTURE:
        return gen_texture(seed, dims)
    raise InvalidSpecError("EXTERNAL targets are loaded, not generated")
