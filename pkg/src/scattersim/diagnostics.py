"""Module for coverage diagnostics of training sets.

Superposition maps show which object plane pixels a training set
activates and how strongly; per-pixel histograms show its grayscale
diversity.
"""
import csv
import logging
from enum import Enum, unique
from pathlib import Path
from typing import Any, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from scattersim.util import (
    InvalidArgumentError,
    ScatterIOError,
    ScatterSimError,
    ShapeError,
)

_LOGGER = logging.getLogger(__name__)

DEFAULT_BINS = 256


class EmptyInputError(ScatterSimError):
    """Raised when a diagnostic gets no images."""

    category = "argument"


class DegenerateInputError(ScatterSimError):
    """Raised when a diagnostic is undefined for its images."""

    category = "argument"


class InvalidPointError(ScatterSimError):
    """Raised when a pixel coordinate lies outside the images."""

    category = "argument"


@unique
class CoverageMode(str, Enum):
    """Superposition modes"""

    SATURATED = "saturate"
    NORMALIZED = "normalize"


class CoverageMap(NamedTuple):
    """Superposition of a set of targets"""

    values: np.ndarray
    mode: CoverageMode
    sample_count: int


class HistogramSet(NamedTuple):
    """Per-pixel value histograms over a dataset.

    With ``exclude_zero`` the first bin is dropped before normalizing;
    ``zero_counts`` then holds the dropped counts so that
    ``counts.sum(axis=1) + zero_counts == sample_count``.
    """

    points: List[Tuple[int, int]]
    bins: int
    edges: np.ndarray
    counts: np.ndarray
    frequencies: np.ndarray
    pooled: np.ndarray
    sample_count: int
    exclude_zero: bool = False
    zero_counts: Optional[np.ndarray] = None


def _stack(targets: Any) -> np.ndarray:
    if isinstance(targets, np.ndarray):
        stack = np.asarray(targets, dtype=np.float64)
    else:
        images = [np.asarray(getattr(item, "values", item), dtype=np.float64) for item in targets]
        if not images:
            raise EmptyInputError("no targets given")
        shapes = {image.shape for image in images}
        if len(shapes) != 1:
            raise ShapeError(f"targets have different dims {sorted(shapes)}")
        stack = np.stack(images)
    if stack.ndim != 3:
        raise ShapeError(f"expected a stack of 2D targets, got shape {stack.shape}")
    if len(stack) == 0:
        raise EmptyInputError("no targets given")
    return stack


def _total(stack: np.ndarray) -> np.ndarray:
    # pairwise summation along the sample axis gives a fixed reduction order
    return np.add.reduce(stack, axis=0)


def superpose_saturated(targets: Any) -> CoverageMap:
    """Elementwise ``min(sum of targets, 1)``.

    Parameters
    ----------
    targets : array or sequence of TargetImage
        nonempty set of targets with equal dims

    Returns
    -------
    CoverageMap
        SATURATED map

    Raises
    ------
    EmptyInputError
        If no targets are given.
    """
    stack = _stack(targets)
    return CoverageMap(np.minimum(_total(stack), 1.0), CoverageMode.SATURATED, len(stack))


def superpose_normalized(targets: Any) -> CoverageMap:
    """Sum of targets divided by its maximum.

    Raises
    ------
    EmptyInputError
        If no targets are given.
    DegenerateInputError
        If the sum is zero everywhere.
    """
    stack = _stack(targets)
    total = _total(stack)
    peak = total.max()
    if not peak > 0:
        raise DegenerateInputError("all targets are zero, the normalized map is undefined")
    return CoverageMap(total / peak, CoverageMode.NORMALIZED, len(stack))


def superpose(targets: Any, mode: Union[CoverageMode, str]) -> CoverageMap:
    if CoverageMode(mode) is CoverageMode.SATURATED:
        return superpose_saturated(targets)
    return superpose_normalized(targets)


def effective_pixel_mask(targets: Any) -> np.ndarray:
    """Pixels that are nonzero in at least one target."""
    return superpose_saturated(targets).values > 0


def coverage_fraction(targets: Any) -> float:
    """Share of effective pixels."""
    return float(effective_pixel_mask(targets).mean())


def pixel_histograms(
    targets: Any,
    points: Sequence[Tuple[int, int]],
    bins: int = DEFAULT_BINS,
    exclude_zero: bool = False,
) -> HistogramSet:
    """Histograms of the values of chosen pixels over a dataset.

    Bin edges are uniform on [0, 1]. The pooled histogram is the mean of
    the normalized per-point histograms.

    Parameters
    ----------
    targets : array or sequence of TargetImage
        nonempty dataset
    points : Sequence[Tuple[int, int]]
        (y, x) pixel coordinates
    bins : int, optional
        number of bins, by default 256
    exclude_zero : bool, optional
        drop the first bin before normalizing, by default False

    Returns
    -------
    HistogramSet
        counts, frequencies and pooled histogram

    Raises
    ------
    InvalidPointError
        If a point lies outside the images.
    DegenerateInputError
        If exclude_zero leaves a point without counts.
    """
    if int(bins) < 2:
        raise InvalidArgumentError(f"bins must be >= 2, got {bins}")
    bins = int(bins)
    stack = _stack(targets)
    height, width = stack.shape[1:]
    checked = []
    for point in points:
        y, x = (int(value) for value in point)
        if not (0 <= y < height and 0 <= x < width):
            raise InvalidPointError(f"point ({y}, {x}) is outside {height}x{width}")
        checked.append((y, x))
    if not checked:
        raise EmptyInputError("no points given")
    edges = np.linspace(0.0, 1.0, bins + 1)
    counts = np.stack(
        [np.histogram(stack[:, y, x], bins=edges)[0] for y, x in checked]
    ).astype(np.int64)
    zero_counts = None
    if exclude_zero:
        zero_counts = counts[:, 0].copy()
        counts = counts[:, 1:]
    totals = counts.sum(axis=1, keepdims=True)
    if np.any(totals == 0):
        raise DegenerateInputError("a point has no values in the histogram range")
    frequencies = counts / totals
    return HistogramSet(
        points=checked,
        bins=bins,
        edges=edges[1:] if exclude_zero else edges,
        counts=counts,
        frequencies=frequencies,
        pooled=frequencies.mean(axis=0),
        sample_count=len(stack),
        exclude_zero=exclude_zero,
        zero_counts=zero_counts,
    )


def write_histograms_csv(histograms: HistogramSet, path: Union[str, Path]) -> None:
    """Write histograms as CSV with columns point, bin_lo, bin_hi, count, frequency.

    The pooled histogram follows with point "pooled" and an empty count.
    """
    edges = histograms.edges
    try:
        with open(path, "w", newline="", encoding="utf-8") as file:
            writer = csv.writer(file, lineterminator="\n")
            writer.writerow(["point", "bin_lo", "bin_hi", "count", "frequency"])
            for (y, x), counts, frequencies in zip(
                histograms.points, histograms.counts, histograms.frequencies
            ):
                for i, (count, frequency) in enumerate(zip(counts, frequencies)):
                    writer.writerow(
                        [f"{y};{x}", f"{edges[i]:.6g}", f"{edges[i + 1]:.6g}", int(count), f"{frequency:.6g}"]
                    )
            for i, frequency in enumerate(histograms.pooled):
                writer.writerow(
                    ["pooled", f"{edges[i]:.6g}", f"{edges[i + 1]:.6g}", "", f"{frequency:.6g}"]
                )
    except OSError as error:
        raise ScatterIOError(f"cannot write histogram CSV: {error}") from error
    _LOGGER.debug("wrote histograms of %d points to %s", len(histograms.points), path)
