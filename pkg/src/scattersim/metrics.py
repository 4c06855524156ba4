"""Module for reconstruction quality metrics."""
import logging
import math
from typing import Dict, Iterable, NamedTuple

import numpy as np
from skimage.metrics import structural_similarity

from scattersim.util import InvalidArgumentError, ScatterSimError, ShapeError

_LOGGER = logging.getLogger(__name__)

METRIC_NAMES = ("pcc", "ssim", "cosine", "dice")


class UndefinedMetricError(ScatterSimError):
    """Raised when a metric is undefined for its inputs."""

    category = "metric"


class MetricReport(NamedTuple):
    """Metrics of one (reconstruction, ground truth) pair, NaN marks a missing value"""

    case: str
    family: str
    index: int
    pcc: float
    ssim: float
    cosine: float
    dice: float


def _pair(a: np.ndarray, b: np.ndarray):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"cannot compare arrays of shape {a.shape} and {b.shape}")
    return a, b


def pcc(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation coefficient over all pixels.

    Returns 0.0 if exactly one input is constant.

    Raises
    ------
    UndefinedMetricError
        If both inputs are constant.
    """
    a, b = _pair(a, b)
    a_constant = a.size == 0 or np.ptp(a) == 0
    b_constant = b.size == 0 or np.ptp(b) == 0
    if a_constant and b_constant:
        raise UndefinedMetricError("PCC of two constant images is undefined")
    if a_constant or b_constant:
        return 0.0
    da = a.ravel() - a.mean()
    db = b.ravel() - b.mean()
    value = np.dot(da, db) / (np.linalg.norm(da) * np.linalg.norm(db))
    return float(np.clip(value, -1.0, 1.0))


def ssim(
    a: np.ndarray,
    b: np.ndarray,
    window: int = 7,
    sigma: float = 1.5,
    k1: float = 0.01,
    k2: float = 0.03,
    data_range: float = 1.0,
) -> float:
    """Mean structural similarity with Gaussian weighted local statistics.

    Computed by :func:`skimage.metrics.structural_similarity` with
    population (weighted) variances. The Gaussian weights reach out to
    3.5 sigma. ``window`` sets the minimum image side and the border of
    ``window // 2`` pixels that is left out of the mean.

    Parameters
    ----------
    a, b : np.ndarray
        images of equal dims, at least window x window
    window : int, optional
        odd window side, by default 7
    sigma : float, optional
        Gaussian standard deviation, by default 1.5
    k1, k2 : float, optional
        stabilization constants, by default 0.01 and 0.03
    data_range : float, optional
        dynamic range L of the values, by default 1.0

    Returns
    -------
    float
        mean of the local SSIM map

    Raises
    ------
    InvalidArgumentError
        If the window is even or an image side is smaller than it.
    """
    a, b = _pair(a, b)
    if window % 2 == 0 or window < 3:
        raise InvalidArgumentError(f"SSIM window must be odd and >= 3, got {window}")
    if a.ndim != 2 or min(a.shape) < window:
        raise InvalidArgumentError(
            f"SSIM needs 2D images of at least {window}x{window}, got {a.shape}"
        )
    value = structural_similarity(
        a,
        b,
        win_size=window,
        gaussian_weights=True,
        sigma=sigma,
        use_sample_covariance=False,
        data_range=data_range,
        K1=k1,
        K2=k2,
    )
    return float(value)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of the flattened images.

    Raises
    ------
    UndefinedMetricError
        If one image is all zero.
    """
    a, b = _pair(a, b)
    norm_a, norm_b = np.linalg.norm(a), np.linalg.norm(b)
    if norm_a == 0 or norm_b == 0:
        raise UndefinedMetricError("cosine similarity with a zero image is undefined")
    value = np.dot(a.ravel(), b.ravel()) / (norm_a * norm_b)
    return float(np.clip(value, -1.0, 1.0))


def dice_coeff(a: np.ndarray, b: np.ndarray, threshold: float = 0.5) -> float:
    """Dice coefficient of the masks ``a >= threshold`` and ``b >= threshold``.

    Two empty masks have a Dice coefficient of 1.0.
    """
    a, b = _pair(a, b)
    mask_a = a >= threshold
    mask_b = b >= threshold
    total = int(mask_a.sum()) + int(mask_b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(mask_a, mask_b).sum()) / total


def evaluate_pair(
    reconstruction: np.ndarray, truth: np.ndarray, family: str, index: int, case: str = ""
) -> MetricReport:
    """Compute all metrics of a pair, undefined ones are stored as NaN."""
    values = {}
    for name, metric in (("pcc", pcc), ("ssim", ssim), ("cosine", cosine), ("dice", dice_coeff)):
        try:
            values[name] = metric(reconstruction, truth)
        except UndefinedMetricError as error:
            _LOGGER.warning("%s of %s image %d is missing: %s", name, family, index, error)
            values[name] = math.nan
    return MetricReport(case=case, family=family, index=index, **values)


def mean_report(reports: Iterable[MetricReport]) -> Dict[str, float]:
    """Mean of every metric over reports, ignoring missing values.

    A metric without any present value has the mean NaN.
    """
    collected = {name: [] for name in METRIC_NAMES}
    for report in reports:
        for name in METRIC_NAMES:
            value = getattr(report, name)
            if not math.isnan(value):
                collected[name].append(value)
    return {
        name: float(np.mean(values)) if values else math.nan
        for name, values in collected.items()
    }
