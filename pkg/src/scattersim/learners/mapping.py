"""Module for learned inverse mappings and their application.

Parameter layouts
-----------------
RIDGE_AFFINE
    ``(W, target_mean, speckle_mean)`` with W of shape
    (target_pixels, speckle_pixels), prediction ``W (y - speckle_mean) + target_mean``.
SMALL_NET
    ``(W1, b1, W2, b2)`` with W1 of shape (hidden, speckle_pixels) and W2 of
    shape (target_pixels, hidden), prediction ``sigmoid(W2 relu(W1 y + b1) + b2)``.
"""
import logging
from enum import Enum, unique
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from scattersim.util import Dims, ShapeError, check_dims, coerce_enum

_LOGGER = logging.getLogger(__name__)


@unique
class MappingKind(str, Enum):
    """Kinds of learned mappings"""

    RIDGE_AFFINE = "ridge"
    SMALL_NET = "net"

    @property
    def code(self) -> int:
        return 0 if self is MappingKind.RIDGE_AFFINE else 1

    @classmethod
    def from_code(cls, code: int) -> "MappingKind":
        if code == 0:
            return cls.RIDGE_AFFINE
        if code == 1:
            return cls.SMALL_NET
        raise ValueError(f"unknown mapping kind code {code}")


class Reconstruction(NamedTuple):
    """Prediction of a mapping, values = clamp(raw_values, 0, 1)"""

    values: np.ndarray
    raw_values: np.ndarray


class EpochRecord(NamedTuple):
    """Training progress of one epoch"""

    epoch: int
    train_loss: float
    validation_loss: float
    validation_dice: float


class LearnedMapping:
    """Trained approximation of the inverse transmission matrix.

    Parameters
    ----------
    kind : MappingKind
        RIDGE_AFFINE or SMALL_NET
    in_dims : Dims
        speckle dims
    out_dims : Dims
        target dims
    params : Sequence[np.ndarray]
        parameter arrays in the documented order of the kind
    training_fingerprint : int
        fingerprint of the training dataset
    history : List[EpochRecord], optional
        training history of a SMALL_NET

    Raises
    ------
    ShapeError
        If the parameter shapes do not chain.
    """

    def __init__(
        self,
        kind: MappingKind,
        in_dims: Dims,
        out_dims: Dims,
        params: Sequence[np.ndarray],
        training_fingerprint: int = 0,
        history: Optional[List[EpochRecord]] = None,
    ) -> None:
        self._kind = coerce_enum(MappingKind, kind, "mapping kind")
        self._in_dims = check_dims(in_dims, "in_dims")
        self._out_dims = check_dims(out_dims, "out_dims")
        arrays = []
        for param in params:
            array = np.array(param, dtype=np.float64)
            array.setflags(write=False)
            arrays.append(array)
        self._params = tuple(arrays)
        self._check_shapes()
        self.training_fingerprint = int(training_fingerprint)
        self.history = list(history) if history is not None else []

    def _check_shapes(self) -> None:
        n_in = self._in_dims[0] * self._in_dims[1]
        n_out = self._out_dims[0] * self._out_dims[1]
        if self._kind is MappingKind.RIDGE_AFFINE:
            expected = [(n_out, n_in), (n_out,), (n_in,)]
        else:
            if len(self._params) != 4 or self._params[0].ndim != 2:
                raise ShapeError("SMALL_NET mappings need (W1, b1, W2, b2)")
            hidden = self._params[0].shape[0]
            expected = [(hidden, n_in), (hidden,), (n_out, hidden), (n_out,)]
        actual = [param.shape for param in self._params]
        if actual != expected:
            raise ShapeError(
                f"{self._kind.value} parameters have shapes {actual}, expected {expected}"
            )

    @property
    def kind(self) -> MappingKind:
        return self._kind

    @property
    def in_dims(self) -> Dims:
        return self._in_dims

    @property
    def out_dims(self) -> Dims:
        return self._out_dims

    @property
    def params(self) -> Tuple[np.ndarray, ...]:
        return self._params

    @property
    def layer_dims(self) -> Tuple[int, ...]:
        """Widths of all layers, input first."""
        widths = [self._in_dims[0] * self._in_dims[1]]
        if self._kind is MappingKind.SMALL_NET:
            widths.append(self._params[0].shape[0])
        widths.append(self._out_dims[0] * self._out_dims[1])
        return tuple(widths)

    def apply_raw(self, speckles: np.ndarray) -> np.ndarray:
        """Raw predictions for flattened speckles of shape (N, speckle_pixels)."""
        if self._kind is MappingKind.RIDGE_AFFINE:
            weights, target_mean, speckle_mean = self._params
            return (speckles - speckle_mean) @ weights.T + target_mean
        return net_forward(self._params, speckles)

    def __eq__(self, other: Any) -> bool:
        if not isinstance(other, LearnedMapping):
            return NotImplemented
        return (
            self._kind is other.kind
            and self._in_dims == other.in_dims
            and self._out_dims == other.out_dims
            and self.training_fingerprint == other.training_fingerprint
            and len(self._params) == len(other.params)
            and all(np.array_equal(a, b) for a, b in zip(self._params, other.params))
        )

    def __repr__(self) -> str:
        widths = "-".join(str(width) for width in self.layer_dims)
        return f"<LearnedMapping {self._kind.value} {widths}>"

    def info(self) -> Dict[str, Any]:
        return {
            "kind": self._kind.value,
            "in_dims": list(self._in_dims),
            "out_dims": list(self._out_dims),
            "layer_dims": list(self.layer_dims),
            "training_fingerprint": self.training_fingerprint,
        }


def net_forward(params: Sequence[np.ndarray], speckles: np.ndarray) -> np.ndarray:
    """Forward pass ``sigmoid(W2 relu(W1 y + b1) + b2)`` over rows of speckles."""
    w1, b1, w2, b2 = params
    hidden = np.maximum(speckles @ w1.T + b1, 0.0)
    return expit(hidden @ w2.T + b2)


def _flatten_speckles(mapping: LearnedMapping, speckles: np.ndarray) -> np.ndarray:
    if speckles.shape[1:] != tuple(mapping.in_dims):
        raise ShapeError(
            f"speckle dims {speckles.shape[1:]} do not match mapping "
            f"in_dims {tuple(mapping.in_dims)}"
        )
    return speckles.reshape(len(speckles), mapping.layer_dims[0])


def predict_batch(mapping: LearnedMapping, speckles: np.ndarray) -> Reconstruction:
    """Apply a mapping to a stack of speckles (N x sh x sw).

    Returns
    -------
    Reconstruction
        stacked values and raw values of shape N x h x w
    """
    speckles = np.asarray(speckles, dtype=np.float64)
    if speckles.ndim != 3:
        raise ShapeError(f"expected a stack of speckles, got shape {speckles.shape}")
    raw = mapping.apply_raw(_flatten_speckles(mapping, speckles))
    raw = raw.reshape((len(speckles),) + tuple(mapping.out_dims))
    return Reconstruction(values=np.clip(raw, 0.0, 1.0), raw_values=raw)


def predict(mapping: LearnedMapping, speckle: Any) -> Reconstruction:
    """Reconstruct the target of a single speckle pattern.

    Parameters
    ----------
    mapping : LearnedMapping
        trained mapping
    speckle : SpecklePattern or array_like
        pattern of mapping.in_dims

    Returns
    -------
    Reconstruction
        clamped and raw reconstruction of mapping.out_dims

    Raises
    ------
    ShapeError
        If the speckle dims differ from mapping.in_dims.
    """
    values = np.asarray(getattr(speckle, "values", speckle), dtype=np.float64)
    if values.shape != tuple(mapping.in_dims):
        raise ShapeError(
            f"speckle dims {values.shape} do not match mapping "
            f"in_dims {tuple(mapping.in_dims)}"
        )
    batch = predict_batch(mapping, values[np.newaxis])
    return Reconstruction(values=batch.values[0], raw_values=batch.raw_values[0])
