"""Module for simulated scattering media.

A medium is the transmission matrix T of the imaging system ``Y = T X``.
Object and detection planes are flattened row-major, i.e. the pixel
(y, x) of a plane with width w has the vector index ``y * w + x``.
"""
import logging
from enum import Enum, unique
from typing import Any, Dict, NamedTuple, Union

import numpy as np
import scipy.linalg

from scattersim.util import (
    Dims,
    InvalidArgumentError,
    InvalidSpecError,
    ScatterSimError,
    ShapeError,
    check_dims,
    check_seed,
    coerce_enum,
    fingerprint,
    format_dims,
    make_rng,
)

_LOGGER = logging.getLogger(__name__)


class UnsupportedKindError(ScatterSimError):
    """Raised when an operation is not defined for the medium kind."""

    category = "spec"


class SolverError(ScatterSimError):
    """Raised when a direct linear solve fails."""

    category = "numerical"


@unique
class MediumKind(str, Enum):
    """Forward models of the scattering system"""

    LINEAR = "linear"
    COHERENT = "coherent"

    @property
    def code(self) -> int:
        """Kind byte used by the binary file formats."""
        return _KIND_CODES[self]

    @classmethod
    def from_code(cls, code: int) -> "MediumKind":
        for kind, kind_code in _KIND_CODES.items():
            if kind_code == code:
                return kind
        raise ValueError(f"unknown medium kind code {code}")


_KIND_CODES = {MediumKind.LINEAR: 0, MediumKind.COHERENT: 1}


class MediumSpec(NamedTuple):
    """Parameters that fully determine a generated medium"""

    kind: MediumKind
    in_dims: Dims
    out_dims: Dims
    seed: int

    @property
    def in_pixels(self) -> int:
        return self.in_dims[0] * self.in_dims[1]

    @property
    def out_pixels(self) -> int:
        return self.out_dims[0] * self.out_dims[1]

    def validated(self, minimum: int = 2) -> "MediumSpec":
        """Return a normalized copy of this spec.

        Parameters
        ----------
        minimum : int, optional
            Smallest permitted plane side, by default 2

        Returns
        -------
        MediumSpec
            spec with a MediumKind member and python int dims.

        Raises
        ------
        InvalidSpecError
            If the kind is unknown, a plane is too small or the seed
            is not a 64-bit unsigned integer.
        """
        return MediumSpec(
            kind=coerce_enum(MediumKind, self.kind, "medium kind"),
            in_dims=check_dims(self.in_dims, "in_dims", minimum),
            out_dims=check_dims(self.out_dims, "out_dims", minimum),
            seed=check_seed(self.seed),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": MediumKind(self.kind).value,
            "in_dims": list(self.in_dims),
            "out_dims": list(self.out_dims),
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MediumSpec":
        try:
            spec = cls(
                kind=data["kind"],
                in_dims=tuple(data["in_dims"]),
                out_dims=tuple(data["out_dims"]),
                seed=data["seed"],
            )
        except (KeyError, TypeError) as error:
            raise InvalidSpecError(f"incomplete medium spec: {error}") from error
        return spec.validated(minimum=1)


def medium_fingerprint(spec: MediumSpec) -> int:
    """64-bit hash of the canonical encoding of a MediumSpec."""
    return fingerprint("medium", spec.validated(minimum=1).to_dict())


class SpecklePattern(NamedTuple):
    """Measured intensity on the detection plane"""

    values: np.ndarray
    medium_fingerprint: int

    @property
    def dims(self) -> Dims:
        return self.values.shape


class TransmissionMedium:
    """Transmission matrix of a scattering medium.

    The matrix is stored read-only, a medium is immutable after creation.

    Parameters
    ----------
    spec : MediumSpec
        Description of the medium. For injected matrices the seed is
        only used for the fingerprint.
    matrix : array_like
        Matrix of shape (out_pixels, in_pixels). Real nonnegative for
        LINEAR, complex for COHERENT.

    Raises
    ------
    ShapeError
        If the matrix shape does not match the spec dims.
    InvalidSpecError
        If LINEAR entries are negative, complex or not finite.
    """

    def __init__(self, spec: MediumSpec, matrix: Any) -> None:
        spec = MediumSpec(*spec).validated(minimum=1)
        raw = np.asarray(matrix)
        if spec.kind is MediumKind.LINEAR:
            if np.iscomplexobj(raw):
                raise InvalidSpecError("LINEAR media need a real matrix")
            values = np.array(raw, dtype=np.float64)
        else:
            values = np.array(raw, dtype=np.complex128)
        if values.shape != (spec.out_pixels, spec.in_pixels):
            raise ShapeError(
                f"matrix shape {values.shape} does not match "
                f"({spec.out_pixels}, {spec.in_pixels})"
            )
        if not np.all(np.isfinite(values)):
            raise InvalidSpecError("matrix contains non-finite entries")
        if spec.kind is MediumKind.LINEAR and np.any(values < 0):
            raise InvalidSpecError("LINEAR media need nonnegative entries")
        values.setflags(write=False)
        self._spec = spec
        self._matrix = values
        self._fingerprint = medium_fingerprint(spec)

    @property
    def spec(self) -> MediumSpec:
        return self._spec

    @property
    def kind(self) -> MediumKind:
        return self._spec.kind

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    @property
    def fingerprint(self) -> int:
        return self._fingerprint

    @property
    def in_dims(self) -> Dims:
        return self._spec.in_dims

    @property
    def out_dims(self) -> Dims:
        return self._spec.out_dims

    def __repr__(self) -> str:
        return (
            f"<TransmissionMedium {self.kind.value} "
            f"{format_dims(self.in_dims)} -> {format_dims(self.out_dims)} "
            f"seed={self._spec.seed}>"
        )


def generate_medium(spec: MediumSpec) -> TransmissionMedium:
    """Draw a random transmission matrix.

    LINEAR entries are i.i.d. ``|N(0, 1)| / in_pixels``, COHERENT entries
    have i.i.d. ``N(0, 1 / (2 in_pixels))`` real and imaginary parts.

    Parameters
    ----------
    spec : MediumSpec
        medium description, both planes at least 2x2

    Returns
    -------
    TransmissionMedium
        the generated medium

    Raises
    ------
    InvalidSpecError
        If the spec is invalid.
    """
    spec = MediumSpec(*spec).validated(minimum=2)
    rng = make_rng(spec.seed, "medium")
    shape = (spec.out_pixels, spec.in_pixels)
    if spec.kind is MediumKind.LINEAR:
        matrix = np.abs(rng.standard_normal(shape)) / spec.in_pixels
    else:
        scale = np.sqrt(1.0 / (2.0 * spec.in_pixels))
        real = rng.standard_normal(shape)
        imag = rng.standard_normal(shape)
        matrix = scale * (real + 1j * imag)
    _LOGGER.debug("generated %s medium %s", spec.kind.value, shape)
    return TransmissionMedium(spec, matrix)


def _target_values(target: Any) -> np.ndarray:
    return np.asarray(getattr(target, "values", target), dtype=np.float64)


def _check_target_range(values: np.ndarray) -> None:
    if values.size and (
        not np.all(np.isfinite(values)) or values.min() < 0.0 or values.max() > 1.0
    ):
        raise InvalidArgumentError("target values must lie in [0, 1]")


def propagate(medium: TransmissionMedium, target: Any) -> SpecklePattern:
    """Propagate a target through the medium.

    Parameters
    ----------
    medium : TransmissionMedium
        the scattering medium
    target : TargetImage or array_like
        object plane image of medium.in_dims with values in [0, 1]

    Returns
    -------
    SpecklePattern
        ``T x`` for LINEAR media, ``|T x|**2`` for COHERENT media

    Raises
    ------
    ShapeError
        If the target dims differ from the medium in_dims.
    """
    values = _target_values(target)
    if values.shape != tuple(medium.in_dims):
        raise ShapeError(
            f"target dims {values.shape} do not match medium "
            f"in_dims {tuple(medium.in_dims)}"
        )
    _check_target_range(values)
    field = medium.matrix @ values.reshape(-1)
    if medium.kind is MediumKind.COHERENT:
        intensity = np.abs(field) ** 2
    else:
        intensity = field
    return SpecklePattern(
        values=intensity.reshape(medium.out_dims), medium_fingerprint=medium.fingerprint
    )


def propagate_batch(medium: TransmissionMedium, targets: np.ndarray) -> np.ndarray:
    """Propagate a stack of targets (N x h x w), returns N x out_h x out_w."""
    values = np.asarray(targets, dtype=np.float64)
    if values.ndim != 3 or values.shape[1:] != tuple(medium.in_dims):
        raise ShapeError(
            f"targets of shape {values.shape} do not fit medium "
            f"in_dims {tuple(medium.in_dims)}"
        )
    _check_target_range(values)
    count = values.shape[0]
    field = values.reshape(count, medium.spec.in_pixels) @ medium.matrix.T
    if medium.kind is MediumKind.COHERENT:
        field = np.abs(field) ** 2
    return field.reshape((count,) + tuple(medium.out_dims))


def exact_inverse(medium: TransmissionMedium, ridge: float = 0.0) -> np.ndarray:
    """Tikhonov pseudoinverse ``(T^T T + ridge I)^-1 T^T`` of a LINEAR medium.

    Parameters
    ----------
    medium : TransmissionMedium
        LINEAR medium
    ridge : float, optional
        regularization, by default 0.0

    Returns
    -------
    np.ndarray
        matrix of shape (in_pixels, out_pixels)

    Raises
    ------
    UnsupportedKindError
        If the medium is COHERENT.
    SolverError
        If the regularized Gram matrix is not positive definite.
    """
    if medium.kind is not MediumKind.LINEAR:
        raise UnsupportedKindError(
            f"exact_inverse needs a LINEAR medium, got {medium.kind.value}"
        )
    if not ridge >= 0:
        raise InvalidArgumentError(f"ridge must be >= 0, got {ridge}")
    matrix = medium.matrix
    gram = matrix.T @ matrix
    gram[np.diag_indices_from(gram)] += ridge
    try:
        factor = scipy.linalg.cho_factor(gram)
    except np.linalg.LinAlgError as error:
        raise SolverError(f"Cholesky factorization failed: {error}") from error
    return scipy.linalg.cho_solve(factor, matrix.T)


def bin_values(values: np.ndarray, factor: int) -> np.ndarray:
    """Sum non-overlapping factor x factor blocks over the last two axes."""
    if int(factor) != factor or factor < 1:
        raise InvalidArgumentError(f"binning factor must be a positive int, got {factor}")
    factor = int(factor)
    values = np.asarray(values, dtype=np.float64)
    height, width = values.shape[-2:]
    if height % factor or width % factor:
        raise ShapeError(
            f"dims {format_dims((height, width))} are not divisible by {factor}"
        )
    if factor == 1:
        return values.copy()
    lead = values.shape[:-2]
    blocks = values.reshape(lead + (height // factor, factor, width // factor, factor))
    return blocks.sum(axis=(-3, -1))


def bin_speckle(pattern: Union[SpecklePattern, np.ndarray], factor: int) -> SpecklePattern:
    """Down-sample a speckle pattern by summing factor x factor pixel blocks.

    Parameters
    ----------
    pattern : SpecklePattern
        pattern to bin
    factor : int
        block side, must divide both pattern dims

    Returns
    -------
    SpecklePattern
        binned pattern with the same medium fingerprint
    """
    medium_hash = getattr(pattern, "medium_fingerprint", 0)
    values = np.asarray(getattr(pattern, "values", pattern))
    return SpecklePattern(values=bin_values(values, factor), medium_fingerprint=medium_hash)
