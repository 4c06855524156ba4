"""Module with utility functions - errors, seeding, hashing and timing"""
import enum
import hashlib
import json
import logging
import re
import time
from typing import Any, Dict, NamedTuple, Optional, Tuple, Type, TypeVar, Union

import numpy as np
import psutil

_LOGGER = logging.getLogger(__name__)


Dims = Tuple[int, int]

SEED_MASK = (1 << 64) - 1


class ScatterSimError(Exception):
    """Base exception of scattersim.

    Every subclass carries a ``category`` that is used as stable
    machine readable prefix by the command line interface.
    """

    category = "error"


class InvalidSpecError(ScatterSimError):
    """Raised when a specification record violates its invariants."""

    category = "spec"


class ShapeError(ScatterSimError):
    """Raised when array dimensions do not fit together."""

    category = "shape"


class InvalidArgumentError(ScatterSimError):
    """Raised when an argument is outside of its permitted range."""

    category = "argument"


class ConsistencyError(ScatterSimError):
    """Raised when related inputs disagree with each other."""

    category = "consistency"


class ScatterIOError(ScatterSimError):
    """Raised when a file cannot be read or written."""

    category = "io"


class FormatError(ScatterSimError):
    """Raised when binary or text data does not follow its format.

    Parameters
    ----------
    message : str
        description of the problem
    expected : Any, optional
        what the format requires, e.g. the magic bytes
    actual : Any, optional
        what was found instead
    """

    category = "format"

    def __init__(self, message: str, expected: Any = None, actual: Any = None):
        if expected is not None or actual is not None:
            message = f"{message} (expected {expected!r}, got {actual!r})"
        super().__init__(message)
        self.expected = expected
        self.actual = actual


class TruncationError(ScatterSimError):
    """Raised when data ends before the format says it should.

    Parameters
    ----------
    message : str
        description of the problem
    offset : int
        byte offset at which more data was required
    """

    category = "truncation"

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


def check_dims(dims: Any, name: str = "dims", minimum: int = 1) -> Dims:
    """Validate and normalize a (height, width) pair.

    Parameters
    ----------
    dims : Any
        Sequence with two positive integers.
    name : str, optional
        Name used in the error message, by default "dims"
    minimum : int, optional
        Smallest permitted side length, by default 1

    Returns
    -------
    Dims
        (height, width) as tuple of python ints.

    Raises
    ------
    InvalidSpecError
        If dims is not a pair of integers >= minimum.
    """
    try:
        height, width = (int(side) for side in dims)
    except (TypeError, ValueError) as error:
        raise InvalidSpecError(f"{name} must be a (height, width) pair") from error
    if height < minimum or width < minimum:
        raise InvalidSpecError(
            f"{name} must be at least {minimum}x{minimum}, got {height}x{width}"
        )
    return height, width


EnumT = TypeVar("EnumT", bound=enum.Enum)


def coerce_enum(enum_type: Type[EnumT], value: Any, name: str) -> EnumT:
    """Convert value into a member of enum_type or raise InvalidSpecError."""
    try:
        return enum_type(value)
    except ValueError as error:
        choices = ", ".join(str(member.value) for member in enum_type)
        raise InvalidSpecError(
            f"unknown {name} '{value}', choose one of {choices}"
        ) from error


def check_seed(seed: Any) -> int:
    """Validate a 64-bit unsigned seed."""
    try:
        value = int(seed)
    except (TypeError, ValueError) as error:
        raise InvalidSpecError(f"seed must be an integer, got {seed!r}") from error
    if not 0 <= value <= SEED_MASK:
        raise InvalidSpecError(f"seed must be a 64-bit unsigned integer, got {value}")
    return value


def parse_dims(text: str) -> Dims:
    """Parse dimensions written as ``HxW`` (e.g. ``16x16``)."""
    match = re.fullmatch(r"\s*(\d+)\s*[xX]\s*(\d+)\s*", text)
    if match is None:
        raise InvalidArgumentError(f"dimensions must look like HxW, got '{text}'")
    return int(match.group(1)), int(match.group(2))


def format_dims(dims: Dims) -> str:
    return f"{dims[0]}x{dims[1]}"


def _key_to_int(key: Union[int, str]) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & SEED_MASK
    digest = hashlib.blake2b(str(key).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def make_rng(seed: int, *keys: Union[int, str]) -> np.random.Generator:
    """Create the PCG64 generator belonging to seed and a key path.

    All randomness in scattersim is drawn from generators created here,
    so identical (seed, keys) always yield identical streams.

    Parameters
    ----------
    seed : int
        64-bit unsigned master seed.
    keys : int or str
        Path of sub streams, e.g. the item index of a dataset.

    Returns
    -------
    np.random.Generator
        Independent generator for this stream.
    """
    sequence = np.random.SeedSequence(
        entropy=int(seed) & SEED_MASK,
        spawn_key=tuple(_key_to_int(key) for key in keys),
    )
    return np.random.Generator(np.random.PCG64(sequence))


def derive_seed(seed: int, *keys: Union[int, str]) -> int:
    """Derive a 64-bit seed for the sub stream (seed, keys)."""
    sequence = np.random.SeedSequence(
        entropy=int(seed) & SEED_MASK,
        spawn_key=tuple(_key_to_int(key) for key in keys),
    )
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def fingerprint(*parts: Any) -> int:
    """64-bit blake2b hash of the canonical JSON encoding of parts."""
    payload = json.dumps(parts, sort_keys=True, separators=(",", ":"), default=str)
    digest = hashlib.blake2b(payload.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def array_hash(values: np.ndarray) -> str:
    """Content hash of an array (dtype and shape independent of memory layout)."""
    contiguous = np.ascontiguousarray(values, dtype=np.float64)
    hasher = hashlib.blake2b(digest_size=16)
    hasher.update(repr(contiguous.shape).encode("ascii"))
    hasher.update(contiguous.tobytes())
    return hasher.hexdigest()


class StageTiming(NamedTuple):
    """Resources used by one pipeline stage"""

    stage: str
    wall_seconds: float
    cpu_seconds: float
    rss_bytes: int


class StageClock:
    """Context manager measuring wall time, CPU time and RSS of a stage.

    Parameters
    ----------
    stage : str
        Name of the stage.
    timings : dict, optional
        If given, the resulting StageTiming is stored here under the stage name.
    """

    def __init__(self, stage: str, timings: Optional[Dict[str, StageTiming]] = None):
        self.stage = stage
        self.timings = timings
        self.timing: Optional[StageTiming] = None
        self._process = psutil.Process()
        self._wall0 = 0.0
        self._cpu0 = 0.0

    def _cpu(self) -> float:
        cpu_times = self._process.cpu_times()
        return cpu_times.user + cpu_times.system

    def __enter__(self) -> "StageClock":
        self._wall0 = time.perf_counter()
        self._cpu0 = self._cpu()
        return self

    def __exit__(self, exc_type, exc_value, traceback) -> None:
        self.timing = StageTiming(
            stage=self.stage,
            wall_seconds=time.perf_counter() - self._wall0,
            cpu_seconds=self._cpu() - self._cpu0,
            rss_bytes=self._process.memory_info().rss,
        )
        if self.timings is not None:
            self.timings[self.stage] = self.timing
        _LOGGER.debug(
            "stage %s took %.3fs (cpu %.3fs)",
            self.stage,
            self.timing.wall_seconds,
            self.timing.cpu_seconds,
        )


def tool_version() -> str:
    """Installed version of scattersim, "unknown" for a plain source tree."""
    try:
        from scattersim.version import version
    except ImportError:
        return "unknown"
    return version
