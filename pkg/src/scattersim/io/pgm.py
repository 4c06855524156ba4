"""Module for binary PGM (P5) images."""
import logging
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
from pyamapping import linlin

from scattersim.util import FormatError, ScatterIOError, ShapeError, TruncationError

_LOGGER = logging.getLogger(__name__)

PGM_MAGIC = b"P5"
WHITESPACE = b" \t\r\n\v\f"


def _next_token(data: bytes, index: int) -> Tuple[bytes, int]:
    """Get the next header token, skipping whitespace and comments

    Returns
    -------
    Tuple[bytes, int]
        token, index of the byte after the token
    """
    while index < len(data):
        if data[index] in WHITESPACE:
            index += 1
        elif data[index : index + 1] == b"#":
            end = data.find(b"\n", index)
            index = len(data) if end < 0 else end + 1
        else:
            break
    if index >= len(data):
        raise TruncationError("PGM header is incomplete", offset=index)
    start = index
    while index < len(data) and data[index] not in WHITESPACE:
        index += 1
    return data[start:index], index


def parse_pgm(data: bytes) -> np.ndarray:
    """Parse a P5 image into values in [0, 1].

    Parameters
    ----------
    data : bytes
        file content, maxval up to 65535

    Returns
    -------
    np.ndarray
        height x width array, raster divided by maxval

    Raises
    ------
    FormatError
        If the header is not a valid P5 header or a pixel exceeds maxval.
    TruncationError
        If the header or raster is incomplete.
    """
    tokens: List[bytes] = []
    index = 0
    for _ in range(4):
        token, index = _next_token(data, index)
        tokens.append(token)
        if len(tokens) == 1 and token != PGM_MAGIC:
            raise FormatError("not a binary PGM", expected=PGM_MAGIC, actual=token)
    try:
        width, height, maxval = (int(token) for token in tokens[1:])
    except ValueError as error:
        raise FormatError(f"malformed PGM header {tokens!r}") from error
    if width < 0 or height < 0 or not 0 < maxval < 65536:
        raise FormatError(f"invalid PGM header values {width}x{height} maxval {maxval}")
    # exactly one whitespace byte separates header and raster
    index += 1
    item_size = 1 if maxval < 256 else 2
    needed = width * height
    available = max(len(data) - index, 0) // item_size
    if available < needed:
        raise TruncationError(
            f"PGM raster holds {available} of {needed} pixels",
            offset=index + available * item_size,
        )
    dtype = np.uint8 if item_size == 1 else np.dtype(">u2")
    raster = np.frombuffer(data, dtype=dtype, count=needed, offset=index)
    if raster.size and raster.max() > maxval:
        raise FormatError("PGM pixel exceeds maxval", expected=maxval, actual=int(raster.max()))
    return raster.reshape(height, width).astype(np.float64) / maxval


def encode_pgm(values: np.ndarray) -> bytes:
    """Encode values in [0, 1] as 8-bit P5 (values * 255, rounded)."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ShapeError(f"PGM images are 2D, got shape {values.shape}")
    scaled = np.rint(linlin(np.clip(values, 0.0, 1.0), 0.0, 1.0, 0.0, 255.0))
    height, width = values.shape
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    return header + scaled.astype(np.uint8).tobytes()


def read_pgm(path: Union[str, Path]) -> np.ndarray:
    """Read a P5 file, see :func:`parse_pgm`."""
    try:
        data = Path(path).read_bytes()
    except OSError as error:
        raise ScatterIOError(f"cannot read PGM file: {error}") from error
    return parse_pgm(data)


def write_pgm(path: Union[str, Path], values: np.ndarray) -> None:
    """Write values in [0, 1] as 8-bit P5 file."""
    try:
        Path(path).write_bytes(encode_pgm(values))
    except OSError as error:
        raise ScatterIOError(f"cannot write PGM file: {error}") from error
    _LOGGER.debug("wrote %s", path)
