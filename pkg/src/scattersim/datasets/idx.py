"""Module for reading and writing MNIST style IDX files.

Layout of an image file (all integers 32 bit big-endian)::

    [offset] [type]          [value]
    0000     32 bit integer  0x00000803 (2051) magic number
    0004     32 bit integer  count
    0008     32 bit integer  rows
    0012     32 bit integer  cols
    0016     unsigned byte   pixels, row-major

Label files start with magic 0x00000801 (2049) and the count,
followed by one unsigned byte per label.
"""
import logging
import struct
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.ndimage

from scattersim.datasets.generators import TargetFamily, TargetImage
from scattersim.util import (
    ConsistencyError,
    Dims,
    FormatError,
    ScatterIOError,
    TruncationError,
    check_dims,
    coerce_enum,
)

_LOGGER = logging.getLogger(__name__)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
BINARY_THRESHOLD = 0.5


class IDXFormatError(FormatError):
    """Raised when an IDX stream has a wrong magic, zero-area images or trailing data."""


class IDXTruncationError(TruncationError):
    """Raised when an IDX stream ends early."""


def _get_uint32(data: bytes, index: int) -> Tuple[int, int]:
    """Get a big-endian uint32 from data at index

    Returns
    -------
    Tuple[int, int]
        value, index + 4
    """
    if len(data) < index + 4:
        raise IDXTruncationError("IDX header is incomplete", offset=index)
    return struct.unpack_from(">I", data, index)[0], index + 4


def _check_magic(data: bytes, magic: int, what: str) -> int:
    actual, index = _get_uint32(data, 0)
    if actual != magic:
        raise IDXFormatError(
            f"wrong IDX {what} magic", expected=hex(magic), actual=hex(actual)
        )
    return index


def _check_payload(data: bytes, index: int, count: int, item_size: int) -> None:
    end = index + count * item_size
    if len(data) < end:
        complete = (len(data) - index) // item_size if item_size else count
        raise IDXTruncationError(
            f"IDX data holds {complete} of {count} items",
            offset=index + complete * item_size,
        )
    if len(data) > end:
        raise IDXFormatError(
            "IDX stream has trailing bytes", expected=end, actual=len(data)
        )


def parse_idx_labels(label_bytes: bytes) -> np.ndarray:
    """Parse an IDX label stream into an uint8 array."""
    data = bytes(label_bytes)
    index = _check_magic(data, LABEL_MAGIC, "label")
    count, index = _get_uint32(data, index)
    _check_payload(data, index, count, 1)
    return np.frombuffer(data, dtype=np.uint8, count=count, offset=index).copy()


def load_idx(
    image_bytes: bytes, label_bytes: Optional[bytes] = None
) -> List[TargetImage]:
    """Parse IDX image (and optional label) streams.

    Parameters
    ----------
    image_bytes : bytes
        IDX image stream
    label_bytes : bytes, optional
        IDX label stream with the same count

    Returns
    -------
    List[TargetImage]
        EXTERNAL targets with pixel values scaled to [0, 1]

    Raises
    ------
    IDXFormatError
        If a magic is wrong, the images have zero area or a stream
        has trailing bytes.
    IDXTruncationError
        If a stream ends early.
    ConsistencyError
        If image and label counts differ.
    """
    data = bytes(image_bytes)
    index = _check_magic(data, IMAGE_MAGIC, "image")
    count, index = _get_uint32(data, index)
    rows, index = _get_uint32(data, index)
    cols, index = _get_uint32(data, index)
    if rows == 0 or cols == 0:
        raise IDXFormatError(
            "IDX images must have a nonzero area", expected="rows, cols >= 1", actual=(rows, cols)
        )
    _check_payload(data, index, count, rows * cols)
    pixels = np.frombuffer(
        data, dtype=np.uint8, count=count * rows * cols, offset=index
    ).reshape(count, rows, cols)

    labels: Optional[np.ndarray] = None
    if label_bytes is not None:
        labels = parse_idx_labels(label_bytes)
        if len(labels) != count:
            raise ConsistencyError(
                f"IDX image count {count} differs from label count {len(labels)}"
            )
    _LOGGER.info("parsed %d IDX images of %dx%d", count, rows, cols)
    return [
        TargetImage(
            values=pixels[i].astype(np.float64) / 255.0,
            family=TargetFamily.EXTERNAL,
            label=None if labels is None else int(labels[i]),
        )
        for i in range(count)
    ]


def dump_idx(
    images: Sequence[TargetImage],
    with_labels: bool = False,
    dims: Optional[Dims] = None,
) -> Tuple[bytes, Optional[bytes]]:
    """Serialize targets as IDX image (and label) streams.

    Values are scaled by 255 and rounded, so targets parsed by
    :func:`load_idx` are written back byte-identically.

    Parameters
    ----------
    images : Sequence[TargetImage]
        targets of equal dims
    with_labels : bool, optional
        also build a label stream, by default False
    dims : Dims, optional
        image dims to record when images is empty

    Returns
    -------
    Tuple[bytes, Optional[bytes]]
        image stream and label stream (None unless with_labels)
    """
    if images:
        rows, cols = images[0].values.shape
    else:
        rows, cols = dims if dims is not None else (0, 0)
    if rows == 0 or cols == 0:
        raise ConsistencyError("IDX images need nonzero dims, pass dims for an empty set")
    stacked = np.zeros((len(images), rows, cols), dtype=np.uint8)
    for i, image in enumerate(images):
        if image.values.shape != (rows, cols):
            raise ConsistencyError("IDX images must share their dims")
        stacked[i] = np.rint(np.clip(image.values, 0.0, 1.0) * 255.0).astype(np.uint8)
    image_stream = struct.pack(">IIII", IMAGE_MAGIC, len(images), rows, cols)
    image_stream += stacked.tobytes()
    if not with_labels:
        return image_stream, None
    labels = bytes(0 if image.label is None else int(image.label) for image in images)
    return image_stream, struct.pack(">II", LABEL_MAGIC, len(images)) + labels


def read_idx_files(
    image_path: Union[str, Path], label_path: Optional[Union[str, Path]] = None
) -> List[TargetImage]:
    """Read IDX files from disk, see :func:`load_idx`."""
    try:
        image_bytes = Path(image_path).read_bytes()
        label_bytes = None if label_path is None else Path(label_path).read_bytes()
    except OSError as error:
        raise ScatterIOError(f"cannot read IDX file: {error}") from error
    return load_idx(image_bytes, label_bytes)


def fit_to_dims(values: np.ndarray, dims: Dims) -> np.ndarray:
    """Center-pad an image that fits into dims, otherwise resize it bilinearly."""
    height, width = check_dims(dims)
    rows, cols = values.shape
    if rows <= height and cols <= width:
        canvas = np.zeros((height, width), dtype=np.float64)
        top, left = (height - rows) // 2, (width - cols) // 2
        canvas[top : top + rows, left : left + cols] = values
        return canvas
    resized = scipy.ndimage.zoom(
        values,
        (height / rows, width / cols),
        order=1,
        mode="nearest",
        grid_mode=True,
    )
    return np.clip(resized[:height, :width], 0.0, 1.0)


def prepare_targets(
    images: Sequence[TargetImage], dims: Dims, family: TargetFamily = TargetFamily.EXTERNAL
) -> List[TargetImage]:
    """Bring loaded targets to dims, binarizing them at 0.5 for the DIGIT family.

    Parameters
    ----------
    images : Sequence[TargetImage]
        loaded targets, e.g. from :func:`load_idx`
    dims : Dims
        requested (height, width)
    family : TargetFamily, optional
        family of the prepared targets, by default EXTERNAL

    Returns
    -------
    List[TargetImage]
        targets of dims
    """
    family = coerce_enum(TargetFamily, family, "target family")
    prepared = []
    for image in images:
        values = fit_to_dims(image.values, dims)
        if family is TargetFamily.DIGIT:
            values = (values >= BINARY_THRESHOLD).astype(np.float64)
        prepared.append(image._replace(values=values, family=family))
    return prepared
