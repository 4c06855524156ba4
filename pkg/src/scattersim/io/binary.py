"""Module for the binary medium (.stm), dataset (.sds) and mapping (.slm) files.

All multi-byte integers are little-endian. Layouts::

    .stm  "STM1" | kind u8 | rows u32 | cols u32 | entries f64 row-major
          (COHERENT entries interleaved as real, imaginary)
    .sds  "SDS1" | count u32 | target h, w u32 | speckle h, w u32 |
          count x (target f32 row-major, speckle f32 row-major)
    .slm  "SLM1" | kind u8 | in h, w u32 | out h, w u32 | fingerprint u64 |
          RIDGE_AFFINE: W, target mean, speckle mean (f64)
          SMALL_NET: n_widths u32 | widths u32 | W1, b1, W2, b2 (f64)

Media and datasets carry a JSON sidecar with the same stem that records
their full spec.
"""
import json
import logging
import math
import struct
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from scattersim.datasets.builder import Dataset, DatasetSpec
from scattersim.learners.mapping import LearnedMapping, MappingKind
from scattersim.media import MediumKind, MediumSpec, TransmissionMedium
from scattersim.util import (
    ConsistencyError,
    FormatError,
    InvalidSpecError,
    ScatterIOError,
    ScatterSimError,
    ShapeError,
    TruncationError,
)

_LOGGER = logging.getLogger(__name__)

MEDIUM_MAGIC = b"STM1"
DATASET_MAGIC = b"SDS1"
MAPPING_MAGIC = b"SLM1"
SIDECAR_SUFFIX = ".json"
# largest plane (or hidden layer) a header may announce
MAX_PLANE_PIXELS = 1 << 24

PathLike = Union[str, Path]


def _check_magic(data: bytes, magic: bytes) -> int:
    """Check the 4 magic bytes, returns the index after them."""
    head = data[: len(magic)]
    if head != magic[: len(head)]:
        raise FormatError("wrong magic", expected=magic, actual=head)
    if len(head) < len(magic):
        raise TruncationError("magic is incomplete", offset=len(head))
    return len(magic)


def _get_struct(data: bytes, fmt: str, index: int, what: str) -> Tuple[Tuple[Any, ...], int]:
    """Unpack fmt at index

    Returns
    -------
    Tuple[Tuple[Any, ...], int]
        unpacked values, index + size of fmt
    """
    size = struct.calcsize(fmt)
    if len(data) < index + size:
        raise TruncationError(f"{what} is incomplete", offset=index)
    return struct.unpack_from(fmt, data, index), index + size


def _get_array(
    data: bytes, dtype: str, count: int, index: int, what: str
) -> Tuple[np.ndarray, int]:
    size = np.dtype(dtype).itemsize * count
    if len(data) < index + size:
        raise TruncationError(f"{what} is incomplete", offset=index)
    array = np.frombuffer(data, dtype=dtype, count=count, offset=index)
    return array.astype(np.float64), index + size


def _check_end(data: bytes, index: int) -> None:
    if len(data) != index:
        raise FormatError("unexpected trailing bytes", expected=index, actual=len(data))


def _check_positive_dims(*dims: int) -> None:
    if any(value == 0 for value in dims):
        raise FormatError(f"dims must be positive, got {dims}")


def _plane_pixels(height: int, width: int, what: str) -> int:
    """Pixel count of a plane announced by a header, checked against MAX_PLANE_PIXELS."""
    pixels = height * width
    if pixels > MAX_PLANE_PIXELS:
        raise FormatError(
            f"{what} of {height}x{width} is too large",
            expected=f"<= {MAX_PLANE_PIXELS} pixels",
            actual=pixels,
        )
    return pixels


def sidecar_path(path: PathLike) -> Path:
    return Path(path).with_suffix(SIDECAR_SUFFIX)


def _read_bytes(path: PathLike) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as error:
        raise ScatterIOError(f"cannot read {path}: {error}") from error


def _write_bytes(path: PathLike, data: bytes) -> None:
    try:
        Path(path).write_bytes(data)
    except OSError as error:
        raise ScatterIOError(f"cannot write {path}: {error}") from error


def _read_sidecar(path: PathLike) -> Optional[Dict[str, Any]]:
    sidecar = sidecar_path(path)
    if not sidecar.exists():
        return None
    try:
        return json.loads(sidecar.read_text(encoding="utf-8"))
    except OSError as error:
        raise ScatterIOError(f"cannot read {sidecar}: {error}") from error
    except ValueError as error:
        raise FormatError(f"sidecar {sidecar} is not valid JSON: {error}") from error


def _write_sidecar(path: PathLike, content: Dict[str, Any]) -> None:
    sidecar = sidecar_path(path)
    try:
        sidecar.write_text(json.dumps(content, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as error:
        raise ScatterIOError(f"cannot write {sidecar}: {error}") from error


def infer_plane_dims(pixels: int) -> Tuple[int, int]:
    """Square dims if pixels is a perfect square, otherwise a single row."""
    side = math.isqrt(pixels)
    return (side, side) if side * side == pixels else (1, pixels)


def encode_medium(medium: TransmissionMedium) -> bytes:
    rows, cols = medium.matrix.shape
    header = MEDIUM_MAGIC + struct.pack("<BII", medium.kind.code, rows, cols)
    if medium.kind is MediumKind.COHERENT:
        entries = np.empty((rows, cols, 2), dtype="<f8")
        entries[..., 0] = medium.matrix.real
        entries[..., 1] = medium.matrix.imag
    else:
        entries = np.asarray(medium.matrix, dtype="<f8")
    return header + entries.tobytes()


def decode_medium(data: bytes, spec: Optional[MediumSpec] = None) -> TransmissionMedium:
    """Parse a .stm byte string.

    Parameters
    ----------
    data : bytes
        file content
    spec : MediumSpec, optional
        spec from the sidecar; without it the plane dims are inferred
        and the seed is 0

    Raises
    ------
    FormatError
        If magic, kind byte or entries are invalid or bytes trail.
    TruncationError
        If data ends early.
    ConsistencyError
        If spec does not match the stored matrix shape.
    """
    index = _check_magic(data, MEDIUM_MAGIC)
    (code, rows, cols), index = _get_struct(data, "<BII", index, "medium header")
    try:
        kind = MediumKind.from_code(code)
    except ValueError as error:
        raise FormatError("unknown medium kind byte", expected=(0, 1), actual=code) from error
    _check_positive_dims(rows, cols)
    _plane_pixels(1, rows, "medium output plane")
    _plane_pixels(1, cols, "medium input plane")
    if kind is MediumKind.COHERENT:
        entries, index = _get_array(data, "<f8", 2 * rows * cols, index, "medium entries")
        matrix = (entries[0::2] + 1j * entries[1::2]).reshape(rows, cols)
    else:
        entries, index = _get_array(data, "<f8", rows * cols, index, "medium entries")
        matrix = entries.reshape(rows, cols)
    _check_end(data, index)
    if spec is None:
        spec = MediumSpec(kind, infer_plane_dims(cols), infer_plane_dims(rows), 0)
    elif (spec.out_pixels, spec.in_pixels) != (rows, cols) or MediumKind(spec.kind) is not kind:
        raise ConsistencyError("medium sidecar does not match the .stm header")
    try:
        return TransmissionMedium(spec, matrix)
    except (InvalidSpecError, ShapeError) as error:
        raise FormatError(f"invalid medium entries: {error}") from error


def save_medium(medium: TransmissionMedium, path: PathLike) -> None:
    """Write a medium as .stm file plus JSON sidecar."""
    _write_bytes(path, encode_medium(medium))
    _write_sidecar(path, {"medium_spec": medium.spec.to_dict()})
    _LOGGER.info("saved medium to %s", path)


def load_medium(path: PathLike) -> TransmissionMedium:
    """Read a .stm file, using its sidecar when present."""
    data = _read_bytes(path)
    sidecar = _read_sidecar(path)
    spec = None
    if sidecar is not None:
        try:
            spec = MediumSpec.from_dict(sidecar["medium_spec"])
        except (KeyError, TypeError, InvalidSpecError) as error:
            raise FormatError(f"invalid medium sidecar: {error}") from error
    return decode_medium(data, spec)


def encode_dataset(dataset: Dataset) -> bytes:
    count = len(dataset)
    target_h, target_w = dataset.target_dims
    speckle_h, speckle_w = dataset.speckle_dims
    header = DATASET_MAGIC + struct.pack(
        "<IIIII", count, target_h, target_w, speckle_h, speckle_w
    )
    pairs = np.concatenate(
        [
            dataset.targets().reshape(count, target_h * target_w).astype("<f4"),
            dataset.speckles().reshape(count, speckle_h * speckle_w).astype("<f4"),
        ],
        axis=1,
    )
    return header + pairs.tobytes()


def decode_dataset(
    data: bytes, spec: Optional[DatasetSpec] = None, medium_fingerprint: int = 0
) -> Dataset:
    """Parse a .sds byte string.

    A stream announcing more pairs than it holds raises a
    TruncationError at the offset of the first incomplete pair.

    Raises
    ------
    FormatError
        If the magic is wrong, values are out of range or bytes trail.
    TruncationError
        If data ends early.
    """
    index = _check_magic(data, DATASET_MAGIC)
    (count, target_h, target_w, speckle_h, speckle_w), index = _get_struct(
        data, "<IIIII", index, "dataset header"
    )
    _check_positive_dims(target_h, target_w, speckle_h, speckle_w)
    target_size = _plane_pixels(target_h, target_w, "target plane")
    pair_size = 4 * (target_size + _plane_pixels(speckle_h, speckle_w, "speckle plane"))
    complete = (len(data) - index) // pair_size
    if complete < count:
        raise TruncationError(
            f"dataset holds {complete} of {count} pairs", offset=index + complete * pair_size
        )
    values, index = _get_array(
        data, "<f4", count * pair_size // 4, index, "dataset pairs"
    )
    _check_end(data, index)
    values = values.reshape(count, pair_size // 4)
    targets = values[:, :target_size].reshape(count, target_h, target_w)
    speckles = values[:, target_size:].reshape(count, speckle_h, speckle_w)
    if not (np.all(np.isfinite(values)) and np.all(targets >= 0) and np.all(targets <= 1)):
        raise FormatError("dataset targets must be finite values in [0, 1]")
    if np.any(speckles < 0):
        raise FormatError("dataset speckles must be nonnegative")
    if spec is None:
        return Dataset.from_arrays(targets, speckles, medium_fingerprint=medium_fingerprint)
    if spec.count != count or tuple(spec.target_dims) != (target_h, target_w):
        raise ConsistencyError("dataset sidecar does not match the .sds header")
    return Dataset(spec, medium_fingerprint, targets, speckles)


def save_dataset(dataset: Dataset, path: PathLike) -> None:
    """Write a dataset as .sds file plus JSON sidecar."""
    _write_bytes(path, encode_dataset(dataset))
    _write_sidecar(
        path,
        {
            "dataset_spec": dataset.spec.to_dict(),
            "medium_fingerprint": dataset.medium_fingerprint,
            "labels": dataset.labels,
        },
    )
    _LOGGER.info("saved dataset with %d pairs to %s", len(dataset), path)


def load_dataset(path: PathLike) -> Dataset:
    """Read a .sds file, using its sidecar when present."""
    data = _read_bytes(path)
    sidecar = _read_sidecar(path)
    if sidecar is None:
        return decode_dataset(data)
    try:
        spec = DatasetSpec.from_dict(sidecar["dataset_spec"])
        medium_hash = int(sidecar["medium_fingerprint"])
    except (KeyError, TypeError, ValueError, ScatterSimError) as error:
        raise FormatError(f"invalid dataset sidecar: {error}") from error
    dataset = decode_dataset(data, spec, medium_hash)
    labels = sidecar.get("labels")
    if isinstance(labels, list) and len(labels) == len(dataset):
        dataset = Dataset(
            spec, medium_hash, dataset.targets(), dataset.speckles(), labels=labels
        )
    return dataset


def encode_mapping(mapping: LearnedMapping) -> bytes:
    in_h, in_w = mapping.in_dims
    out_h, out_w = mapping.out_dims
    header = MAPPING_MAGIC + struct.pack(
        "<BIIIIQ", mapping.kind.code, in_h, in_w, out_h, out_w, mapping.training_fingerprint
    )
    if mapping.kind is MappingKind.SMALL_NET:
        widths = mapping.layer_dims
        header += struct.pack(f"<I{len(widths)}I", len(widths), *widths)
    blocks = b"".join(np.asarray(param, dtype="<f8").tobytes() for param in mapping.params)
    return header + blocks


def decode_mapping(data: bytes) -> LearnedMapping:
    """Parse a .slm byte string.

    Raises
    ------
    FormatError
        If magic, kind byte, layer widths or parameters are invalid.
    TruncationError
        If data ends early.
    """
    index = _check_magic(data, MAPPING_MAGIC)
    (code, in_h, in_w, out_h, out_w, training_hash), index = _get_struct(
        data, "<BIIIIQ", index, "mapping header"
    )
    try:
        kind = MappingKind.from_code(code)
    except ValueError as error:
        raise FormatError("unknown mapping kind byte", expected=(0, 1), actual=code) from error
    _check_positive_dims(in_h, in_w, out_h, out_w)
    n_in = _plane_pixels(in_h, in_w, "speckle plane")
    n_out = _plane_pixels(out_h, out_w, "target plane")
    if kind is MappingKind.RIDGE_AFFINE:
        shapes = [(n_out, n_in), (n_out,), (n_in,)]
    else:
        (n_widths,), index = _get_struct(data, "<I", index, "layer count")
        if n_widths != 3:
            raise FormatError("unsupported number of layer widths", expected=3, actual=n_widths)
        widths, index = _get_struct(data, "<3I", index, "layer widths")
        if widths[0] != n_in or widths[2] != n_out or widths[1] == 0:
            raise FormatError(
                "layer widths do not match the dims", expected=(n_in, "hidden", n_out), actual=widths
            )
        hidden = _plane_pixels(1, widths[1], "hidden layer")
        shapes = [(hidden, n_in), (hidden,), (n_out, hidden), (n_out,)]
    params = []
    for number, shape in enumerate(shapes):
        values, index = _get_array(
            data, "<f8", int(np.prod(shape)), index, f"parameter block {number}"
        )
        if not np.all(np.isfinite(values)):
            raise FormatError(f"parameter block {number} holds non-finite values")
        params.append(values.reshape(shape))
    _check_end(data, index)
    return LearnedMapping(kind, (in_h, in_w), (out_h, out_w), params, training_hash)


def save_mapping(mapping: LearnedMapping, path: PathLike) -> None:
    """Write a mapping as .slm file."""
    _write_bytes(path, encode_mapping(mapping))
    _LOGGER.info("saved %s mapping to %s", mapping.kind.value, path)


def load_mapping(path: PathLike) -> LearnedMapping:
    """Read a .slm file."""
    return decode_mapping(_read_bytes(path))
