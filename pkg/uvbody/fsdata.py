#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Tools for reading and writing uvbody data on the local filesystem.

Tensors use a small binary container::

    magic "UVB1" | type code u8 | rank u8 | dims u64 LE * rank |
    payload (row-major, little endian) | CRC32 u32 LE of everything before it
"""
import csv
import os
import struct
import typing as t
import zlib
from pathlib import Path

import numpy as np
from PIL import Image

from uvbody.body_model import Mesh
from uvbody.logging import get as get_logger

MAGIC = b"UVB1"
_HEADER = struct.Struct("<BB")
_DIM = struct.Struct("<Q")
_CRC = struct.Struct("<I")

# type code: little-endian dtype
TYPE_CODES: t.Dict[int, np.dtype] = {
    1: np.dtype("<f4"),
    2: np.dtype("<f8"),
    3: np.dtype("u1"),
    4: np.dtype("?"),
    5: np.dtype("<i4"),
    6: np.dtype("<i8"),
}
_CODE_OF = {dtype: code for code, dtype in TYPE_CODES.items()}


class ContainerError(ValueError):
    """Base class for unreadable tensor containers."""


class BadMagicError(ContainerError):
    """Raised when the leading magic bytes are wrong."""


class TruncatedContainerError(ContainerError):
    """Raised when the container ends before its header or payload does."""


class ChecksumError(ContainerError):
    """Raised when the trailing CRC32 does not match the content."""


class UnsupportedDTypeError(ContainerError):
    """Raised for element types outside the container's type table."""


def encode_tensor(array: np.ndarray) -> bytes:
    """
    Serialize an array to container bytes.

    Raises
    ------
    UnsupportedDTypeError
        if the dtype has no type code.
    """

    array = np.asarray(array)
    code = _CODE_OF.get(array.dtype.newbyteorder("<"))
    if code is None:
        raise UnsupportedDTypeError(f"Cannot store arrays of dtype {array.dtype}")
    data = np.ascontiguousarray(array, dtype=TYPE_CODES[code])
    parts = [MAGIC, _HEADER.pack(code, data.ndim)]
    parts += [_DIM.pack(dim) for dim in data.shape]
    parts.append(data.tobytes(order="C"))
    body = b"".join(parts)
    return body + _CRC.pack(zlib.crc32(body))


def decode_tensor(data: bytes) -> np.ndarray:
    """
    Parse container bytes back into an array.

    Raises
    ------
    BadMagicError
    TruncatedContainerError
    ChecksumError
    UnsupportedDTypeError
    ContainerError
        for trailing bytes or invalid boolean payloads.
    """

    if data[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f"Bad magic {data[:len(MAGIC)]!r}, expected {MAGIC!r}")
    offset = len(MAGIC)
    if len(data) < offset + _HEADER.size:
        raise TruncatedContainerError("Container ends inside its header")
    code, rank = _HEADER.unpack_from(data, offset)
    offset += _HEADER.size
    if code not in TYPE_CODES:
        raise UnsupportedDTypeError(f"Unknown element type code {code}")
    if len(data) < offset + rank * _DIM.size:
        raise TruncatedContainerError("Container ends inside its dimensions")
    shape = tuple(
        _DIM.unpack_from(data, offset + i * _DIM.size)[0] for i in range(rank)
    )
    offset += rank * _DIM.size
    dtype = TYPE_CODES[code]
    payload_size = int(np.prod(shape, dtype=object)) * dtype.itemsize
    expected = offset + payload_size + _CRC.size
    if len(data) < expected:
        raise TruncatedContainerError(
            f"Container has {len(data)} bytes, header promises {expected}"
        )
    if len(data) > expected:
        raise ContainerError(
            f"Container has {len(data) - expected} trailing bytes"
        )
    (stored,) = _CRC.unpack_from(data, expected - _CRC.size)
    if zlib.crc32(data[: expected - _CRC.size]) != stored:
        raise ChecksumError("CRC32 mismatch")
    payload = data[offset : offset + payload_size]
    if code == 4 and any(byte > 1 for byte in payload):
        raise ContainerError("Boolean payload holds values other than 0 and 1")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


class TensorFile:
    """
    Wrap a pathlib.Path holding one tensor container.

    Parameters
    ----------
    path : Path or str
    """

    __slots__ = ("path",)

    def __init__(self, path: t.Union[str, Path]):
        self.path: Path = Path(path)

    def validate(self):
        """
        Check that the file is safe to read.

        Raises
        ------
        OSError
            if the path is missing, not a file or unreadable.
        """

        checks = (
            (lambda p: p.exists(), "Path does not exist"),
            (lambda p: p.is_file(), "Path is not a file"),
            (lambda p: os.access(p, os.R_OK), "Path is not readable"),
        )
        for check, msg in checks:
            if not check(self.path):
                raise OSError(f"{msg}: {self.path}")

    def read(self) -> np.ndarray:
        """Validate, read and decode."""

        self.validate()
        return decode_tensor(self.path.read_bytes())

    def write(self, array: np.ndarray):
        """Encode and write, creating parent directories."""

        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_bytes(encode_tensor(array))
        get_logger("TensorFile").debug(
            "Wrote %s with shape %s", self.path, np.shape(array)
        )


def save_tensor(path: t.Union[str, Path], array: np.ndarray):
    """Write one array to a container file."""

    TensorFile(path).write(array)


def load_tensor(path: t.Union[str, Path]) -> np.ndarray:
    """Read one array from a container file."""

    return TensorFile(path).read()


def export_obj(mesh: Mesh) -> str:
    """Wavefront OBJ text with ``v`` lines and 1-based ``f`` lines."""

    lines = [f"v {x:.9f} {y:.9f} {z:.9f}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    return "\n".join(lines) + "\n"


def write_obj(path: t.Union[str, Path], mesh: Mesh):
    """Write a mesh as OBJ."""

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(export_obj(mesh))


def write_index_png(
    path: t.Union[str, Path],
    index: np.ndarray,
    palette: t.Sequence[t.Tuple[int, int, int]],
):
    """
    Write an indexed-colour PNG.

    Parameters
    ----------
    path : Path or str
    index : np.ndarray
        H x W palette indices in [0, len(palette)).
    palette : sequence of RGB tuples
    """

    index = np.asarray(index)
    if index.min(initial=0) < 0 or index.max(initial=0) >= len(palette):
        raise ValueError(
            f"Palette indices must lie in [0, {len(palette)}), got "
            f"[{index.min()}, {index.max()}]"
        )
    image = Image.fromarray(index.astype(np.uint8), mode="P")
    image.putpalette([channel for rgb in palette for channel in rgb])
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    image.save(path, format="PNG")


def write_mask_png(path: t.Union[str, Path], mask: np.ndarray):
    """Write a boolean mask as a black and white PNG."""

    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(
        path, format="PNG"
    )


def _format_cell(value: t.Any) -> str:
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


def write_csv(
    path: t.Union[str, Path],
    fieldnames: t.Sequence[str],
    rows: t.Iterable[t.Mapping[str, t.Any]],
):
    """Write rows with a header; floats use a fixed format for byte stability."""

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.DictWriter(
            handle, fieldnames=list(fieldnames), lineterminator="\n"
        )
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _format_cell(row[k]) for k in fieldnames})


def read_csv(path: t.Union[str, Path]) -> t.List[t.Dict[str, str]]:
    """Read rows written by `write_csv`."""

    with Path(path).open(newline="") as handle:
        return list(csv.DictReader(handle))
