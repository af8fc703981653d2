#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# pylint: disable=redefined-outer-name,unused-argument
"""Test contents of uvbody.fsdata module."""
import struct
import zlib

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp
from PIL import Image

from uvbody.body_model import Mesh
from uvbody.fsdata import (
    MAGIC,
    BadMagicError,
    ChecksumError,
    ContainerError,
    TensorFile,
    TruncatedContainerError,
    UnsupportedDTypeError,
    decode_tensor,
    encode_tensor,
    export_obj,
    load_tensor,
    read_csv,
    save_tensor,
    write_csv,
    write_index_png,
    write_mask_png,
    write_obj,
)

st_dtype = st.sampled_from(["<f4", "<f8", "u1", "?", "<i4", "<i8"])
st_array = st_dtype.flatmap(
    lambda dtype: hnp.arrays(
        dtype=dtype, shape=hnp.array_shapes(min_dims=0, max_dims=4, min_side=0)
    )
)

pytestmark = pytest.mark.usefixtures("logfix")


def _with_crc(body: bytes) -> bytes:
    return body + struct.pack("<I", zlib.crc32(body))


class TestContainer:
    """Test the binary tensor container."""

    @staticmethod
    @given(array=st_array)
    def test_arrays_survive_the_container(array):
        """Test dtype, shape and bytes come back unchanged."""

        decoded = decode_tensor(encode_tensor(array))
        assert decoded.dtype == array.dtype
        assert decoded.shape == array.shape
        assert decoded.tobytes() == array.tobytes()

    @staticmethod
    def test_layout():
        """Test magic, type code, rank, dims and CRC placement."""

        data = encode_tensor(np.arange(6, dtype="<i4").reshape(2, 3))
        assert data[:4] == MAGIC
        assert data[4:6] == bytes([5, 2])
        assert struct.unpack_from("<QQ", data, 6) == (2, 3)
        assert len(data) == 4 + 2 + 16 + 24 + 4
        assert struct.unpack("<I", data[-4:])[0] == zlib.crc32(data[:-4])

    @staticmethod
    def test_big_endian_input_is_stored_little_endian():
        """Test non-native byte order is normalized."""

        array = np.arange(4, dtype=">f8")
        decoded = decode_tensor(encode_tensor(array))
        assert decoded.dtype == np.dtype("<f8")
        np.testing.assert_array_equal(decoded, array)

    @staticmethod
    def test_bad_magic():
        """Test foreign files are rejected."""

        data = encode_tensor(np.zeros(3))
        with pytest.raises(BadMagicError):
            decode_tensor(b"XXXX" + data[4:])

    @staticmethod
    @pytest.mark.parametrize("keep", [4, 5, 10, 20])
    def test_truncation(keep):
        """Test containers cut short are rejected."""

        data = encode_tensor(np.zeros((2, 2)))
        with pytest.raises(TruncatedContainerError):
            decode_tensor(data[:keep])

    @staticmethod
    def test_trailing_bytes():
        """Test extra bytes after the CRC are rejected."""

        with pytest.raises(ContainerError):
            decode_tensor(encode_tensor(np.zeros(3)) + b"\x00")

    @staticmethod
    def test_flipped_payload_bit():
        """Test payload corruption fails the checksum."""

        data = bytearray(encode_tensor(np.ones(4)))
        data[-6] ^= 0x01
        with pytest.raises(ChecksumError):
            decode_tensor(bytes(data))

    @staticmethod
    def test_unsupported_types():
        """Test complex arrays and unknown type codes are rejected."""

        with pytest.raises(UnsupportedDTypeError):
            encode_tensor(np.zeros(2, dtype=np.complex128))
        body = MAGIC + bytes([9, 1]) + struct.pack("<Q", 0)
        with pytest.raises(UnsupportedDTypeError):
            decode_tensor(_with_crc(body))

    @staticmethod
    def test_invalid_boolean_payload():
        """Test booleans other than 0 and 1 are rejected."""

        body = MAGIC + bytes([4, 1]) + struct.pack("<Q", 2) + bytes([1, 2])
        with pytest.raises(ContainerError):
            decode_tensor(_with_crc(body))

    @staticmethod
    def test_errors_are_value_errors():
        """Test every container error is a ValueError."""

        for error in (
            BadMagicError,
            TruncatedContainerError,
            ChecksumError,
            UnsupportedDTypeError,
        ):
            assert issubclass(error, ContainerError)
        assert issubclass(ContainerError, ValueError)


class TestTensorFile:
    """Test container files on disk."""

    @staticmethod
    def test_save_and_load(tmp_path):
        """Test files are written under new directories and read back."""

        path = tmp_path / "nested" / "dir" / "values.uvb"
        save_tensor(path, np.eye(3))
        np.testing.assert_array_equal(load_tensor(path), np.eye(3))

    @staticmethod
    def test_missing_file(tmp_path):
        """Test missing files and directories raise OSError."""

        with pytest.raises(OSError):
            TensorFile(tmp_path / "missing.uvb").read()
        with pytest.raises(OSError):
            TensorFile(tmp_path).validate()


class TestExports:
    """Test OBJ, PNG and CSV writers."""

    @staticmethod
    def test_obj_text():
        """Test vertex lines and 1-based faces."""

        mesh = Mesh(
            vertices=np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.5, -2.0]]),
            faces=np.array([[0, 1, 2]]),
        )
        lines = export_obj(mesh).splitlines()
        assert lines[0] == "v 0.000000000 0.000000000 0.000000000"
        assert lines[2] == "v 0.000000000 1.500000000 -2.000000000"
        assert lines[3] == "f 1 2 3"
        assert len(lines) == 4

    @staticmethod
    def test_obj_file(tmp_path, model):
        """Test a full body writes one line per vertex and face."""

        mesh = Mesh(vertices=model.template_vertices, faces=model.faces)
        path = tmp_path / "out" / "body.obj"
        write_obj(path, mesh)
        lines = path.read_text().splitlines()
        assert sum(line.startswith("v ") for line in lines) == model.num_vertices
        assert sum(line.startswith("f ") for line in lines) == len(model.faces)

    @staticmethod
    def test_index_png(tmp_path):
        """Test indices and palette read back through PIL."""

        index = np.array([[0, 1], [2, 1]])
        palette = [(0, 0, 0), (255, 0, 0), (0, 255, 0)]
        path = tmp_path / "parts.png"
        write_index_png(path, index, palette)
        with Image.open(path) as image:
            assert image.mode == "P"
            np.testing.assert_array_equal(np.asarray(image), index)
            assert image.getpalette()[3:6] == [255, 0, 0]
        with pytest.raises(ValueError):
            write_index_png(path, np.array([[3]]), palette)
        with pytest.raises(ValueError):
            write_index_png(path, np.array([[-1]]), palette)

    @staticmethod
    def test_mask_png(tmp_path):
        """Test masks become 0 and 255."""

        path = tmp_path / "mask.png"
        write_mask_png(path, np.array([[True, False]]))
        with Image.open(path) as image:
            assert image.mode == "L"
            assert np.asarray(image).tolist() == [[255, 0]]

    @staticmethod
    def test_csv(tmp_path):
        """Test header, float formatting and read back."""

        path = tmp_path / "metrics.csv"
        write_csv(path, ["sample", "mpjpe"], [{"sample": 0, "mpjpe": 1.0 / 3.0}])
        assert path.read_text().splitlines() == ["sample,mpjpe", "0,0.3333333333"]
        assert read_csv(path) == [{"sample": "0", "mpjpe": "0.3333333333"}]
