"""
Unit tests for the tensor file service.
"""

import struct

import numpy as np
import pytest

from fisheye_bev.services.tensor_io import (
    HEADER,
    MAGIC,
    decode_tensor,
    encode_tensor,
    read_tensor,
    write_tensor,
    write_tensors,
)
from fisheye_bev.utils.errors import DataError


pytestmark = pytest.mark.unit


class TestEncoding:
    """Test the header layout and dtype mapping."""

    def test_header_layout(self):
        content = encode_tensor(np.zeros((2, 3), dtype=np.float32))
        magic, version, code, rank = HEADER.unpack_from(content)
        assert (magic, version, code, rank) == (MAGIC, 1, 0, 2)
        assert struct.unpack_from('<2I', content, HEADER.size) == (2, 3)
        assert len(content) == HEADER.size + 8 + 6 * 4

    @pytest.mark.parametrize("dtype,code", [
        (np.float32, 0), (np.float64, 1), (np.uint8, 2), (np.uint16, 3), (np.int32, 4), (bool, 2),
    ])
    def test_dtype_codes(self, dtype, code):
        assert encode_tensor(np.zeros(4, dtype=dtype))[6] == code

    def test_int64_narrows_to_int32(self):
        decoded = decode_tensor(encode_tensor(np.array([-5, 0, 7], dtype=np.int64)))
        assert decoded.dtype == np.int32
        assert decoded.tolist() == [-5, 0, 7]

    def test_int64_overflow_rejected(self):
        with pytest.raises(DataError):
            encode_tensor(np.array([2 ** 40], dtype=np.int64))

    def test_complex_rejected(self):
        with pytest.raises(DataError):
            encode_tensor(np.zeros(2, dtype=np.complex128))

    def test_values_preserved_exactly(self, rng):
        array = rng.normal(size=(3, 4, 5))
        decoded = decode_tensor(encode_tensor(array))
        assert decoded.tobytes() == array.tobytes()

    def test_scalar_has_rank_zero(self):
        content = encode_tensor(np.float64(2.5))
        assert content[7] == 0
        assert decode_tensor(content) == 2.5


class TestDecodingErrors:
    """Test corrupt inputs."""

    @pytest.fixture
    def content(self):
        return encode_tensor(np.arange(6, dtype=np.float64).reshape(2, 3))

    def test_bad_magic(self, content):
        with pytest.raises(DataError) as exc_info:
            decode_tensor(b'XXXX' + content[4:], 'grid.fbvt')
        assert "grid.fbvt" in str(exc_info.value)
        assert "magic" in str(exc_info.value)

    def test_unsupported_version(self, content):
        with pytest.raises(DataError):
            decode_tensor(content[:4] + struct.pack('<H', 2) + content[6:])

    def test_unknown_dtype_code(self, content):
        with pytest.raises(DataError):
            decode_tensor(content[:6] + bytes([9]) + content[7:])

    def test_truncated_payload(self, content):
        with pytest.raises(DataError) as exc_info:
            decode_tensor(content[:-3])
        assert "payload" in str(exc_info.value)

    def test_trailing_bytes(self, content):
        with pytest.raises(DataError):
            decode_tensor(content + b'\x00')

    def test_short_header(self):
        with pytest.raises(DataError):
            decode_tensor(b'FBV')

    def test_truncated_dimensions(self, content):
        with pytest.raises(DataError):
            decode_tensor(content[:HEADER.size + 2])


class TestFiles:
    """Test reading and writing files."""

    def test_write_then_read(self, tmp_path, rng):
        array = rng.integers(0, 255, size=(4, 4)).astype(np.uint8)
        path = write_tensor(tmp_path / "sub" / "mask.fbvt", array)
        np.testing.assert_array_equal(read_tensor(path), array)

    def test_no_temporary_files_left(self, tmp_path):
        write_tensor(tmp_path / "a.fbvt", np.ones(3))
        assert [p.name for p in tmp_path.iterdir()] == ["a.fbvt"]

    def test_write_many(self, tmp_path):
        write_tensors(tmp_path, {'counts': np.ones((2, 2), dtype=np.int32), 'grid': np.zeros(3)})
        assert sorted(p.name for p in tmp_path.iterdir()) == ["counts.fbvt", "grid.fbvt"]

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError) as exc_info:
            read_tensor(tmp_path / "absent.fbvt")
        assert "absent.fbvt" in str(exc_info.value)
