"""
Tensor file service.

Reads and writes the FBVT binary tensor format:

    magic    4 bytes  b"FBVT"
    version  u16      1
    dtype    u8       0=f32 1=f64 2=u8 3=u16 4=i32
    rank     u8
    dims     u32 x rank
    payload  row-major, little-endian

All integers are little-endian. Writes go to a temporary file in the target
directory and are renamed into place.
"""

import os
import struct
import tempfile
from pathlib import Path
from typing import Dict, Union

import numpy as np

from fisheye_bev.utils.errors import DataError
from fisheye_bev.utils.logger import setup_logger

logger = setup_logger(__name__)

MAGIC = b'FBVT'
VERSION = 1
HEADER = struct.Struct('<4sHBB')

DTYPE_CODES = {
    0: np.dtype('<f4'),
    1: np.dtype('<f8'),
    2: np.dtype('u1'),
    3: np.dtype('<u2'),
    4: np.dtype('<i4'),
}
CODE_FOR_KIND = {(np.dtype(dt).kind, np.dtype(dt).itemsize): code for code, dt in DTYPE_CODES.items()}

PathLike = Union[str, Path]


def _storage_dtype(array: np.ndarray) -> np.dtype:
    if array.dtype == bool:
        return DTYPE_CODES[2]
    key = (array.dtype.kind, array.dtype.itemsize)
    if key in CODE_FOR_KIND:
        return DTYPE_CODES[CODE_FOR_KIND[key]]
    if array.dtype.kind in 'iu':
        # wider integers narrow to i32 when every value fits
        info = np.iinfo(np.int32)
        if array.size and (array.min() < info.min or array.max() > info.max):
            raise DataError("Integer tensor values exceed the i32 range of the tensor format")
        return DTYPE_CODES[4]
    if array.dtype.kind == 'f':
        return DTYPE_CODES[1]
    raise DataError(f"dtype {array.dtype} has no tensor-format code")


def encode_tensor(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    dtype = _storage_dtype(array)
    code = CODE_FOR_KIND[(dtype.kind, dtype.itemsize)]
    if array.ndim > 255:
        raise DataError(f"Tensor rank {array.ndim} exceeds 255")
    if any(dim > 0xFFFFFFFF for dim in array.shape):
        raise DataError(f"Tensor dimension exceeds u32: {array.shape}")
    header = HEADER.pack(MAGIC, VERSION, code, array.ndim)
    dims = struct.pack(f'<{array.ndim}I', *array.shape)
    payload = np.ascontiguousarray(array, dtype=dtype).tobytes(order='C')
    return header + dims + payload


def decode_tensor(content: bytes, source: str = '<bytes>') -> np.ndarray:
    """
    Decode FBVT bytes.

    Raises:
        DataError: bad magic, unsupported version or dtype, or truncated payload
            (the message names the source)
    """
    if len(content) < HEADER.size:
        raise DataError(f"{source}: file too short for a tensor header ({len(content)} bytes)")
    magic, version, code, rank = HEADER.unpack_from(content)
    if magic != MAGIC:
        raise DataError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise DataError(f"{source}: unsupported tensor version {version}, expected {VERSION}")
    if code not in DTYPE_CODES:
        raise DataError(f"{source}: unknown dtype code {code}")
    offset = HEADER.size + 4 * rank
    if len(content) < offset:
        raise DataError(f"{source}: truncated dimension list")
    dims = struct.unpack_from(f'<{rank}I', content, HEADER.size)
    dtype = DTYPE_CODES[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(content) - offset != expected:
        raise DataError(
            f"{source}: payload is {len(content) - offset} bytes, expected {expected} for {dims} {dtype.name}"
        )
    return np.frombuffer(content, dtype=dtype, offset=offset).reshape(dims).copy()


def atomic_write(path: PathLike, content: bytes) -> Path:
    """Write bytes to path through a temporary file and os.replace."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, 'wb') as handle:
            handle.write(content)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path


def write_tensor(path: PathLike, array: np.ndarray) -> Path:
    path = atomic_write(path, encode_tensor(array))
    logger.debug(f"Wrote tensor {np.shape(array)} to {path}")
    return path


def read_tensor(path: PathLike) -> np.ndarray:
    """
    Read an FBVT file.

    Raises:
        DataError: missing or malformed file (the message names the file)
    """
    path = Path(path)
    try:
        content = path.read_bytes()
    except OSError as e:
        raise DataError(f"{path}: cannot read tensor file ({e.strerror})")
    return decode_tensor(content, str(path))


def write_tensors(directory: PathLike, tensors: Dict[str, np.ndarray]) -> None:
    for name, array in tensors.items():
        write_tensor(Path(directory) / f"{name}.fbvt", array)


def write_text(path: PathLike, text: str) -> Path:
    return atomic_write(path, text.encode('utf-8'))
