"""Binary tensor files and 16-bit grayscale PNG export.

Tensor file layout (all integers little-endian)::

    magic   8 bytes   b"KSLAB001"
    dtype   4 bytes   b"f64 " | b"c128" | b"u8  "
    rank    uint32
    dims    rank x uint64
    payload row-major little-endian values

Reading rejects truncated files, trailing bytes, unknown dtypes and NaN
payloads.
"""

from __future__ import annotations

import io
import struct

import numpy as np
from PIL import Image

from kslab.errors import TensorFormatError

MAGIC = b"KSLAB001"
_DTYPES = {
    b"f64 ": np.dtype("<f8"),
    b"c128": np.dtype("<c16"),
    b"u8  ": np.dtype("u1"),
}
_TAGS = {dtype: tag for tag, dtype in _DTYPES.items()}


def _tag_for(array):
    if np.iscomplexobj(array):
        return b"c128", array.astype("<c16", copy=False)
    if array.dtype == np.uint8 or array.dtype == np.bool_:
        return b"u8  ", array.astype("u1", copy=False)
    if np.issubdtype(array.dtype, np.number):
        return b"f64 ", array.astype("<f8", copy=False)
    raise TensorFormatError(f"unsupported dtype {array.dtype}")


def tensor_to_bytes(array):
    array = np.asarray(array)
    tag, data = _tag_for(array)
    header = MAGIC + tag + struct.pack("<I", data.ndim) + struct.pack(f"<{data.ndim}Q", *data.shape)
    return header + np.ascontiguousarray(data).tobytes()


def read_tensor_from(stream):
    """Read one tensor from a binary stream positioned at its magic."""
    head = stream.read(16)
    if len(head) != 16 or head[:8] != MAGIC:
        raise TensorFormatError("bad tensor magic")
    tag = head[8:12]
    if tag not in _DTYPES:
        raise TensorFormatError(f"unknown dtype tag {tag!r}")
    dtype = _DTYPES[tag]
    (rank,) = struct.unpack("<I", head[12:16])
    dims_raw = stream.read(8 * rank)
    if len(dims_raw) != 8 * rank:
        raise TensorFormatError("truncated tensor header")
    dims = struct.unpack(f"<{rank}Q", dims_raw)
    n_bytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    payload = stream.read(n_bytes)
    if len(payload) != n_bytes:
        raise TensorFormatError(f"payload has {len(payload)} bytes, expected {n_bytes}")
    array = np.frombuffer(payload, dtype=dtype).reshape(dims).copy()
    if dtype.kind in "fc" and np.isnan(array).any():
        raise TensorFormatError("tensor payload contains NaN")
    return array.astype(dtype.newbyteorder("="), copy=False)


def tensor_from_bytes(raw):
    stream = io.BytesIO(raw)
    array = read_tensor_from(stream)
    if stream.read(1):
        raise TensorFormatError("trailing bytes after tensor payload")
    return array


def write_tensor(path, array):
    with open(path, "wb") as fh:
        fh.write(tensor_to_bytes(array))


def read_tensor(path):
    with open(path, "rb") as fh:
        return tensor_from_bytes(fh.read())


def to_uint16(image, vmin=None, vmax=None):
    """Linearly map ``[vmin, vmax]`` (default: the image min and max) to 0..65535."""
    image = np.asarray(image, dtype=float)
    lo = float(image.min()) if vmin is None else float(vmin)
    hi = float(image.max()) if vmax is None else float(vmax)
    if hi <= lo:
        return np.zeros(image.shape, dtype=np.uint16)
    scaled = np.clip((image - lo) / (hi - lo), 0.0, 1.0)
    return np.round(scaled * 65535.0).astype(np.uint16)


def write_png16(path, image, vmin=None, vmax=None):
    """Save a 16-bit grayscale PNG, min-max normalized unless a range is given."""
    Image.fromarray(to_uint16(image, vmin, vmax)).save(path, format="PNG")


def read_png16(path):
    with Image.open(path) as img:
        return np.asarray(img)
