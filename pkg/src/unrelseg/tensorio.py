"""Binary tensor container and the named-tensor checkpoint wrapper.

Container layout (all integers little-endian):

    magic "U2TN" (4 bytes) | version u16 | dtype u8 | ndim u8 |
    dim u32 * ndim | raw row-major payload

dtype codes: 0 = float64, 1 = float32, 2 = int32, 3 = uint8.

Checkpoint layout: u32 tensor count, then per tensor
    u16 name length | UTF-8 name | one container record.
"""

import io
import struct

import numpy as np

MAGIC = b"U2TN"
VERSION = 1

_DTYPE_TO_CODE = {
    np.dtype("<f8"): 0,
    np.dtype("<f4"): 1,
    np.dtype("<i4"): 2,
    np.dtype("u1"): 3,
}
_CODE_TO_DTYPE = {v: k for k, v in _DTYPE_TO_CODE.items()}


def _dtype_code(arr):
    dt = np.dtype(arr.dtype)
    if dt == np.float64:
        return 0
    if dt == np.float32:
        return 1
    if dt == np.int32:
        return 2
    if dt == np.uint8:
        return 3
    raise ValueError(f"unsupported dtype for tensor container: {arr.dtype}")


def write_tensor_stream(fh, arr):
    arr = np.asarray(arr)
    if not arr.flags.c_contiguous:
        arr = arr.copy(order="C")
    code = _dtype_code(arr)
    if arr.ndim > 255:
        raise ValueError("too many dimensions")
    fh.write(MAGIC)
    fh.write(struct.pack("<HBB", VERSION, code, arr.ndim))
    for d in arr.shape:
        fh.write(struct.pack("<I", d))
    fh.write(arr.astype(_CODE_TO_DTYPE[code], copy=False).tobytes(order="C"))


def read_tensor_stream(fh):
    magic = fh.read(4)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version, code, ndim = struct.unpack("<HBB", fh.read(4))
    if version != VERSION:
        raise ValueError(f"unsupported container version {version}")
    if code not in _CODE_TO_DTYPE:
        raise ValueError(f"unknown dtype code {code}")
    dims = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(ndim))
    dtype = _CODE_TO_DTYPE[code]
    count = int(np.prod(dims, dtype=np.int64)) if dims else 1
    raw = fh.read(count * dtype.itemsize)
    if len(raw) != count * dtype.itemsize:
        raise ValueError("truncated tensor payload")
    return np.frombuffer(raw, dtype=dtype).reshape(dims).copy()


def write_tensor(path, arr):
    with open(path, "wb") as fh:
        write_tensor_stream(fh, arr)


def read_tensor(path):
    with open(path, "rb") as fh:
        return read_tensor_stream(fh)


def save_checkpoint(path, tensors):
    """Write an ordered name -> array mapping; order is preserved on disk."""
    buf = io.BytesIO()
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        raw_name = name.encode("utf-8")
        if len(raw_name) > 0xFFFF:
            raise ValueError(f"tensor name too long: {name}")
        buf.write(struct.pack("<H", len(raw_name)))
        buf.write(raw_name)
        write_tensor_stream(buf, arr)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path):
    out = {}
    with open(path, "rb") as fh:
        (count,) = struct.unpack("<I", fh.read(4))
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            out[name] = read_tensor_stream(fh)
    return out
