"""Parameter checkpoint format (little-endian throughout):

    b"XMCK"  u32 version  u32 meta_len  meta (UTF-8 JSON)  u32 count
    per parameter:
        u16 name_len  name (UTF-8)  u8 dtype (0=float32, 1=float64)
        u8 ndim  u32 dims[ndim]  payload (float, row-major)
"""
import json
import struct

import numpy as np

from ..errors import FormatError, VersionError

MAGIC = b"XMCK"
VERSION = 1
_DTYPES = {0: "<f4", 1: "<f8"}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def save_parameters(params, path, meta=None):
    with open(path, "wb") as f:
        blob = json.dumps(meta or {}, sort_keys=True).encode()
        f.write(MAGIC + struct.pack("<II", VERSION, len(blob)) + blob)
        f.write(struct.pack("<I", len(params)))
        for p in params:
            name = p.name.encode()
            arr = p.data
            f.write(struct.pack("<H", len(name)) + name)
            f.write(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype=_DTYPES[_CODES[arr.dtype]]).tobytes())


def load_parameters(path):
    """Return ``(meta, {name: array})`` in file order."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint")
    version, meta_len = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise VersionError(f"{path}: checkpoint version {version}, expected {VERSION}")
    pos = 12
    meta = json.loads(raw[pos:pos + meta_len])
    pos += meta_len
    (count,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    arrays = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos:pos + nlen].decode()
        pos += nlen
        code, ndim = struct.unpack_from("<BB", raw, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}I", raw, pos)
        pos += 4 * ndim
        dt = np.dtype(_DTYPES[code])
        n = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(raw, dtype=dt, count=n, offset=pos).reshape(shape).astype(dt.newbyteorder("="))
        pos += n * dt.itemsize
    if pos != len(raw):
        raise FormatError(f"{path}: {len(raw) - pos} trailing bytes")
    return meta, arrays
