"""Flat tensor container used for model and trainer checkpoints.

Layout (all integers little-endian)::

    magic      4 bytes   b"PCKP"
    version    u32       FORMAT_VERSION
    width      u32       scalar width in bytes (4 or 8)
    count      u32       number of tensor records
    meta_len   u32       length of the UTF-8 JSON metadata block
    meta       meta_len bytes
    records    count x { name_len u32, name bytes (UTF-8), ndim u32,
                         dims ndim x u32, values prod(dims) x width bytes }
    checksum   8 bytes   first 8 bytes of SHA-256 over everything before it

Values are IEEE little-endian floats of the declared width.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile

import numpy as np

from .errors import CheckpointError

MAGIC = b"PCKP"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIII")


def atomic_write_bytes(path, payload: bytes) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode(tensors: dict, meta: dict | None = None, width: int = 8) -> bytes:
    if width not in (4, 8):
        raise CheckpointError(f"unsupported scalar width {width}")
    dtype = np.dtype("<f4" if width == 4 else "<f8")
    meta_bytes = json.dumps(meta or {}, sort_keys=True, separators=(",", ":")).encode()
    parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, width, len(tensors), len(meta_bytes)), meta_bytes]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        raw_name = name.encode()
        parts.append(struct.pack("<I", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=dtype).tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()[:8]


def decode(payload: bytes) -> tuple[dict, dict, int]:
    """Parse a container; returns (tensors, meta, width). Raises CheckpointError."""
    if len(payload) < _HEADER.size + 8:
        raise CheckpointError("checkpoint truncated (no header)")
    body, checksum = payload[:-8], payload[-8:]
    magic, version, width, count, meta_len = _HEADER.unpack_from(body, 0)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint container (bad magic)")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if width not in (4, 8):
        raise CheckpointError(f"unsupported scalar width {width}")
    if hashlib.sha256(body).digest()[:8] != checksum:
        raise CheckpointError("checkpoint checksum mismatch (truncated or corrupt)")
    dtype = np.dtype("<f4" if width == 4 else "<f8")
    pos = _HEADER.size
    try:
        meta = json.loads(body[pos:pos + meta_len].decode())
        pos += meta_len
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", body, pos)
            pos += 4
            name = body[pos:pos + name_len].decode()
            pos += name_len
            (ndim,) = struct.unpack_from("<I", body, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}I", body, pos)
            pos += 4 * ndim
            n = int(np.prod(shape, dtype=np.int64))
            nbytes = n * width
            if pos + nbytes > len(body):
                raise CheckpointError(f"record {name!r} runs past end of file")
            tensors[name] = np.frombuffer(body, dtype=dtype, count=n, offset=pos).reshape(shape).copy()
            pos += nbytes
    except (struct.error, UnicodeDecodeError, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from exc
    if pos != len(body):
        raise CheckpointError("trailing bytes after last record")
    return tensors, meta, width


def save(path, tensors: dict, meta: dict | None = None, width: int = 8) -> None:
    atomic_write_bytes(path, encode(tensors, meta, width))


def load(path) -> tuple[dict, dict, int]:
    try:
        with open(path, "rb") as fh:
            payload = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode(payload)


def file_digest(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()
