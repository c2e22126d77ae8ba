"""Binary tensor containers.

``RCK1`` checkpoints store named tensors; ``RSF1`` feature caches store an
unnamed tensor list. Both are little-endian with float32 payloads::

    magic[4] u32 count
    per tensor: [u16 name_len, name utf-8]  (RCK1 only)
                u8 rank, u32 extent * rank, f32 * prod(extents)
"""

import os
import struct
import tempfile

import numpy as np

from .errors import FormatError

CHECKPOINT_MAGIC = b"RCK1"
CACHE_MAGIC = b"RSF1"


def atomic_write(path, payload):
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


def _encode_array(arr):
    arr = np.asarray(arr, dtype="<f4")
    if arr.ndim > 255:
        raise ValueError("rank exceeds 255")
    head = struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr).tobytes()


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated while reading {what}", offset=self.pos)
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def array(self):
        (rank,) = self.unpack("<B", "rank")
        shape = self.unpack(f"<{rank}I", "extents") if rank else ()
        count = int(np.prod(shape)) if rank else 1
        raw = self.take(4 * count, "payload")
        return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)


def encode_checkpoint(tensors):
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw + _encode_array(arr))
    return b"".join(parts)


def decode_checkpoint(buf):
    r = _Reader(buf)
    if r.take(4, "magic") != CHECKPOINT_MAGIC:
        raise FormatError("not an RCK1 checkpoint", offset=0)
    (count,) = r.unpack("<I", "count")
    out = {}
    for _ in range(count):
        at = r.pos
        (n,) = r.unpack("<H", "name length")
        name = r.take(n, "name").decode("utf-8")
        if name in out:
            raise FormatError(f"duplicate tensor name {name!r}", offset=at)
        out[name] = r.array()
    if r.pos != len(buf):
        raise FormatError("trailing bytes after last tensor", offset=r.pos)
    return out


def save_checkpoint(path, tensors):
    atomic_write(path, encode_checkpoint(tensors))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())


def encode_cache(arrays):
    parts = [CACHE_MAGIC, struct.pack("<I", len(arrays))]
    parts.extend(_encode_array(a) for a in arrays)
    return b"".join(parts)


def decode_cache(buf):
    r = _Reader(buf)
    if r.take(4, "magic") != CACHE_MAGIC:
        raise FormatError("not an RSF1 cache", offset=0)
    (count,) = r.unpack("<I", "count")
    arrays = [r.array() for _ in range(count)]
    if r.pos != len(buf):
        raise FormatError("trailing bytes after last tensor", offset=r.pos)
    return arrays


def save_cache(path, arrays):
    atomic_write(path, encode_cache(arrays))


def load_cache(path):
    with open(path, "rb") as fh:
        return decode_cache(fh.read())


def config_tensors(prefix, mapping):
    """Scalars as rank-0 tensors named ``prefix/key``."""
    return {f"{prefix}/{k}": np.float32(v) for k, v in mapping.items()}


def read_config(tensors, prefix):
    head = prefix + "/"
    return {k[len(head):]: float(v) for k, v in tensors.items() if k.startswith(head)}
