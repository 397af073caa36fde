"""Binary checkpoint and key-value config serialization.

Checkpoint layout (little-endian): 8-byte magic "RSCNCKPT", u32 format
version, u32 tensor count, then per tensor: u16 name length, UTF-8 name,
u8 rank, u32 dims, raw float32 data.
"""

import struct
from collections import OrderedDict

import numpy as np

__all__ = ["MAGIC", "VERSION", "CheckpointError",
           "save_checkpoint", "load_checkpoint",
           "save_config_kv", "load_config_kv"]

MAGIC = b"RSCNCKPT"
VERSION = 1


class CheckpointError(IOError):
    pass


def save_checkpoint(path, arrays):
    """Write named float32 arrays; 'arrays' maps name -> ndarray."""
    items = list(arrays.items())
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(items)))
        for name, arr in items:
            a = np.ascontiguousarray(arr, dtype="<f4")
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", a.ndim))
            f.write(struct.pack(f"<{a.ndim}I", *a.shape))
            f.write(a.tobytes())


def load_checkpoint(path):
    """Read a checkpoint back as an ordered name -> float32 array map."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:8]!r}")
    version, count = struct.unpack_from("<II", blob, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    off = 16
    out = OrderedDict()
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<B", blob, off)
        off += 1
        dims = struct.unpack_from(f"<{rank}I", blob, off)
        off += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=off)
        off += 4 * n
        out[name] = arr.reshape(dims).copy()
    if off != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - off} trailing bytes")
    return out


def save_config_kv(path, mapping):
    """Human-readable 'key = value' lines, sorted by key."""
    with open(path, "w") as f:
        for k in sorted(mapping):
            f.write(f"{k} = {mapping[k]}\n")


def load_config_kv(path):
    out = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            k, _, v = line.partition("=")
            out[k.strip()] = v.strip()
    return out
