
import struct
from typing import List, Tuple

import numpy as np

from .errors import ArtifactIOError, DataError
from .io_utils import atomic_write_bytes
from .model import ModelParams

MAGIC = b"FQCK"
VERSION = 1


def encode_checkpoint(params: ModelParams) -> bytes:
    """
    Layout (little-endian):
      "FQCK" | version u32 | entry count u32 |
      per entry: name length u32, UTF-8 name, rank u32, extents u64 × rank, float64 values
    """
    parts: List[bytes] = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name, arr in params.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def decode_checkpoint(blob: bytes) -> ModelParams:
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise DataError(f"checkpoint truncated at byte offset {pos} (need {n} more bytes)")
        out = blob[pos:pos + n]
        pos += n
        return out

    if take(4) != MAGIC:
        raise DataError("not an FQCK checkpoint (bad magic)")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    entries: List[Tuple[str, np.ndarray]] = []
    for _ in range(count):
        (n,) = struct.unpack("<I", take(4))
        name = take(n).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}Q", take(8 * rank))
        size = int(np.prod(shape, dtype=np.int64))
        values = np.frombuffer(take(8 * size), dtype="<f8").reshape(shape)
        entries.append((name, values))
    if pos != len(blob):
        raise DataError(f"{len(blob) - pos} trailing bytes after last checkpoint entry")
    return ModelParams(entries)


def save_checkpoint(params: ModelParams, path: str):
    atomic_write_bytes(path, encode_checkpoint(params))


def load_checkpoint(path: str) -> ModelParams:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise ArtifactIOError(f"cannot read checkpoint {path}: {e}") from e
    return decode_checkpoint(blob)
