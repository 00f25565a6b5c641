"""Self-describing binary checkpoints shared by the quantizer and the seq2seq model.

Layout (little-endian): 4-byte magic, u32 version, u32 block count, then per
block: u16 name length, name bytes (utf-8), u32 ndim, u32 dims, float32
payload. Small string metadata (hashes, lineage) is stored as float32 arrays
of byte values under ``meta/`` names so everything stays in one block format.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataFormatError

_HEAD = struct.Struct("<4sII")


def scalar(arr: np.ndarray) -> float:
    """Read back a scalar block (stored as a length-1 array)."""
    return float(np.asarray(arr).reshape(-1)[0])


def str_block(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float32)


def block_str(arr: np.ndarray) -> str:
    return bytes(np.asarray(arr).astype(np.uint8).tolist()).decode("utf-8")


def write_blocks(path, magic: bytes, blocks: dict[str, np.ndarray], version: int = 1) -> None:
    parts = [_HEAD.pack(magic, version, len(blocks))]
    for name, arr in blocks.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        name_b = name.encode("utf-8")
        parts.append(struct.pack("<H", len(name_b)))
        parts.append(name_b)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_blocks(path, magic: bytes) -> tuple[int, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if len(data) < _HEAD.size:
        raise DataFormatError(f"truncated checkpoint header in {path}", offset=len(data))
    got_magic, version, n_blocks = _HEAD.unpack_from(data)
    if got_magic != magic:
        raise DataFormatError(
            f"bad magic {got_magic!r} in {path}, expected {magic!r}", offset=0
        )
    pos = _HEAD.size
    blocks: dict[str, np.ndarray] = {}
    for _ in range(n_blocks):
        try:
            (name_len,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (ndim,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            end = pos + count * 4
            if end > len(data):
                raise DataFormatError(
                    f"truncated block {name!r} in {path}", offset=len(data)
                )
            arr = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(shape)
            blocks[name] = arr
            pos = end
        except struct.error as exc:
            raise DataFormatError(f"truncated checkpoint {path}: {exc}", offset=pos) from exc
    return version, blocks
