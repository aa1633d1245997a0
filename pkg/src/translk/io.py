"""TLK1 tensor files and parameter checkpoints.

TLK1 layout: the magic ``b"TLK1"``, one unsigned byte holding the rank
(always 5), five little-endian ``u32`` dims, then the values as
little-endian ``float32`` in row-major order.

A checkpoint is ``b"TLKC"``, a little-endian ``u32`` manifest length, a
UTF-8 JSON manifest, then the TLK1 records back to back.  Each manifest
entry names a parameter, its true shape, and the byte offset and length of
its record relative to the end of the manifest.  Parameters of lower rank
are stored with their shape left-padded by ones.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"TLK1"
CKPT_MAGIC = b"TLKC"
RANK = 5
_HEADER = struct.Struct("<4sB5I")


class FormatError(ValueError):
    pass


def encode_tlk1(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.ndim != RANK:
        raise FormatError(f"TLK1 stores rank-{RANK} tensors, got shape {arr.shape}")
    body = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return _HEADER.pack(MAGIC, RANK, *arr.shape) + body


def decode_tlk1(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Parse one record at ``offset``; return the array and the offset just past it."""
    if len(buf) - offset < _HEADER.size:
        raise FormatError("truncated TLK1 header")
    magic, rank, *dims = _HEADER.unpack_from(buf, offset)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if rank != RANK:
        raise FormatError(f"unsupported rank {rank}")
    start = offset + _HEADER.size
    count = int(np.prod(dims))
    end = start + 4 * count
    if end > len(buf):
        raise FormatError(f"truncated TLK1 body: need {4 * count} bytes, have {len(buf) - start}")
    arr = np.frombuffer(buf, dtype="<f4", count=count, offset=start).reshape(dims)
    return arr.astype(np.float32), end


def write_tlk1(path: str | Path, arr: np.ndarray) -> None:
    Path(path).write_bytes(encode_tlk1(arr))


def read_tlk1(path: str | Path) -> np.ndarray:
    buf = Path(path).read_bytes()
    arr, end = decode_tlk1(buf)
    if end != len(buf):
        raise FormatError(f"{len(buf) - end} trailing bytes after TLK1 record")
    return arr


def save_checkpoint(path: str | Path, state: dict) -> None:
    manifest, records, offset = [], [], 0
    for name, arr in state.items():
        arr = np.asarray(arr)
        rec = encode_tlk1(arr.reshape((1,) * (RANK - arr.ndim) + arr.shape))
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset,
                         "nbytes": len(rec)})
        records.append(rec)
        offset += len(rec)
    head = json.dumps(manifest).encode()
    Path(path).write_bytes(CKPT_MAGIC + struct.pack("<I", len(head)) + head + b"".join(records))


def load_checkpoint(path: str | Path) -> dict:
    buf = Path(path).read_bytes()
    if buf[:4] != CKPT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint (magic {buf[:4]!r})")
    (n,) = struct.unpack_from("<I", buf, 4)
    base = 8 + n
    manifest = json.loads(buf[8:base].decode())
    state = {}
    for entry in manifest:
        arr, end = decode_tlk1(buf, base + entry["offset"])
        if end - base - entry["offset"] != entry["nbytes"]:
            raise FormatError(f"{entry['name']}: record length disagrees with manifest")
        state[entry["name"]] = arr.reshape(entry["shape"])
    return state
