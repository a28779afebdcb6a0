"""Binary container for parameter snapshots.

Layout (all integers little-endian)::

    magic     8 bytes   b"MTSCGAN\\x00"
    version   u32
    hdr_len   u64
    header    hdr_len bytes of UTF-8 JSON:
              {"meta": {...}, "arrays": [{"name", "shape", "offset", "count"}, ...]}
    payload   concatenated '<f8' blocks, offsets in float64 elements
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MTSCGAN\x00"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_container(path, meta: dict, arrays: dict[str, np.ndarray]):
    index, blocks, offset = [], [], 0
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        index.append({"name": name, "shape": list(a.shape), "offset": offset, "count": int(a.size)})
        blocks.append(a.tobytes())
        offset += a.size
    header = json.dumps({"meta": meta, "arrays": index}, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        for b in blocks:
            fh.write(b)
    tmp.replace(path)


def load_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if len(raw) < 20:
        raise CheckpointError(f"{path}: truncated header")
    version, hlen = struct.unpack_from("<IQ", raw, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    start = 8 + 12
    try:
        header = json.loads(raw[start:start + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    body = raw[start + hlen:]
    if len(body) % 8:
        raise CheckpointError(f"{path}: truncated payload ({len(body)} bytes)")
    payload = np.frombuffer(body, dtype="<f8")
    arrays = {}
    for entry in header["arrays"]:
        lo = entry["offset"]
        block = payload[lo:lo + entry["count"]]
        if block.size != entry["count"]:
            raise CheckpointError(f"{path}: truncated block {entry['name']}")
        arrays[entry["name"]] = block.astype(np.float64).reshape(entry["shape"])
    return header["meta"], arrays
