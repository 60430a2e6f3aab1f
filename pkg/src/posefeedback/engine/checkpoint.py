"""Versioned binary container mapping parameter names to float64 arrays.

Layout (all integers little-endian)::

    b"PFCK"                      magic
    uint32  version              currently 1
    uint64  header_length
    bytes   header               UTF-8 JSON: {"config": ..., "tensors": [
                                     {"name", "shape", "offset", "count"}, ...]}
    bytes   payload              float64 little-endian values, row-major

The writer emits keys in sorted order and no timestamps, so identical inputs
produce identical bytes.
"""

import json
import struct

import numpy as np

from ..exceptions import SchemaError

MAGIC = b"PFCK"
VERSION = 1


def save_checkpoint(path, tensors, config=None):
    entries, chunks, offset = [], [], 0
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        arr = np.ascontiguousarray(arr)
        chunks.append(arr.tobytes())
        offset += arr.size
    header = json.dumps({"config": config or {}, "tensors": entries}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        for chunk in chunks:
            fh.write(chunk)


def load_checkpoint(path):
    """Return ``(tensors, config)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise SchemaError(f"{path}: not a checkpoint file")
    try:
        version, hlen = struct.unpack("<IQ", data[4:16])
        if version != VERSION:
            raise SchemaError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(data[16:16 + hlen].decode())
        payload = np.frombuffer(data[16 + hlen:], dtype="<f8")
        tensors = {}
        for e in header["tensors"]:
            values = payload[e["offset"]:e["offset"] + e["count"]]
            if values.size != e["count"]:
                raise SchemaError(f"{path}: truncated payload for {e['name']}")
            tensors[e["name"]] = values.reshape(e["shape"]).astype(np.float64)
    except (struct.error, KeyError, ValueError, UnicodeDecodeError) as exc:
        raise SchemaError(f"{path}: malformed checkpoint ({exc})") from exc
    return tensors, header["config"]
