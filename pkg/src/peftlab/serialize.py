"""Versioned binary checkpoint container.

Layout: magic ``PLCK`` | uint32 version | uint64 header length | header JSON
| concatenated float64 payloads in header order. Arrays are written sorted
by name and the header is dumped with sorted keys, so save -> load -> save
is byte-identical.
"""

import json
import struct

import numpy as np

from .errors import DataError

_MAGIC = b"PLCK"
FORMAT_VERSION = 1


def save_checkpoint(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    entries = []
    payload = bytearray()
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype=np.float64)
        entries.append({"name": name, "shape": list(arr.shape)})
        payload.extend(arr.tobytes())
    header = json.dumps(
        {"format_version": FORMAT_VERSION, "meta": meta, "arrays": entries},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(header)))
        fh.write(header)
        fh.write(bytes(payload))


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise DataError(f"{path}: not a peftlab checkpoint")
    version, header_len = struct.unpack("<IQ", blob[4:16])
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(blob[16 : 16 + header_len].decode("utf-8"))
    arrays: dict[str, np.ndarray] = {}
    offset = 16 + header_len
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype=np.float64, count=n, offset=offset).reshape(shape)
        arrays[entry["name"]] = arr.copy()
        offset += 8 * n
    if offset != len(blob):
        raise DataError(f"{path}: trailing bytes in checkpoint")
    return header["meta"], arrays
