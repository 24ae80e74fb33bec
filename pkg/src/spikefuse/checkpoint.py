"""Checkpoint container: JSON header plus aligned float64 payloads.

Layout:
  bytes 0..7    little-endian uint64, byte length of the (padded) header
  header        UTF-8 JSON, space-padded so the payload starts 8-aligned:
                {"tensors": {name: {"shape": [...], "offset": N}}}
  payloads      raw little-endian float64, row-major, at the stated
                absolute file offsets (every offset a multiple of 8)
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import FormatError
from .tensor import Tensor


def save_tensors(path, tensors: dict) -> None:
    """Write named arrays/Tensors to ``path`` in the container format."""
    arrays = {
        name: (t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64))
        for name, t in tensors.items()
    }
    entries = {}
    # header size depends on offsets which depend on header size; offsets
    # are fixed by computing the padded header length with final digits.
    def build_header(start: int) -> bytes:
        offset = start
        entries.clear()
        for name, arr in arrays.items():
            entries[name] = {"shape": list(arr.shape), "offset": offset}
            offset += arr.size * 8
        return json.dumps({"tensors": entries}).encode("utf-8")

    header = build_header(0)
    padded_len = (len(header) + 7) // 8 * 8
    start = 8 + padded_len
    header = build_header(start)
    while (len(header) + 7) // 8 * 8 != padded_len:
        padded_len = (len(header) + 7) // 8 * 8
        start = 8 + padded_len
        header = build_header(start)
    header = header + b" " * (padded_len - len(header))

    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for arr in arrays.values():
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_tensors(path) -> dict[str, np.ndarray]:
    """Read a container written by ``save_tensors``."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 8:
        raise FormatError(f"checkpoint truncated at byte {len(raw)}: missing header length")
    (hlen,) = struct.unpack("<Q", raw[:8])
    if len(raw) < 8 + hlen:
        raise FormatError(f"checkpoint truncated at byte {len(raw)}: header needs {8 + hlen}")
    try:
        header = json.loads(raw[8 : 8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"checkpoint header is not valid JSON: {e}") from e
    out = {}
    for name, entry in header["tensors"].items():
        shape = tuple(entry["shape"])
        offset = entry["offset"]
        if offset % 8 != 0:
            raise FormatError(f"tensor '{name}' offset {offset} is not 8-byte aligned")
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8
        if offset + nbytes > len(raw):
            raise FormatError(
                f"checkpoint truncated at byte {len(raw)}: tensor '{name}' needs {offset + nbytes}"
            )
        out[name] = np.frombuffer(raw, dtype="<f8", count=nbytes // 8, offset=offset).reshape(shape).copy()
    return out


def restore_into(params: dict[str, Tensor], arrays: dict[str, np.ndarray]) -> None:
    """Copy loaded arrays into existing parameter tensors, shape-checked."""
    for name, p in params.items():
        if name not in arrays:
            raise FormatError(f"checkpoint missing tensor '{name}'")
        if tuple(arrays[name].shape) != p.shape:
            raise FormatError(
                f"tensor '{name}' shape {arrays[name].shape} != expected {p.shape}"
            )
        p.data[...] = arrays[name]
