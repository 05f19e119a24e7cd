"""Self-describing binary container: magic, version, JSON header, then
named float64 blocks (little-endian), used by checkpoints and activation
dumps."""

from __future__ import annotations

import json
import struct

import numpy as np


class ContainerError(ValueError):
    pass


def write(path, magic: bytes, version: int, header: dict, arrays: list) -> None:
    """arrays: ordered list of (name, ndarray)."""
    header = dict(header)
    header["arrays"] = [{"name": n, "shape": list(np.asarray(a).shape)} for n, a in arrays]
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<I", version))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def read(path, magic: bytes, version: int) -> tuple[dict, dict]:
    """Returns (header, {name: ndarray})."""
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        if raw[: len(magic)] != magic:
            raise ContainerError(f"{path}: bad magic, not a {magic.decode()} file")
        off = len(magic)
        (got_version,) = struct.unpack_from("<I", raw, off)
        if got_version != version:
            raise ContainerError(f"{path}: unsupported version {got_version}")
        (hlen,) = struct.unpack_from("<Q", raw, off + 4)
        off += 12
        header = json.loads(raw[off : off + hlen].decode())
        off += hlen
        arrays = {}
        for entry in header.pop("arrays"):
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            end = off + 8 * count
            if end > len(raw):
                raise ContainerError(f"{path}: truncated block {entry['name']!r}")
            arrays[entry["name"]] = (
                np.frombuffer(raw[off:end], dtype="<f8").astype(np.float64).reshape(shape)
            )
            off = end
        if off != len(raw):
            raise ContainerError(f"{path}: {len(raw) - off} trailing bytes")
    except (struct.error, json.JSONDecodeError, KeyError, IndexError, UnicodeDecodeError) as exc:
        raise ContainerError(f"{path}: corrupt container ({exc})") from exc
    return header, arrays
