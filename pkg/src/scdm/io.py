"""Binary interchange container shared by series, epoch sets, rasters and checkpoints.

Layout: 8-byte magic ``SCDMTEN\\0``, 4-byte little-endian header length, a UTF-8
JSON header, then the row-major little-endian payload.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

MAGIC = b"SCDMTEN\0"
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


class ContainerError(ValueError):
    """Raised for malformed or inconsistent container files."""


def _dtype_tag(dtype: np.dtype) -> str:
    if dtype == np.float32:
        return "f32"
    if dtype == np.float64:
        return "f64"
    raise ContainerError(f"unsupported payload dtype {dtype}")


def encode(array: np.ndarray, header: dict[str, Any] | None = None) -> bytes:
    array = np.asarray(array)
    tag = _dtype_tag(array.dtype)
    meta = dict(header or {})
    meta["dims"] = [int(d) for d in array.shape]
    meta["dtype"] = tag
    text = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = np.ascontiguousarray(array, dtype=_DTYPES[tag]).tobytes(order="C")
    return MAGIC + struct.pack("<I", len(text)) + text + payload


def decode(blob: bytes) -> tuple[dict[str, Any], np.ndarray]:
    if len(blob) < 12 or blob[:8] != MAGIC:
        raise ContainerError("bad magic: not an interchange container")
    (hlen,) = struct.unpack("<I", blob[8:12])
    if 12 + hlen > len(blob):
        raise ContainerError("header length exceeds file size")
    try:
        header = json.loads(blob[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"malformed header: {exc}") from exc
    if not isinstance(header, dict) or "dims" not in header or "dtype" not in header:
        raise ContainerError("malformed header: 'dims' and 'dtype' are required")
    if header["dtype"] not in _DTYPES:
        raise ContainerError(f"malformed header: unknown dtype {header['dtype']!r}")
    dims = header["dims"]
    if not isinstance(dims, list) or any((not isinstance(d, int)) or d < 0 for d in dims):
        raise ContainerError("malformed header: dims must be non-negative integers")
    dtype = _DTYPES[header["dtype"]]
    count = int(np.prod(dims)) if dims else 1
    payload = blob[12 + hlen :]
    if len(payload) != count * dtype.itemsize:
        raise ContainerError(
            f"shape mismatch: header dims {dims} need {count * dtype.itemsize} bytes, "
            f"payload has {len(payload)}"
        )
    array = np.frombuffer(payload, dtype=dtype).reshape(dims).copy()
    if not np.all(np.isfinite(array)):
        raise ContainerError("non-finite values in payload")
    return header, array


def write(path: str | Path, array: np.ndarray, header: dict[str, Any] | None = None) -> None:
    Path(path).write_bytes(encode(array, header))


def read(path: str | Path) -> tuple[dict[str, Any], np.ndarray]:
    return decode(Path(path).read_bytes())
