"""Writer for the MAGT tensor wire format.

Mirror of the consumer-side contract: magic "MAGT", version byte 1,
dtype byte (1 = float32), rank and dims as u64 little-endian, then the
row-major float32 payload. Finiteness is enforced before writing so
everything emitted passes the consumer's validation.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"MAGT"
VERSION = 1
DTYPE_F32 = 1


class ExportError(Exception):
    pass


def write_magt(arr, path) -> tuple[int, ...]:
    """Serialize a float array; returns the written shape."""
    data = np.asarray(arr, dtype=np.float32)
    if data.ndim > 0 and any(d == 0 for d in data.shape):
        raise ExportError(f"cannot export zero-sized tensor of shape {data.shape}")
    if not np.all(np.isfinite(data)):
        raise ExportError("refusing to export NaN or Inf values")
    header = MAGIC + struct.pack("<BBQ", VERSION, DTYPE_F32, data.ndim)
    header += b"".join(struct.pack("<Q", d) for d in data.shape)
    Path(path).write_bytes(header + np.ascontiguousarray(data, dtype="<f4").tobytes())
    return tuple(data.shape)


def read_magt_shape(path) -> tuple[int, ...]:
    """Read only the header; used to validate manifests against files."""
    raw = Path(path).read_bytes()
    if len(raw) < 14 or raw[:4] != MAGIC:
        raise ExportError(f"{path} is not a MAGT file")
    _, _, rank = struct.unpack("<BBQ", raw[4:14])
    return struct.unpack(f"<{rank}Q", raw[14 : 14 + 8 * rank]) if rank else ()
