"""Platform-independent byte encoding, digests and seed derivation.

The encoding is schema-directed and untagged:

* ``bool``: one byte
* ``int``: 8-byte signed big-endian
* ``float``: IEEE-754 binary64 big-endian (non-finite values are refused)
* ``str``: 4-byte length + UTF-8 bytes; ``bytes``: 4-byte length + raw bytes
* list/tuple: 4-byte count + items; dict: 4-byte count + sorted ``(key, value)`` pairs
* :class:`~fedchain.model.ParamVector`: layer dims as a list of int pairs, then
  4-byte count + raw big-endian float64 values
"""

from __future__ import annotations

import hashlib
import math
import struct

import numpy as np

from .errors import EncodingError
from .model import ParamVector

ZERO_DIGEST = "0" * 64


def _u32(n: int) -> bytes:
    if n >= 2**32:
        raise EncodingError("length does not fit in 4 bytes")
    return struct.pack(">I", n)


def _encode(value, out: list) -> None:
    if isinstance(value, (bool, np.bool_)):
        out.append(b"\x01" if value else b"\x00")
    elif isinstance(value, (int, np.integer)):
        try:
            out.append(struct.pack(">q", int(value)))
        except struct.error as exc:
            raise EncodingError(f"integer {value} does not fit in 64 bits") from exc
    elif isinstance(value, (float, np.floating)):
        if not math.isfinite(value):
            raise EncodingError(f"cannot encode non-finite float {value}")
        out.append(struct.pack(">d", float(value)))
    elif isinstance(value, str):
        raw = value.encode("utf-8")
        out.append(_u32(len(raw)))
        out.append(raw)
    elif isinstance(value, (bytes, bytearray)):
        out.append(_u32(len(value)))
        out.append(bytes(value))
    elif isinstance(value, ParamVector):
        _encode([[s.input_dim, s.output_dim] for s in value.shapes], out)
        out.append(_u32(len(value)))
        out.append(value.values.astype(">f8").tobytes())
    elif isinstance(value, dict):
        out.append(_u32(len(value)))
        for key in sorted(value):
            if not isinstance(key, str):
                raise EncodingError("dict keys must be strings")
            _encode(key, out)
            _encode(value[key], out)
    elif isinstance(value, (list, tuple)):
        out.append(_u32(len(value)))
        for item in value:
            _encode(item, out)
    elif hasattr(value, "to_dict"):
        _encode(value.to_dict(), out)
    else:
        raise EncodingError(f"cannot encode value of type {type(value).__name__}")


def canonical_encode(value) -> bytes:
    out: list[bytes] = []
    _encode(value, out)
    return b"".join(out)


def digest(value) -> str:
    """Lowercase hex SHA-256 of the canonical encoding."""
    return hashlib.sha256(canonical_encode(value)).hexdigest()


def derive_seed(master_seed: int, round_index: int, node_id: int | None, tag: str) -> int:
    """64-bit seed from SHA-256(master || round || node || tag).

    ``node_id=None`` marks round-level streams (encoded as -1).
    """
    node = -1 if node_id is None else int(node_id)
    raw = struct.pack(">QqQ", int(master_seed) & 0xFFFFFFFFFFFFFFFF, int(round_index), node & 0xFFFFFFFFFFFFFFFF)
    h = hashlib.sha256(raw + tag.encode("utf-8")).digest()
    return int.from_bytes(h[:8], "big")
