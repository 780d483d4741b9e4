"""Deterministic JSON emission and complex-vector conversion helpers.

All emitted artifacts (ledger dumps, reports, token exports, event logs)
go through ``canonical_json`` so that identical in-memory documents always
produce identical bytes: floats are printed with 17 significant digits,
key order is insertion order, and no whitespace varies.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np


def _emit(obj, out: list) -> None:
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=True))
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        if not np.isfinite(obj):
            raise ValueError(f"cannot serialize non-finite float {obj}")
        out.append(format(obj, ".17g"))
    elif isinstance(obj, dict):
        out.append("{")
        for i, (key, value) in enumerate(obj.items()):
            if not isinstance(key, str):
                raise TypeError(f"object keys must be strings, got {key!r}")
            if i:
                out.append(",")
            out.append(json.dumps(key, ensure_ascii=True))
            out.append(":")
            _emit(value, out)
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, value in enumerate(obj):
            if i:
                out.append(",")
            _emit(value, out)
        out.append("]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def canonical_json(obj) -> str:
    """Serialize to compact JSON with 17-significant-digit decimal doubles."""
    out: list[str] = []
    _emit(obj, out)
    return "".join(out)


def vector_to_pairs(vec) -> list[list[float]]:
    """Complex vector as [re, im] pairs of doubles."""
    arr = np.asarray(vec, dtype=np.complex128)
    return [[float(z.real), float(z.imag)] for z in arr]


def pairs_to_vector(pairs) -> np.ndarray:
    """Inverse of vector_to_pairs."""
    return np.array([complex(float(p[0]), float(p[1])) for p in pairs], dtype=np.complex128)


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def payload_digest(obj) -> str:
    """Short stable digest of a JSON-serializable payload."""
    return sha256_hex(canonical_json(obj).encode("utf-8"))[:16]
