"""Deterministic edge and time encoders.

Two fixed (non-learned) encoders feed the temporal model:

* :class:`TimeEncoder` maps a non-negative time gap to interleaved
  ``cos``/``sin`` pairs at geometrically spaced frequencies.
* :func:`featurize_edge` maps an action kind and its attribute map to a
  signed hashing-trick vector using 64-bit FNV-1a.
"""
from __future__ import annotations

import math
from collections.abc import Mapping

import numpy as np

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


class NegativeDelta(ValueError):
    """Raised when a time gap is negative or not finite."""


def fnv1a_64(data: bytes | str) -> int:
    if isinstance(data, str):
        data = data.encode("utf-8")
    h = FNV64_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & _MASK64
    return h


class TimeEncoder:
    """Sinusoidal encoding of time gaps.

    ``out[2i] = cos(w_i * dt)`` and ``out[2i+1] = sin(w_i * dt)`` with
    ``w_i = 10000 ** (-2i / d_t)``.
    """

    def __init__(self, d_t: int = 16):
        if d_t < 2 or d_t % 2:
            raise ValueError(f"d_t must be even and >= 2, got {d_t}")
        self.d_t = d_t
        i = np.arange(d_t // 2, dtype=np.float64)
        self.omega = 1.0 / np.power(10000.0, 2.0 * i / d_t)

    def __call__(self, dt):
        dt = np.asarray(dt, dtype=np.float64)
        if not np.all(np.isfinite(dt)) or np.any(dt < 0):
            raise NegativeDelta(f"time gap must be finite and >= 0: {dt!r}")
        phase = dt[..., None] * self.omega
        out = np.empty(dt.shape + (self.d_t,), dtype=np.float64)
        out[..., 0::2] = np.cos(phase)
        out[..., 1::2] = np.sin(phase)
        return out


def encode_time(dt: float, d_t: int = 16) -> np.ndarray:
    return TimeEncoder(d_t)(dt)


def edge_tokens(kind: str, attrs: Mapping[str, str] | None = None) -> list[str]:
    tokens = {f"kind={kind}"}
    if attrs:
        tokens.update(f"{k}={v}" for k, v in attrs.items())
    return sorted(tokens)


def hash_index_sign(token: str, d_f: int) -> tuple[int, float]:
    h = fnv1a_64(token)
    return h % d_f, (-1.0 if h >> 63 else 1.0)


def featurize_edge(kind, attrs: Mapping[str, str] | None = None, d_f: int = 32) -> np.ndarray:
    """Signed feature-hashing vector of ``kind=<kind>`` plus ``k=v`` attribute tokens.

    The result is L2-normalised unless every coordinate cancelled to zero.
    """
    if d_f < 1:
        raise ValueError("d_f must be >= 1")
    kind = getattr(kind, "value", kind)
    vec = np.zeros(d_f, dtype=np.float64)
    for token in edge_tokens(kind, attrs):
        idx, sign = hash_index_sign(token, d_f)
        vec[idx] += sign
    norm = math.sqrt(float(vec @ vec))
    if norm > 0:
        vec /= norm
    return vec
