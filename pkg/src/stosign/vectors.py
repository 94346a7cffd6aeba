"""Gradient/sign vector helpers, the 1-bit sign wire codec, and RNG stream derivation.

Vectors are plain numpy arrays: gradients are ``float64`` and sign vectors are
``int8`` arrays over {-1, +1}.

Wire format for a sign vector of length ``d``: ``ceil(d / 8)`` bytes, coordinate
``i`` stored in bit ``i % 8`` of byte ``i // 8`` (least-significant bit first),
``+1 -> 1`` and ``-1 -> 0``, padding bits zero. ``d`` travels out of band.
"""

from __future__ import annotations

import enum

import numpy as np

SIGN_DTYPE = np.int8
_MASK64 = 2**64 - 1


class CodecError(ValueError):
    """Raised when a packed sign payload does not match the expected length."""


class Purpose(enum.IntEnum):
    """Stream purposes; part of the derivation path so draws never collide."""

    COMPRESS = 0
    BATCH = 1
    PARTITION = 2
    DATA = 3
    INIT = 4
    MONTE_CARLO = 5
    ENSEMBLE = 6


def as_gradient(values, d: int | None = None) -> np.ndarray:
    g = np.asarray(values, dtype=np.float64)
    if g.ndim != 1:
        raise ValueError(f"gradient must be 1-D, got shape {g.shape}")
    if d is not None and g.shape[0] != d:
        raise ValueError(f"gradient has length {g.shape[0]}, expected {d}")
    if not np.all(np.isfinite(g)):
        raise ValueError("gradient contains NaN or Inf")
    return g


def as_signs(values, d: int | None = None) -> np.ndarray:
    s = np.asarray(values)
    if s.ndim != 1:
        raise ValueError(f"sign vector must be 1-D, got shape {s.shape}")
    if d is not None and s.shape[0] != d:
        raise ValueError(f"sign vector has length {s.shape[0]}, expected {d}")
    if not np.all((s == 1) | (s == -1)):
        raise ValueError("sign vector entries must be exactly -1 or +1")
    return s.astype(SIGN_DTYPE, copy=False)


def packed_size(d: int) -> int:
    return (d + 7) // 8


def pack_signs(s) -> bytes:
    """Pack a {-1, +1} vector into ``ceil(d/8)`` bytes, LSB first.

    The payload size in bits is ``len(s)``; see :func:`payload_bits`.
    """
    s = as_signs(s)
    return np.packbits(s > 0, bitorder="little").tobytes()


def unpack_signs(b: bytes, d: int) -> np.ndarray:
    if len(b) != packed_size(d):
        raise CodecError(f"expected {packed_size(d)} bytes for d={d}, got {len(b)}")
    bits = np.unpackbits(np.frombuffer(b, dtype=np.uint8), count=d, bitorder="little")
    return np.where(bits == 1, 1, -1).astype(SIGN_DTYPE)


def payload_bits(d: int) -> int:
    return d


def derive_stream(root: int, round: int, worker: int, purpose: int) -> np.random.Generator:
    """Return the generator for one ``(round, worker, purpose)`` path under ``root``.

    Counter-based: a Philox generator keyed by ``root`` whose 256-bit counter
    starts at ``(0, round, worker, purpose)``. Draws advance only the lowest
    counter word, so distinct paths occupy disjoint counter ranges (for fewer
    than 2**64 blocks per path) and each stream is reproducible regardless of
    creation order or thread.
    """
    for name, value in (("round", round), ("worker", worker), ("purpose", purpose)):
        if not 0 <= value < 2**64:
            raise ValueError(f"{name} must be a non-negative 64-bit integer, got {value}")
    key = np.array([int(root) & _MASK64, 0], dtype=np.uint64)
    counter = np.array([0, round, worker, purpose], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))
