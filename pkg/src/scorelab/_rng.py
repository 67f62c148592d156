"""Counter-based random streams (Philox4x32-10) in plain numpy.

Every random number in the package is a pure function of
``(key, lane, block)``: ``key`` names a stream (derived from the master seed
and a purpose tag), ``lane`` is a path or replica id and ``block`` is a draw
index inside that lane.  One block yields two uniforms or two standard
normals.  The compiled kernels implement the same mapping, so any path can be
regenerated in isolation and results do not depend on how lanes are split
across threads.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = [
    "stream_key",
    "philox4x32",
    "uniform_pair",
    "normal_pair",
    "normals",
    "uniforms",
]

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)
_SHIFT11 = np.uint64(11)
_TWO_M53 = 2.0**-53
_TWO_PI = 2.0 * np.pi


def stream_key(seed: int, tag: str, index: int = 0) -> int:
    """Derive a 64-bit Philox key from ``(master seed, purpose tag, index)``."""
    msg = f"{int(seed) & 0xFFFFFFFFFFFFFFFF}:{tag}:{int(index)}".encode()
    return int.from_bytes(hashlib.blake2b(msg, digest_size=8).digest(), "little")


def _split_key(key: int) -> tuple[np.uint64, np.uint64]:
    return np.uint64(key & 0xFFFFFFFF), np.uint64((key >> 32) & 0xFFFFFFFF)


def philox4x32(c0, c1, c2, c3, k0, k1):
    """Ten Philox rounds on 32-bit words stored in uint64 arrays."""
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) & _MASK32 for c in (c0, c1, c2, c3))
    k0 = np.uint64(k0) & _MASK32
    k1 = np.uint64(k1) & _MASK32
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        c0, c1, c2, c3 = (
            (p1 >> _SHIFT32) ^ c1 ^ k0,
            p1 & _MASK32,
            (p0 >> _SHIFT32) ^ c3 ^ k1,
            p0 & _MASK32,
        )
        k0 = (k0 + _W0) & _MASK32
        k1 = (k1 + _W1) & _MASK32
    return c0, c1, c2, c3


def _raw_pair(key: int, lane, block):
    lane = np.asarray(lane, dtype=np.uint64)
    block = np.asarray(block, dtype=np.uint64)
    lane, block = np.broadcast_arrays(lane, block)
    k0, k1 = _split_key(key)
    x0, x1, x2, x3 = philox4x32(
        block & _MASK32, block >> _SHIFT32, lane & _MASK32, lane >> _SHIFT32, k0, k1
    )
    a = (x1 << _SHIFT32) | x0
    b = (x3 << _SHIFT32) | x2
    return a, b


def uniform_pair(key: int, lane, block) -> tuple[np.ndarray, np.ndarray]:
    """Two uniforms in [0, 1) with 53-bit resolution for each (lane, block)."""
    a, b = _raw_pair(key, lane, block)
    return (a >> _SHIFT11).astype(np.float64) * _TWO_M53, (b >> _SHIFT11).astype(
        np.float64
    ) * _TWO_M53


def normal_pair(key: int, lane, block) -> tuple[np.ndarray, np.ndarray]:
    """Two independent N(0, 1) draws per (lane, block) by Box-Muller."""
    ua, ub = uniform_pair(key, lane, block)
    r = np.sqrt(-2.0 * np.log(1.0 - ua))
    phi = _TWO_PI * ub
    return r * np.cos(phi), r * np.sin(phi)


def normals(key: int, lanes, first_block: int, d: int) -> np.ndarray:
    """A ``(len(lanes), d)`` array of normals using blocks ``first_block + j//2``.

    Component ``j`` of a lane comes from block ``first_block + j // 2``, first
    or second output depending on the parity of ``j``.
    """
    lanes = np.atleast_1d(np.asarray(lanes, dtype=np.uint64))
    nb = (d + 1) // 2
    blocks = np.uint64(first_block) + np.arange(nb, dtype=np.uint64)
    z0, z1 = normal_pair(key, lanes[:, None], blocks[None, :])
    out = np.empty((lanes.size, 2 * nb))
    out[:, 0::2] = z0
    out[:, 1::2] = z1
    return out[:, :d]


def uniforms(key: int, lanes, block: int) -> np.ndarray:
    """First uniform of ``block`` for every lane."""
    ua, _ = uniform_pair(key, np.atleast_1d(np.asarray(lanes, dtype=np.uint64)), block)
    return ua
