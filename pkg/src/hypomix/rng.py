"""Counter-based normal variates (Philox4x32-10 plus Box-Muller).

Every draw is a pure function of ``(seed, trajectory, step, block)``, so the
way trajectories are split across workers cannot change any result.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint32(0x9E3779B9)
_W1 = np.uint32(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_TWO_M32 = 2.0 ** -32


@nb.njit(cache=True, nogil=True, inline="always")
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Ten Philox rounds on one 128-bit counter block with a 64-bit key."""
    c0 = np.uint32(c0)
    c1 = np.uint32(c1)
    c2 = np.uint32(c2)
    c3 = np.uint32(c3)
    k0 = np.uint32(k0)
    k1 = np.uint32(k1)
    for r in range(10):
        if r > 0:
            k0 = np.uint32(k0 + _W0)
            k1 = np.uint32(k1 + _W1)
        p0 = np.uint64(c0) * _M0
        p1 = np.uint64(c2) * _M1
        hi0 = np.uint32(p0 >> np.uint64(32))
        lo0 = np.uint32(p0 & _MASK)
        hi1 = np.uint32(p1 >> np.uint64(32))
        lo1 = np.uint32(p1 & _MASK)
        c0 = hi1 ^ c1 ^ k0
        c1 = lo1
        c2 = hi0 ^ c3 ^ k1
        c3 = lo0
    return c0, c1, c2, c3


@nb.njit(cache=True, nogil=True, fastmath=True)
def fill_normals(out, n, step, traj, k0, k1):
    """Write ``n`` standard normals for ``(traj, step)`` into ``out[:n]``."""
    s = np.uint64(step)
    lo = np.uint32(s & _MASK)
    hi = np.uint32(s >> np.uint64(32))
    i = 0
    block = 0
    while i < n:
        a, b, c, d = philox4x32(lo, hi, np.uint32(traj), np.uint32(block), k0, k1)
        # (u + 1) * 2^-32 lies in (0, 1], so the log is finite
        rad = math.sqrt(-2.0 * math.log((np.float64(a) + 1.0) * _TWO_M32))
        th = 2.0 * math.pi * np.float64(b) * _TWO_M32
        out[i] = rad * math.cos(th)
        if i + 1 < n:
            out[i + 1] = rad * math.sin(th)
        if i + 2 < n:
            rad = math.sqrt(-2.0 * math.log((np.float64(c) + 1.0) * _TWO_M32))
            th = 2.0 * math.pi * np.float64(d) * _TWO_M32
            out[i + 2] = rad * math.cos(th)
            if i + 3 < n:
                out[i + 3] = rad * math.sin(th)
        i += 4
        block += 1


def split_seed(seed: int) -> tuple[int, int]:
    """64-bit master seed to the two 32-bit Philox key words."""
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return seed & 0xFFFFFFFF, seed >> 32


def normals(seed: int, traj: int, step: int, n: int) -> np.ndarray:
    """The ``n`` normals that trajectory ``traj`` consumes at ``step``."""
    k0, k1 = split_seed(seed)
    out = np.empty(n)
    fill_normals(out, n, step, traj, k0, k1)
    return out
