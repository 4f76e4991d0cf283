"""Counter-based Gaussian streams keyed by (seed, level, sample index, role).

Every Brownian increment is a pure function of its key and its position in
the path, so any subset of samples or time steps can be regenerated
independently of how work is split across batches or threads.

The bit generator is Philox4x32-10 (compiled with numba; a plain numpy
version is kept for cross-checks). Normals come from the Box-Muller
transform applied to pairs of 53-bit uniforms, two normals per counter
block.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

GAUSSIAN_METHOD = "philox4x32-10 + box-muller (53-bit uniforms)"

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)


class Role(enum.IntEnum):
    MLMC_PAIR = 0
    STANDALONE = 1
    PILOT = 2
    MONTE_CARLO = 3


def philox4x32(counters: np.ndarray, key: tuple[int, int], rounds: int = 10) -> np.ndarray:
    """Apply Philox4x32 to an ``(..., 4)`` array of 32-bit counter words.

    Words are carried in uint64 so the 32x32 -> 64 bit products are exact.
    """
    c = np.asarray(counters, dtype=np.uint64)
    c0, c1, c2, c3 = c[..., 0], c[..., 1], c[..., 2], c[..., 3]
    k0, k1 = int(key[0]) & 0xFFFFFFFF, int(key[1]) & 0xFFFFFFFF
    for _ in range(rounds):
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0, lo0 = p0 >> _SHIFT32, p0 & _MASK32
        hi1, lo1 = p1 >> _SHIFT32, p1 & _MASK32
        c0, c1, c2, c3 = hi1 ^ c1 ^ np.uint64(k0), lo1, hi0 ^ c3 ^ np.uint64(k1), lo0
        k0 = (k0 + _W0) & 0xFFFFFFFF
        k1 = (k1 + _W1) & 0xFFFFFFFF
    return np.stack([c0, c1, c2, c3], axis=-1)


@dataclass(frozen=True)
class RandomStream:
    """Key of one Brownian path. Immutable; holds no generator state."""

    seed: int
    level: int
    sample_index: int
    role: Role = Role.MLMC_PAIR

    def __post_init__(self):
        if self.level < 0 or self.sample_index < 0:
            raise ValueError("level and sample_index must be nonnegative")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        if self.sample_index >= 2**32 or self.level >= 2**24:
            raise ValueError("sample_index must be < 2**32 and level < 2**24")


def make_stream(seed: int, level: int, sample_index: int, role: Role = Role.MLMC_PAIR) -> RandomStream:
    return RandomStream(int(seed), int(level), int(sample_index), Role(role))


def _key(seed: int) -> tuple[int, int]:
    return seed & 0xFFFFFFFF, (seed >> 32) & 0xFFFFFFFF


@njit(cache=True)
def _fill_normals(out, key0, key1, word3, samples, start):
    mask = np.uint64(0xFFFFFFFF)
    s32 = np.uint64(32)
    n, width = out.shape
    b0 = start // 2
    b1 = (start + width + 1) // 2
    for i in range(n):
        for b in range(b0, b1):
            c0 = np.uint64(b) & mask
            c1 = np.uint64(b) >> s32
            c2 = np.uint64(samples[i])
            c3 = np.uint64(word3)
            k0 = np.uint64(key0)
            k1 = np.uint64(key1)
            for _ in range(10):
                p0 = np.uint64(0xD2511F53) * c0
                p1 = np.uint64(0xCD9E8D57) * c2
                n0 = (p1 >> s32) ^ c1 ^ k0
                n2 = (p0 >> s32) ^ c3 ^ k1
                c1 = p1 & mask
                c3 = p0 & mask
                c0 = n0
                c2 = n2
                k0 = (k0 + np.uint64(0x9E3779B9)) & mask
                k1 = (k1 + np.uint64(0xBB67AE85)) & mask
            u1 = np.float64(((c0 << s32) | c1) >> np.uint64(11)) * 1.1102230246251565e-16
            u2 = np.float64(((c2 << s32) | c3) >> np.uint64(11)) * 1.1102230246251565e-16
            r = math.sqrt(-2.0 * math.log1p(-u1))
            theta = 2.0 * math.pi * u2
            e = 2 * b - start
            if e >= 0:
                out[i, e] = r * math.cos(theta)
            if e + 1 < width:
                out[i, e + 1] = r * math.sin(theta)


def standard_normals(
    seed: int,
    level: int,
    sample_indices,
    role: Role,
    start: int,
    stop: int,
) -> np.ndarray:
    """Normals at flat positions ``start <= e < stop`` of each sample's stream.

    Returns an array of shape ``(len(sample_indices), stop - start)``. Entry
    ``e`` of a stream always has the same value, whatever window it is
    requested through.
    """
    samples = np.ascontiguousarray(sample_indices, dtype=np.uint64).reshape(-1)
    if stop <= start or start < 0:
        raise ValueError("empty window")
    out = np.empty((samples.size, stop - start))
    key0, key1 = _key(int(seed))
    _fill_normals(out, key0, key1, (int(level) << 8) | int(role), samples, int(start))
    return out


def reference_normals(seed: int, level: int, sample_indices, role: Role, start: int, stop: int) -> np.ndarray:
    """Same values as ``standard_normals`` computed with plain numpy.

    Slow; transcendental functions may differ from the compiled path in
    the last bit.
    """
    samples = np.asarray(sample_indices, dtype=np.uint64).reshape(-1)
    b0, b1 = start // 2, (stop + 1) // 2
    blocks = np.arange(b0, b1, dtype=np.uint64)
    ctr = np.empty((samples.size, blocks.size, 4), dtype=np.uint64)
    ctr[..., 0] = (blocks & _MASK32)[None, :]
    ctr[..., 1] = (blocks >> _SHIFT32)[None, :]
    ctr[..., 2] = samples[:, None]
    ctr[..., 3] = np.uint64((int(level) << 8) | int(role))
    out = philox4x32(ctr, _key(int(seed)))
    scale = 2.0**-53
    u1 = (((out[..., 0] << _SHIFT32) | out[..., 1]) >> np.uint64(11)).astype(np.float64) * scale
    u2 = (((out[..., 2] << _SHIFT32) | out[..., 3]) >> np.uint64(11)).astype(np.float64) * scale
    r = np.sqrt(-2.0 * np.log1p(-u1))
    theta = (2.0 * np.pi) * u2
    z = np.empty((samples.size, 2 * blocks.size))
    z[:, 0::2] = r * np.cos(theta)
    z[:, 1::2] = r * np.sin(theta)
    off = start - 2 * b0
    return z[:, off:off + (stop - start)]


def brownian_increments(stream: RandomStream, n_steps: int, dt: float, noise_dim: int) -> np.ndarray:
    """``n_steps x noise_dim`` matrix of independent N(0, dt) increments."""
    return brownian_window(
        stream.seed, stream.level, [stream.sample_index], stream.role, 0, n_steps, dt, noise_dim
    )[0]


def brownian_window(
    seed: int,
    level: int,
    sample_indices,
    role: Role,
    k0: int,
    k1: int,
    dt: float,
    noise_dim: int,
) -> np.ndarray:
    """Increments for time steps ``k0 <= k < k1`` of several streams.

    Shape ``(n_samples, k1 - k0, noise_dim)``; row ``i`` equals the matching
    slice of ``brownian_increments`` for ``sample_indices[i]``.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if k1 <= k0 or k0 < 0:
        raise ValueError(f"n_steps must be >= 1, got window [{k0}, {k1})")
    if noise_dim < 1:
        raise ValueError("noise_dim must be >= 1")
    z = standard_normals(seed, level, sample_indices, role, k0 * noise_dim, k1 * noise_dim)
    return (np.sqrt(dt) * z).reshape(z.shape[0], k1 - k0, noise_dim)
