"""Reproducible random numbers.

Every random draw in the package comes from a SplitMix64 stream so results can
be replayed bit-for-bit in any language:

* output ``i`` (0-based) of a stream seeded with ``s`` is
  ``mix64(s + (i + 1) * 0x9E3779B97F4A7C15)`` (mod 2**64);
* a uniform double in ``[0, 1)`` is ``(z >> 11) * 2**-53``;
* Gaussians use Box-Muller on consecutive pairs of outputs ``(z_2j, z_2j+1)``:
  ``u1 = ((z_2j >> 11) + 1) * 2**-53`` (in ``(0, 1]``), ``u2 = (z_2j+1 >> 11) * 2**-53``,
  giving ``r cos(2 pi u2)`` then ``r sin(2 pi u2)`` with ``r = sqrt(-2 ln u1)``.

Sub-seeds are derived with :func:`derive_seed` instead of sharing generator state.
"""
from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MUL1 = 0xBF58476D1CE4E5B9
_MUL2 = 0x94D049BB133111EB
_INV_2_53 = 1.0 / (1 << 53)


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a Python int."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MUL1) & MASK64
    z = ((z ^ (z >> 27)) * _MUL2) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MUL1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MUL2)
    return z ^ (z >> np.uint64(31))


def _key_to_int(key) -> int:
    if isinstance(key, (bool, np.bool_)):
        return int(key)
    if isinstance(key, (int, np.integer)):
        return int(key) & MASK64
    if isinstance(key, str):
        key = key.encode()
    if isinstance(key, (bytes, bytearray, memoryview)):
        return int.from_bytes(hashlib.blake2b(bytes(key), digest_size=8).digest(), "little")
    raise TypeError(f"unsupported seed key type: {type(key).__name__}")


def derive_seed(seed: int, *keys) -> int:
    """Derive an independent 64-bit seed from ``seed`` and a path of keys.

    Integer keys are used directly, strings/bytes through an 8-byte BLAKE2b
    digest. Each step is ``mix64(h ^ mix64(key + GOLDEN_GAMMA))``.
    """
    h = int(seed) & MASK64
    for key in keys:
        h = mix64(h ^ mix64(_key_to_int(key) + GOLDEN_GAMMA))
    return h


def array_seed(x: np.ndarray) -> int:
    """A 64-bit key from the exact bytes of a float64 array."""
    data = np.ascontiguousarray(x, dtype=np.float64).tobytes()
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


class SplitMix64:
    """Counter-based SplitMix64 stream.

    Draws advance an internal counter, so two generators with the same seed
    produce the same sequence regardless of how the draws are chunked.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        self.counter = 0

    def raw(self, n: int) -> np.ndarray:
        """Next ``n`` 64-bit outputs."""
        if n < 0:
            raise ValueError("n must be non-negative")
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            state = np.uint64(self.seed) + idx * np.uint64(GOLDEN_GAMMA)
            return _mix64_array(state)

    def uniform(self, size=None) -> np.ndarray:
        """Uniform doubles in ``[0, 1)``."""
        shape = () if size is None else size
        n = int(np.prod(shape, dtype=np.int64))
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        return u.reshape(shape)

    def normal(self, size=None) -> np.ndarray:
        """Standard normals via Box-Muller (see module docstring)."""
        shape = () if size is None else size
        n = int(np.prod(shape, dtype=np.int64))
        pairs = (n + 1) // 2
        z = self.raw(2 * pairs) >> np.uint64(11)
        u1 = (z[0::2].astype(np.float64) + 1.0) * _INV_2_53
        u2 = z[1::2].astype(np.float64) * _INV_2_53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.empty(2 * pairs)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n].reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        """Permutation of ``range(n)``: stable argsort of ``n`` raw outputs."""
        return np.argsort(self.raw(n), kind="stable")

    def choice(self, n: int, size: int) -> np.ndarray:
        """``size`` distinct indices from ``range(n)``, in draw order."""
        if not 0 <= size <= n:
            raise ValueError(f"cannot draw {size} distinct items from {n}")
        return self.permutation(n)[:size]
