"""Counter-based Philox4x32-10 generator, vectorized over numpy counter arrays.

Every draw is a pure function of ``(key, counter)``, so a normal variate for
particle ``i`` at step ``m`` never depends on how many other variates were
generated before it or on which worker produced it.
"""

from __future__ import annotations

import numpy as np

_MASK32 = np.uint64(0xFFFFFFFF)
_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
ROUNDS = 10

# Fourth counter word: keeps independent uses of one seed apart.
STREAM_NOISE = 0
STREAM_PROBE = 1


def seed_to_key(seed: int) -> tuple[int, int]:
    """Split a 64-bit seed into the two 32-bit Philox key words."""
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed & 0xFFFFFFFF, (seed >> 32) & 0xFFFFFFFF


def philox4x32(counter, key: tuple[int, int], rounds: int = ROUNDS):
    """Apply the Philox4x32 bijection.

    Args:
        counter: sequence of four broadcastable integer arrays (32-bit words).
        key: two 32-bit key words.
        rounds: number of rounds; 10 is the standard choice.

    Returns:
        Tuple of four ``uint64`` arrays holding 32-bit output words.
    """
    c0, c1, c2, c3 = np.broadcast_arrays(*(np.asarray(c, dtype=np.uint64) for c in counter))
    c0, c1, c2, c3 = (c & _MASK32 for c in (c0, c1, c2, c3))
    k0, k1 = int(key[0]) & 0xFFFFFFFF, int(key[1]) & 0xFFFFFFFF
    for _ in range(rounds):
        p0 = c0 * _M0
        p1 = c2 * _M1
        hi0, lo0 = p0 >> np.uint64(32), p0 & _MASK32
        hi1, lo1 = p1 >> np.uint64(32), p1 & _MASK32
        c0 = hi1 ^ c1 ^ np.uint64(k0)
        c1 = lo1
        c2 = hi0 ^ c3 ^ np.uint64(k1)
        c3 = lo0
        k0 = (k0 + _W0) & 0xFFFFFFFF
        k1 = (k1 + _W1) & 0xFFFFFFFF
    return c0, c1, c2, c3


def _open_unit(hi, lo):
    # 53 random bits mapped to the open interval (0, 1)
    bits = (hi << np.uint64(21)) | (lo >> np.uint64(11))
    return (bits.astype(np.float64) + 0.5) * 2.0**-53


def normals(seed: int, particles, steps, stream: int = STREAM_NOISE) -> np.ndarray:
    """Standard normal variates keyed by ``(seed, particle, step, stream)``.

    ``particles`` and ``steps`` are broadcast against each other; the result
    has the broadcast shape. One Philox block feeds one Box-Muller draw.
    """
    key = seed_to_key(int(seed))
    p = np.asarray(particles, dtype=np.uint64)
    s = np.asarray(steps, dtype=np.uint64)
    w0, w1, w2, w3 = philox4x32((s, p & _MASK32, p >> np.uint64(32), np.uint64(stream)), key)
    u1 = _open_unit(w0, w1)
    u2 = _open_unit(w2, w3)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def uniforms(seed: int, particles, steps, stream: int = STREAM_PROBE) -> np.ndarray:
    """Uniform variates on (0, 1) keyed like :func:`normals`."""
    key = seed_to_key(int(seed))
    p = np.asarray(particles, dtype=np.uint64)
    s = np.asarray(steps, dtype=np.uint64)
    w0, w1, _, _ = philox4x32((s, p & _MASK32, p >> np.uint64(32), np.uint64(stream)), key)
    return _open_unit(w0, w1)
