"""Counter-based random streams.

Every draw is a pure function of ``(seed, stream, substream, counter)``, so a
path can be regenerated in isolation and the order in which paths are
simulated never changes the numbers they see.  The mixing function is the
SplitMix64 finalizer applied to a running combination of the four words,
evaluated on whole numpy arrays at once.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * _M1
    z = z ^ (z >> np.uint64(27))
    z = z * _M2
    return z ^ (z >> np.uint64(31))


def _as_u64(a) -> np.ndarray:
    arr = np.asarray(a)
    if arr.dtype.kind == "i" and np.any(arr < 0):
        raise ValueError("stream identifiers must be nonnegative")
    return arr.astype(np.uint64)


def hash_words(seed, stream, substream, counter) -> np.ndarray:
    """64-bit hash of four broadcastable integer arrays."""
    seed_word = np.uint64(int(seed) & _MASK)
    with np.errstate(over="ignore"):
        h = _mix(seed_word + _GOLDEN)
        for word in (stream, substream, counter):
            h = _mix((h ^ _as_u64(word)) + _GOLDEN)
    return h


def uniforms(seed, stream, substream, counter) -> np.ndarray:
    """Uniform draws in the open interval (0, 1), one per broadcast element."""
    bits = hash_words(seed, stream, substream, counter) >> np.uint64(11)
    return (bits.astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


class CounterStream:
    """Bookkeeping wrapper for a batch of substreams sharing one seed.

    Each call to :meth:`next` returns one uniform per substream and advances
    a shared counter, so the k-th call always reproduces the same values.
    """

    def __init__(self, seed: int, stream, substream):
        self.seed = int(seed)
        self.stream = np.asarray(stream)
        self.substream = np.asarray(substream)
        self.counter = 0

    def next(self, mask=None) -> np.ndarray:
        u = uniforms(self.seed, self.stream, self.substream, self.counter)
        self.counter += 1
        if mask is not None:
            return u[mask]
        return u

    def lineage(self) -> dict:
        return {"seed": self.seed, "draws": self.counter}


def gaussian_vectors(seed: int, stream: int, count: int, size: int) -> np.ndarray:
    """Deterministic standard normal vectors via Box-Muller on counter draws."""
    rows = np.arange(count)[:, None]
    cols = np.arange(size)[None, :]
    u1 = uniforms(seed, stream, rows, 2 * cols)
    u2 = uniforms(seed, stream, rows, 2 * cols + 1)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def generator(seed: int, *keys: int) -> np.random.Generator:
    """A numpy Generator for non-path randomness (instance sampling)."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys)))
