"""Counter-based random numbers.

Every draw is a pure function of ``(seed, stream labels, counter)`` so that
datasets, initializations and minibatch orders can be regenerated anywhere
without carrying generator state around.

Algorithm (stable, meant to be re-implementable):

* a stream key is derived from the seed by folding each label in with
  ``key = mix64(key ^ (label + GOLDEN))``; string labels are first reduced to
  a 64-bit integer with BLAKE2b (8-byte digest, little-endian);
* draw ``i`` of a stream is the SplitMix64 output ``mix64(key + (i+1)*GOLDEN)``;
* uniforms take the top 53 bits: ``((bits >> 11) + 0.5) * 2**-53`` (open
  interval, never 0 or 1);
* normal ``j`` uses uniforms ``2j`` and ``2j+1`` through the cosine branch of
  Box-Muller: ``sqrt(-2 ln u1) * cos(2 pi u2)``.
"""

from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a Python int."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    # uint64 array arithmetic wraps modulo 2**64
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def label_to_int(label) -> int:
    if isinstance(label, (bool, np.bool_)):
        return int(label)
    if isinstance(label, (int, np.integer)):
        return int(label) & MASK64
    digest = hashlib.blake2b(str(label).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_key(seed: int, *labels) -> int:
    key = label_to_int(seed)
    for label in labels:
        key = mix64(key ^ ((label_to_int(label) + GOLDEN) & MASK64))
    return key


class Stream:
    """One addressable sequence of 64-bit draws."""

    def __init__(self, seed: int, *labels):
        self.seed = seed
        self.labels = labels
        self.key = derive_key(seed, *labels)

    def child(self, *labels) -> "Stream":
        return Stream(self.seed, *self.labels, *labels)

    def bits(self, n: int, offset: int = 0) -> np.ndarray:
        counters = np.arange(offset + 1, offset + n + 1, dtype=np.uint64)
        z = np.uint64(self.key) + counters * np.uint64(GOLDEN)
        return _mix64_array(z)

    def uniform(self, n: int, offset: int = 0) -> np.ndarray:
        b = self.bits(n, offset) >> np.uint64(11)
        return (b.astype(np.float64) + 0.5) * 2.0**-53

    def normal(self, n: int, offset: int = 0) -> np.ndarray:
        u = self.uniform(2 * n, 2 * offset)
        return np.sqrt(-2.0 * np.log(u[0::2])) * np.cos(2.0 * np.pi * u[1::2])

    def permutation(self, n: int) -> np.ndarray:
        # ties between 64-bit draws are astronomically unlikely; stable sort pins them anyway
        return np.argsort(self.bits(n), kind="stable")
