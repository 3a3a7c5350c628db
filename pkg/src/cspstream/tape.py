"""Keyed deterministic randomness.

Every random decision in the estimators is a pure function of
``(seed, namespace, structural key)``.  Two algorithms that consult the
same namespace with the same key see the same draw, which is how the
offline and streaming estimators are coupled.  Keys are tuples of
non-negative integers; scalars and numpy arrays broadcast together.
"""

from __future__ import annotations

import numpy as np

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / (1 << 53)

NAMESPACES = (
    "hash-seed",
    "G",
    "G~",
    "copy-sample",
    "copy-assign",
    "resample",
    "reservoir",
    "subsample",
    "cset",
    "adversary",
    "trial",
    "guess",
)


def _mix(z):
    # splitmix64 finalizer; uint64 arithmetic wraps
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def _as_u64(x):
    return np.asarray(x, dtype=np.int64).astype(np.uint64)


class RandomTape:
    """Deterministic pseudorandom function over structural keys."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self._base = _mix(_as_u64([self.seed & 0x7FFFFFFFFFFFFFFF]) + _GOLDEN)

    def __repr__(self):
        return f"RandomTape(seed={self.seed})"

    def _ns(self, namespace: str):
        try:
            code = NAMESPACES.index(namespace) + 1
        except ValueError:
            raise KeyError(f"unknown tape namespace {namespace!r}") from None
        return _mix(self._base ^ _as_u64([code * 0x1000193]))

    def bits(self, namespace: str, *key) -> np.ndarray:
        """Raw 64-bit words for ``key`` (broadcast over array components)."""
        with np.errstate(over="ignore"):
            h = self._ns(namespace)
            parts = np.broadcast_arrays(*[np.asarray(k, dtype=np.int64) for k in key]) if key else []
            shape = parts[0].shape if parts else ()
            h = np.broadcast_to(h.reshape(()), shape).copy() if shape else h.reshape(())
            for part in parts:
                h = _mix(h ^ _mix(part.astype(np.uint64) + _GOLDEN))
            return h

    def uniform(self, namespace: str, *key):
        """Uniform draw in [0, 1) with 53 bits of precision.

        Returns a Python float for scalar keys and an ndarray otherwise.
        """
        h = self.bits(namespace, *key)
        u = (h >> _S11).astype(np.float64) * _INV53
        if np.ndim(u) == 0:
            return float(u)
        return u

    def randbelow(self, namespace: str, n: int, *key):
        """Uniform integer in ``range(n)``, via floor(u * n)."""
        u = self.uniform(namespace, *key)
        if isinstance(u, float):
            return int(u * n)
        return np.floor(u * n).astype(np.int64)

    def bernoulli(self, namespace: str, p: float, *key):
        u = self.uniform(namespace, *key)
        return u < p

    def child(self, index: int) -> "RandomTape":
        """An independent tape, e.g. for a trial or an m-guessing copy."""
        return RandomTape(int(self.bits("trial", index)) & 0x7FFFFFFFFFFFFFFF)

    def rng(self, *key) -> np.random.Generator:
        """A numpy Generator seeded from the tape, for bulk generator work."""
        return np.random.default_rng(int(self.bits("trial", *key)) if key else self.seed)
