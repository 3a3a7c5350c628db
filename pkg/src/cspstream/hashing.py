"""w-wise independent hashing by random polynomials over a prime field."""

from __future__ import annotations

import gmpy2
import numpy as np

from .tape import RandomTape

_FAST_LIMIT = 1 << 63  # acc * key + a must not wrap
MIN_PRIME = (1 << 31) - 1  # keeps the mod-R bias below 1e-9 even for tiny n


def default_prime(n: int, w: int = 1, R: int = 2) -> int:
    """Smallest prime >= max(n^2, w, R, 2^31 - 1)."""
    return int(gmpy2.next_prime(max(n * n, w, R, MIN_PRIME) - 1))


class KWiseHash:
    """``h(v) = ((sum_j a_j v^j) mod p) mod R + 1`` with ``w`` random coefficients.

    Any ``w`` distinct keys below ``p`` get jointly uniform polynomial
    values; the final reduction mod ``R`` adds a bias of at most ``R/p``
    per point.
    """

    def __init__(self, w: int, R: int, p: int, coeffs):
        if w < 1 or R < 1:
            raise ValueError("need w >= 1 and R >= 1")
        if not gmpy2.is_prime(p):
            raise ValueError(f"modulus {p} is not prime")
        coeffs = [int(a) for a in coeffs]
        if len(coeffs) != w or any(not 0 <= a < p for a in coeffs):
            raise ValueError("coefficients must be w residues mod p")
        self.w, self.R, self.p, self.coeffs = w, R, p, coeffs

    @classmethod
    def from_tape(cls, tape: RandomTape, w: int, R: int, n: int, p: int | None = None):
        p = p or default_prime(n, w, R)
        words = tape.bits("hash-seed", np.arange(w))
        coeffs = [int(x) % p for x in np.atleast_1d(words)]
        return cls(w, R, p, coeffs)

    def poly(self, keys):
        """Polynomial value mod p (Horner, highest coefficient first)."""
        keys = np.asarray(keys, dtype=np.int64)
        top = int(keys.max()) % self.p if keys.size else 0
        if self.p * (top + 1) < _FAST_LIMIT:
            x = keys.astype(np.uint64) % np.uint64(self.p)
            p = np.uint64(self.p)
            acc = np.zeros_like(x)
            for a in reversed(self.coeffs):
                acc = (acc * x + np.uint64(a)) % p
            return acc.astype(np.int64)
        flat = []
        for key in keys.ravel().tolist():
            acc = 0
            for a in reversed(self.coeffs):
                acc = (acc * key + a) % self.p
            flat.append(acc)
        return np.array(flat, dtype=object).reshape(keys.shape)

    def __call__(self, keys):
        vals = self.poly(keys) % self.R + 1
        if np.ndim(vals) == 0:
            return int(vals)
        return np.asarray(vals, dtype=np.int64)

    def sampled(self, keys):
        """``h(v) == 1``, an event of probability about ``1/R``."""
        return self(keys) == 1
