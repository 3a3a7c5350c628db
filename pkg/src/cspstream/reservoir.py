"""Reservoir sampling driven by the random tape.

The ``i``-th arrival (1-based) draws ``u`` keyed by ``i`` and lands in
slot ``floor(u * i)`` when that index is below the capacity.  While the
reservoir is filling every arrival is appended.  ``count`` starts at 0;
the i-th update sees ``count == i`` after incrementing, which matches
the usual 1-based formulation with ``<=``.
"""

from __future__ import annotations

import numpy as np

from .tape import RandomTape


class Reservoir:
    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("reservoir capacity must be at least 1")
        self.capacity = int(capacity)
        self.slots: list = []
        self.count = 0

    def __len__(self):
        return len(self.slots)

    def __iter__(self):
        return iter(self.slots)

    def update(self, element, tape: RandomTape, namespace="reservoir"):
        self.count += 1
        if self.count <= self.capacity:
            self.slots.append(element)
            return
        idx = int(tape.uniform(namespace, self.count) * self.count)
        if idx < self.capacity:
            self.slots[idx] = element

    def extend(self, elements, tape: RandomTape, namespace="reservoir"):
        """Offer a batch in arrival order; same outcome as repeated ``update``."""
        elements = list(elements)
        start = self.count
        fill = max(0, min(len(elements), self.capacity - start))
        self.slots.extend(elements[:fill])
        rest = len(elements) - fill
        if rest > 0:
            counts = np.arange(start + fill + 1, start + len(elements) + 1)
            idx = np.floor(tape.uniform(namespace, counts) * counts).astype(np.int64)
            for pos in np.nonzero(idx < self.capacity)[0]:
                self.slots[idx[pos]] = elements[fill + pos]
        self.count = start + len(elements)

    def sample(self) -> list:
        return list(self.slots)


def reservoir_init(s: int) -> Reservoir:
    return Reservoir(s)


def reservoir_update(res: Reservoir, element, tape: RandomTape) -> Reservoir:
    res.update(element, tape)
    return res
