"""Injectable randomness.

Every operation that needs randomness takes an ``Rng``.  A seeded instance is
fully deterministic (simulator replays, tests); an unseeded one draws from the
operating system.
"""

from __future__ import annotations

import random
import secrets


class Rng:
    def __init__(self, seed: int | None = None):
        self.seed = seed
        self._r = random.Random(seed) if seed is not None else secrets.SystemRandom()

    def bytes(self, n: int) -> bytes:
        if n == 0:
            return b""
        return self._r.getrandbits(8 * n).to_bytes(n, "big")

    def getrandbits(self, k: int) -> int:
        return self._r.getrandbits(k)

    def randbelow(self, n: int) -> int:
        return self._r.randrange(n)

    def randrange(self, start: int, stop: int) -> int:
        return self._r.randrange(start, stop)

    def choice(self, seq):
        return seq[self._r.randrange(len(seq))]

    def fork(self) -> "Rng":
        """Independent child stream; deterministic if this one is."""
        if self.seed is None:
            return Rng()
        return Rng(self._r.getrandbits(64))


def ensure_rng(rng: Rng | None) -> Rng:
    return rng if rng is not None else Rng()
