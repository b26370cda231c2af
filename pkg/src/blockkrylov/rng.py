"""Deterministic randomness: one master seed, named substreams.

Every random draw in the library flows through a SeedStream so that a
run is reproducible from (master seed, stream name) regardless of
evaluation order or threading.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .fixedpoint import FixedPoint


def child_seed(master: int, name: str) -> int:
    digest = hashlib.sha256(f"{master}\x1f{name}".encode()).digest()
    return int.from_bytes(digest[:16], "big")


class SeedStream:
    """Named deterministic stream of scalars derived from a master seed."""

    def __init__(self, master: int, name: str = "root"):
        self.master = int(master)
        self.name = name
        self._rng = np.random.default_rng(child_seed(self.master, name))

    def substream(self, name: str) -> "SeedStream":
        return SeedStream(self.master, f"{self.name}/{name}")

    def gauss_float(self) -> float:
        return float(self._rng.standard_normal())

    def uniform_float(self) -> float:
        return float(self._rng.random())

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi)."""
        return int(self._rng.integers(lo, hi))

    def gauss_fixed(self, frac_words: int, truncate_at: float = None,
                    resample: bool = False) -> FixedPoint:
        """Standard normal rounded to frac_words.

        truncate_at bounds |value|: clamping by default, rejection
        sampling when resample is set.
        """
        g = self.gauss_float()
        if truncate_at is not None:
            if resample:
                while abs(g) > truncate_at:
                    g = self.gauss_float()
            else:
                g = max(-truncate_at, min(truncate_at, g))
        return FixedPoint.from_float(g, frac_words)
