"""Monte Carlo estimates with normal-approximation confidence intervals."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

Z95 = 1.96


@dataclass(frozen=True)
class McEstimate:
    """Sample mean with a 95% half-width ``Z95 * std / sqrt(n)``."""

    mean: float
    n: int
    half_width: float
    seed: int | None = None

    @classmethod
    def from_samples(cls, values, seed=None) -> "McEstimate":
        # numpy reductions over contiguous float arrays use pairwise summation,
        # so the result does not depend on how the samples were produced
        v = np.ascontiguousarray(np.asarray(values, dtype=float).ravel())
        n = v.size
        if n == 0:
            raise ValueError("no samples")
        mean = float(np.sum(v) / n)
        if n > 1:
            std = float(np.sqrt(np.sum((v - mean) ** 2) / (n - 1)))
        else:
            std = math.inf
        return cls(mean, int(n), Z95 * std / math.sqrt(n), seed)

    @property
    def lower(self) -> float:
        return self.mean - self.half_width

    @property
    def upper(self) -> float:
        return self.mean + self.half_width

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper

    def to_dict(self) -> dict:
        return asdict(self)
