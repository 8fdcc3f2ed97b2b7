from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class HyperRectangle:
    """Axis-aligned box ``prod_i [lower_i, upper_i]``."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        if len(lo) != len(hi):
            raise ValueError(f"bounds differ in length: {len(lo)} vs {len(hi)}")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"lower bound exceeds upper bound in {lo} / {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def cube(cls, lo: float, hi: float, dim: int) -> "HyperRectangle":
        return cls((lo,) * dim, (hi,) * dim)

    @classmethod
    def bounding(cls, points: np.ndarray) -> "HyperRectangle":
        points = np.asarray(points, dtype=np.float64)
        return cls(tuple(points.min(axis=0)), tuple(points.max(axis=0)))

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.lower)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.upper)

    def from_unit(self, u: np.ndarray) -> np.ndarray:
        """Map points of the unit cube affinely onto the box."""
        return self.lo + np.asarray(u) * (self.hi - self.lo)

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        return np.all((points >= self.lo) & (points <= self.hi), axis=1)

    def shift(self, offset) -> "HyperRectangle":
        offset = np.broadcast_to(np.asarray(offset, dtype=np.float64), (self.dim,))
        return HyperRectangle(tuple(self.lo + offset), tuple(self.hi + offset))

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper)}
