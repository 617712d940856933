"""Axis-aligned boxes and a few exact volume formulas."""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product

import numpy as np


def unit_ball_volume(dim: int) -> float:
    """Lebesgue measure of the Euclidean unit ball in ``dim`` dimensions."""
    if dim < 0:
        raise ValueError("dimension must be nonnegative")
    return math.pi ** (dim / 2) / math.gamma(dim / 2 + 1)


@dataclass(frozen=True)
class Box:
    """Closed axis-aligned box ``[lower, upper]``."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != len(hi) or not lo:
            raise ValueError("box bounds must be nonempty and of equal length")
        if any(not (a < b) for a, b in zip(lo, hi)):
            raise ValueError(f"degenerate box {lo} .. {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.lower)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.upper)

    @property
    def widths(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def volume(self) -> float:
        return float(np.prod(self.widths))

    def corners(self) -> np.ndarray:
        return np.array(list(product(*zip(self.lower, self.upper))))

    def contains(self, x, closed: bool = True, tol: float = 0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if closed:
            ok = (x >= self.lo - tol) & (x <= self.hi + tol)
        else:
            ok = (x > self.lo + tol) & (x < self.hi - tol)
        return np.all(ok, axis=-1)

    def contains_half_open(self, x, closed_upper=None) -> np.ndarray:
        """Membership in ``[lower, upper)``; axes flagged in ``closed_upper`` also admit ``upper``."""
        x = np.asarray(x, dtype=float)
        upper_ok = x < self.hi
        if closed_upper is not None:
            upper_ok = upper_ok | (np.asarray(closed_upper) & (x <= self.hi))
        return np.all((x >= self.lo) & upper_ok, axis=-1)

    def inflate(self, margin: float) -> Box:
        return Box(tuple(self.lo - margin), tuple(self.hi + margin))

    def intersection_volume(self, other: Box) -> float:
        w = np.minimum(self.hi, other.hi) - np.maximum(self.lo, other.lo)
        return float(np.prod(np.clip(w, 0.0, None)))

    def contains_box(self, other: Box, tol: float = 1e-12) -> bool:
        return bool(np.all(other.lo >= self.lo - tol) and np.all(other.hi <= self.hi + tol))

    def margin_inside(self, other: Box) -> float:
        """Smallest gap between ``other`` and the boundary of ``self`` (negative if it pokes out)."""
        return float(min(np.min(other.lo - self.lo), np.min(self.hi - other.hi)))

    def boundary_distance(self, x) -> np.ndarray:
        """Euclidean distance from points to the boundary of the box."""
        x = np.asarray(x, dtype=float)
        inside = self.contains(x)
        d_in = np.min(np.minimum(x - self.lo, self.hi - x), axis=-1)
        gap = np.maximum(np.maximum(self.lo - x, x - self.hi), 0.0)
        d_out = np.sqrt(np.sum(gap**2, axis=-1))
        return np.where(inside, d_in, d_out)

    def facet_count_at(self, x, tol: float = 1e-12) -> np.ndarray:
        """Number of facets of the box that contain each point."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        on_box = self.contains(x, tol=tol)
        hits = (np.abs(x - self.lo) <= tol).sum(axis=-1) + (np.abs(x - self.hi) <= tol).sum(axis=-1)
        return np.where(on_box, hits, 0)

    def edge_midpoints(self) -> np.ndarray:
        """Midpoints of the one-dimensional edges of the box."""
        pts = []
        for axis in range(self.dim):
            others = [(self.lower[a], self.upper[a]) for a in range(self.dim) if a != axis]
            mid = 0.5 * (self.lower[axis] + self.upper[axis])
            for combo in product(*others):
                p = list(combo)
                p.insert(axis, mid)
                pts.append(p)
        return np.array(pts)

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return self.lo + rng.random((count, self.dim)) * self.widths

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper)}
