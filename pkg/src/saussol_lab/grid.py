"""Uniform cell grids over a box and piecewise-constant functions on them."""

from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass
from functools import cached_property, lru_cache
from pathlib import Path

import numpy as np

from .geometry import Box

_MAGIC = b"SLGF"
_VERSION = 1


@dataclass(frozen=True)
class Grid:
    """``n[k]`` equal cells along axis ``k`` of ``box``; values are stored row-major."""

    box: Box
    shape: tuple[int, ...]

    def __post_init__(self):
        shape = tuple(int(v) for v in (self.shape if np.ndim(self.shape) else [self.shape] * self.box.dim))
        if len(shape) != self.box.dim:
            raise ValueError("one resolution per axis is required")
        if any(v < 1 for v in shape):
            raise ValueError("grid resolution must be positive")
        object.__setattr__(self, "shape", shape)

    @classmethod
    def regular(cls, box: Box, n: int) -> Grid:
        return cls(box, (n,) * box.dim)

    @classmethod
    def square_cells(cls, box: Box, n: int) -> Grid:
        """``n`` cells per unit length on every axis (requires integer side lengths times ``n``)."""
        shape = tuple(int(round(w * n)) for w in box.widths)
        return cls(box, shape)

    @property
    def dim(self) -> int:
        return self.box.dim

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def h(self) -> np.ndarray:
        return self.box.widths / np.asarray(self.shape)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    def axis_centers(self, axis: int) -> np.ndarray:
        return self.box.lower[axis] + (np.arange(self.shape[axis]) + 0.5) * self.h[axis]

    def axis_edges(self, axis: int) -> np.ndarray:
        return self.box.lower[axis] + np.arange(self.shape[axis] + 1) * self.h[axis]

    @cached_property
    def centers(self) -> np.ndarray:
        """Cell centres, shape ``shape + (dim,)``."""
        axes = [self.axis_centers(k) for k in range(self.dim)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def flat_centers(self) -> np.ndarray:
        return self.centers.reshape(-1, self.dim)

    def cell_box(self, flat_index: int) -> Box:
        idx = np.unravel_index(flat_index, self.shape)
        lo = self.box.lo + np.asarray(idx) * self.h
        return Box(tuple(lo), tuple(lo + self.h))

    def locate(self, x) -> np.ndarray:
        """Flat index of the cell containing each point (upper faces of ``C`` belong to the last cell); -1 outside."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        rel = (x - self.box.lo) / self.h
        idx = np.floor(rel).astype(np.int64)
        shape = np.asarray(self.shape)
        on_top = np.isclose(x, self.box.hi, rtol=0, atol=1e-12 * max(1.0, float(np.max(np.abs(self.box.hi)))))
        idx = np.where(on_top & (idx == shape), shape - 1, idx)
        inside = np.all((idx >= 0) & (idx < shape), axis=1)
        flat = np.full(len(x), -1, dtype=np.int64)
        if inside.any():
            flat[inside] = np.ravel_multi_index(tuple(idx[inside].T), self.shape)
        return flat

    def spec(self) -> dict:
        return {"box": self.box.to_dict(), "shape": list(self.shape)}

    def stencil(self, eps: float) -> tuple[tuple[tuple[int, ...], int], ...]:
        """Disc stencil of radius ``eps`` as runs along the last axis.

        Returns pairs ``(offset over the leading axes, half-width along the last
        axis)``; a cell at offset ``o`` belongs to the stencil iff its centre is
        at Euclidean distance strictly less than ``eps``.
        """
        return _stencil(tuple(float(v) for v in self.h), float(eps))

    def reach(self, eps: float) -> tuple[int, ...]:
        """Largest per-axis cell offset in the stencil of radius ``eps``."""
        return tuple(max(0, math.ceil(eps / hk) - 1) for hk in self.h)


@lru_cache(maxsize=512)
def _stencil(h: tuple[float, ...], eps: float):
    if eps <= 0:
        raise ValueError("stencil radius must be positive")
    reach = [max(0, math.ceil(eps / hk) - 1) for hk in h]
    lead = [range(-r, r + 1) for r in reach[:-1]]
    runs = []
    for off in np.ndindex(*[2 * r + 1 for r in reach[:-1]]) if lead else [()]:
        o = tuple(int(k) - r for k, r in zip(off, reach[:-1]))
        rest = eps**2 - sum((oi * hk) ** 2 for oi, hk in zip(o, h[:-1]))
        if rest <= 0:
            continue
        w = math.ceil(math.sqrt(rest) / h[-1]) - 1
        # guard rounding at the strict boundary
        while w >= 0 and (w * h[-1]) ** 2 >= rest:
            w -= 1
        while ((w + 1) * h[-1]) ** 2 < rest:
            w += 1
        if w >= 0:
            runs.append((o, w))
    return tuple(runs)


class GridFunction:
    """Piecewise-constant field on a :class:`Grid`, extended by zero outside ``C``."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values):
        v = np.asarray(values, dtype=float)
        if v.size != grid.size:
            raise ValueError(f"expected {grid.size} values, got {v.size}")
        v = v.reshape(grid.shape)
        if not np.all(np.isfinite(v)):
            raise ValueError("grid function values must be finite")
        self.grid = grid
        self.values = v

    @classmethod
    def constant(cls, grid: Grid, c: float) -> GridFunction:
        return cls(grid, np.full(grid.shape, float(c)))

    @classmethod
    def from_callable(cls, grid: Grid, fn) -> GridFunction:
        """Sample ``fn`` (vectorized over points ``(..., dim)``) at cell centres."""
        return cls(grid, fn(grid.centers))

    @classmethod
    def indicator(cls, grid: Grid, box: Box) -> GridFunction:
        """Indicator of the cells whose centres lie in ``box``."""
        return cls(grid, box.contains(grid.centers).astype(float))

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def l1(self) -> float:
        return float(np.abs(self.values).sum() * self.grid.cell_volume)

    def integral(self) -> float:
        return float(self.values.sum() * self.grid.cell_volume)

    def l1_distance(self, other: GridFunction) -> float:
        self._check(other)
        return float(np.abs(self.values - other.values).sum() * self.grid.cell_volume)

    def _check(self, other):
        if other.grid != self.grid:
            raise ValueError("grid mismatch")

    def __add__(self, other):
        if isinstance(other, GridFunction):
            self._check(other)
            return GridFunction(self.grid, self.values + other.values)
        return GridFunction(self.grid, self.values + other)

    def __sub__(self, other):
        if isinstance(other, GridFunction):
            self._check(other)
            return GridFunction(self.grid, self.values - other.values)
        return GridFunction(self.grid, self.values - other)

    def __mul__(self, other):
        if isinstance(other, GridFunction):
            self._check(other)
            return GridFunction(self.grid, self.values * other.values)
        return GridFunction(self.grid, self.values * other)

    __rmul__ = __mul__

    def __neg__(self):
        return GridFunction(self.grid, -self.values)

    def __repr__(self):
        return f"GridFunction(shape={self.grid.shape}, l1={self.l1():.6g})"

    # serialization

    def to_bytes(self) -> bytes:
        g = self.grid
        head = _MAGIC + struct.pack("<II", _VERSION, g.dim)
        head += struct.pack(f"<{g.dim}q", *g.shape)
        head += struct.pack(f"<{2 * g.dim}d", *g.box.lower, *g.box.upper)
        return head + np.ascontiguousarray(self.values, dtype="<f8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> GridFunction:
        if data[:4] != _MAGIC:
            raise ValueError("not a grid function file")
        version, dim = struct.unpack_from("<II", data, 4)
        if version != _VERSION:
            raise ValueError(f"unsupported grid function version {version}")
        off = 12
        shape = struct.unpack_from(f"<{dim}q", data, off)
        off += 8 * dim
        bounds = struct.unpack_from(f"<{2 * dim}d", data, off)
        off += 16 * dim
        grid = Grid(Box(bounds[:dim], bounds[dim:]), tuple(shape))
        vals = np.frombuffer(data, dtype="<f8", offset=off, count=grid.size)
        return cls(grid, vals.copy())

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> GridFunction:
        return cls.from_bytes(Path(path).read_bytes())

    def to_csv(self) -> str:
        """One row per cell: centre coordinates then value (for small grids)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x{k}" for k in range(self.grid.dim)] + ["value"])
        for c, v in zip(self.grid.flat_centers(), self.flat):
            w.writerow([repr(float(t)) for t in c] + [repr(float(v))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, grid: Grid) -> GridFunction:
        rows = list(csv.reader(io.StringIO(text)))[1:]
        vals = np.empty(grid.size)
        pts = np.array([[float(t) for t in r[:-1]] for r in rows])
        idx = grid.locate(pts)
        if np.any(idx < 0) or len(set(idx.tolist())) != grid.size:
            raise ValueError("CSV rows do not cover the grid")
        vals[idx] = [float(r[-1]) for r in rows]
        return cls(grid, vals)
