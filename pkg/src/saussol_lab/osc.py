"""Oscillation fields, the α-seminorm and the bounded-oscillation norm on grids.

A grid function is the piecewise-constant field it stores, extended by zero
outside ``C``.  Essential sup/inf over a ball ``B_ε(x)`` are the max/min over
the cells whose centres lie strictly within ``ε`` of the centre of the cell
containing ``x``.  Fields are evaluated on ``C`` padded by the stencil reach,
since outside that band the ball sees only the zero extension.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.ndimage import maximum_filter1d, minimum_filter1d

from .geometry import Box
from .grid import Grid, GridFunction

MIN_RESOLUTION = 8


@dataclass(frozen=True)
class OscParams:
    """Seminorm parameters: ``α``, the cap ``ε̃0`` and a geometric ε-ladder."""

    alpha: float
    eps_tilde: float
    ratio: float = 0.75
    levels: int = 16
    extension: str = "zero"

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha must lie in (0, 1]")
        if self.eps_tilde <= 0:
            raise ValueError("eps_tilde must be positive")
        if not (0.0 < self.ratio < 1.0):
            raise ValueError("ladder ratio must lie in (0, 1)")
        if self.levels < 8:
            raise ValueError("the ε-ladder needs at least 8 levels")
        if self.extension not in ("zero", "restricted"):
            raise ValueError("extension must be 'zero' or 'restricted'")

    @cached_property
    def ladder(self) -> np.ndarray:
        return self.eps_tilde * self.ratio ** np.arange(self.levels)


def _check_resolution(grid: Grid):
    if min(grid.shape) < MIN_RESOLUTION:
        raise ValueError(f"oscillation needs at least {MIN_RESOLUTION} cells per axis, got {grid.shape}")


def padded_grid(grid: Grid, pad: tuple[int, ...]) -> Grid:
    m = np.asarray(pad) * grid.h
    return Grid(Box(tuple(grid.box.lo - m), tuple(grid.box.hi + m)), tuple(n + 2 * p for n, p in zip(grid.shape, pad)))


def _pad(values: np.ndarray, pad, cval=0.0) -> np.ndarray:
    return np.pad(values, [(p, p) for p in pad], mode="constant", constant_values=cval)


def _shifted(a: np.ndarray, offset, cval) -> np.ndarray:
    """``out[x] = a[x + offset]`` along the leading axes, ``cval`` where out of range."""
    out = np.full_like(a, cval)
    src, dst = [], []
    for o, n in zip(offset, a.shape):
        if o >= 0:
            src.append(slice(o, n))
            dst.append(slice(0, n - o))
        else:
            src.append(slice(0, n + o))
            dst.append(slice(-o, n))
    out[tuple(dst)] = a[tuple(src)]
    return out


def ball_extreme(padded: np.ndarray, grid: Grid, eps: float, kind: str, cval: float = 0.0) -> np.ndarray:
    """Max (``kind="max"``) or min over the radius-``eps`` stencil at every cell of ``padded``.

    Cells beyond the array take the value ``cval``.  The disc is decomposed
    into runs along the last axis, each handled by a 1D running filter.
    """
    filt = maximum_filter1d if kind == "max" else minimum_filter1d
    pick = np.maximum if kind == "max" else np.minimum
    runs = grid.stencil(eps)
    by_width = {}
    out = None
    for offset, w in runs:
        if w not in by_width:
            by_width[w] = filt(padded, size=2 * w + 1, axis=-1, mode="constant", cval=cval)
        term = _shifted(by_width[w], offset, cval)
        out = term if out is None else pick(out, term)
    return out


def osc_array(f: GridFunction, eps: float, extension: str = "zero") -> tuple[np.ndarray, tuple[int, ...]]:
    """Raw oscillation array plus the padding used.

    With ``extension="zero"`` the array covers ``C`` padded by the stencil
    reach.  With ``"restricted"`` balls are intersected with ``C`` (no zero
    extension) and the array covers ``C`` only.
    """
    grid = f.grid
    _check_resolution(grid)
    if extension == "restricted":
        hi = ball_extreme(f.values, grid, eps, "max", cval=-np.inf)
        lo = ball_extreme(f.values, grid, eps, "min", cval=np.inf)
        return hi - lo, (0,) * grid.dim
    pad = grid.reach(eps)
    P = _pad(f.values, pad)
    return ball_extreme(P, grid, eps, "max") - ball_extreme(P, grid, eps, "min"), pad


def osc_field(f: GridFunction, eps: float, extension: str = "zero") -> GridFunction:
    """``x -> osc(f, B_ε(x))`` as a grid function on the padded box."""
    arr, pad = osc_array(f, eps, extension)
    return GridFunction(padded_grid(f.grid, pad), arr)


def osc_integral(f: GridFunction, eps: float, extension: str = "zero") -> float:
    """``∫ osc(f, B_ε(x)) dx`` over ``R^N`` (over ``C`` when restricted)."""
    arr, _ = osc_array(f, eps, extension)
    return float(arr.sum() * f.grid.cell_volume)


def seminorm_profile(f: GridFunction, p: OscParams) -> np.ndarray:
    """``ε^{-α} ∫ osc(f, B_ε)`` at every ladder radius."""
    return np.array([osc_integral(f, e, p.extension) / e**p.alpha for e in p.ladder])


def alpha_seminorm(f: GridFunction, p: OscParams) -> float:
    return float(np.max(seminorm_profile(f, p)))


def v_alpha_norm(f: GridFunction, p: OscParams) -> float:
    return f.l1() + alpha_seminorm(f, p)


@dataclass(frozen=True)
class PositivityBall:
    radius: float
    center: tuple[float, ...]
    inf_value: float

    @property
    def found(self) -> bool:
        return self.inf_value > 0


def positivity_radius(h: GridFunction, p: OscParams) -> float:
    semi = alpha_seminorm(h, p)
    mass = h.integral()
    if semi == 0.0:
        return p.eps_tilde
    return float(min(p.eps_tilde, (mass / semi) ** (1.0 / p.alpha)))


def positivity_ball(h: GridFunction, p: OscParams) -> PositivityBall:
    """Ball of the lemma's radius on which ``h`` has the largest minimum.

    The radius is ``min(ε̃0, (∫h / |h|_α)^{1/α})``; every cell centre of ``C``
    is tried as a ball centre and the one with the largest minimum is kept.
    """
    if np.any(h.values < 0):
        raise ValueError("positivity ball needs a nonnegative function")
    if not np.any(h.values > 0):
        raise ValueError("positivity ball needs a nonzero function")
    _check_resolution(h.grid)
    r = positivity_radius(h, p)
    pad = h.grid.reach(r)
    mins = ball_extreme(_pad(h.values, pad), h.grid, r, "min")
    inner = mins[tuple(slice(q, q + n) for q, n in zip(pad, h.grid.shape))]
    k = int(np.argmax(inner))
    centre = h.grid.flat_centers()[k]
    return PositivityBall(r, tuple(float(c) for c in centre), float(inner.reshape(-1)[k]))


# ---------------------------------------------------------------------------
# Calculus of the oscillation, checked cell by cell


@dataclass
class Prop32Report:
    violations: dict[str, float]

    @property
    def max_violation(self) -> float:
        return max(self.violations.values())

    def passed(self, tol: float = 1e-9) -> bool:
        return self.max_violation <= tol


def _masked_extreme(P, grid, eps, mask, kind):
    fill = -np.inf if kind == "max" else np.inf
    return ball_extreme(np.where(mask, P, fill), grid, eps, kind, cval=fill)


def prop32_suite(f: GridFunction, g: GridFunction, K: np.ndarray, a: float, b: float, c: float) -> Prop32Report:
    """Largest violation (LHS - RHS, floored at 0) of four oscillation inequalities.

    (i)   subadditivity of ``osc(·, B_a(x))``;
    (ii)  the cut-off bound for ``f 1_K`` with the collar ``B_a(K) ∩ B_a(K^c)``;
    (iii) the product bound on every ball ``B_a(x)``, for ``g >= 0``;
    (iv)  sup over ``B_a(x)`` against the ``B_b(x)`` average of ``f + osc(f, B_c(·))``.

    ``K`` is a boolean cell mask on the grid of ``f``.
    """
    if a + b > c:
        raise ValueError("the averaging bound needs a + b <= c")
    if f.grid != g.grid:
        raise ValueError("grid mismatch")
    if np.any(g.values < 0):
        raise ValueError("the product bound is stated for nonnegative g")
    grid = f.grid
    _check_resolution(grid)
    K = np.asarray(K, dtype=bool).reshape(grid.shape)
    pad = tuple(max(x, y) + 1 for x, y in zip(grid.reach(c), grid.reach(a + b)))
    F, G = _pad(f.values, pad), _pad(g.values, pad)
    KK = _pad(K, pad, cval=False)

    def osc(P, e):
        return ball_extreme(P, grid, e, "max") - ball_extreme(P, grid, e, "min")

    out = {}
    out["i"] = float(np.max(osc(F + G, a) - osc(F, a) - osc(G, a)))

    lhs = osc(F * KK, a)
    mx = _masked_extreme(F, grid, a, KK, "max")
    mn = _masked_extreme(F, grid, a, KK, "min")
    empty = ~np.isfinite(mx)
    osc_fk = np.where(empty, 0.0, np.where(empty, 0.0, mx) - np.where(empty, 0.0, mn))
    sup_abs = np.where(empty, 0.0, np.maximum(_masked_extreme(np.abs(F), grid, a, KK, "max"), 0.0))
    near_k = ball_extreme(KK.astype(float), grid, a, "max") > 0
    near_kc = ball_extreme((~KK).astype(float), grid, a, "max", cval=1.0) > 0
    rhs = osc_fk * KK + 2 * sup_abs * (near_k & near_kc)
    out["ii"] = float(np.max(lhs - rhs))

    rhs3 = osc(F, a) * ball_extreme(G, grid, a, "max") + osc(G, a) * ball_extreme(np.abs(F), grid, a, "min")
    out["iii"] = float(np.max(osc(F * G, a) - rhs3))

    sup_a = ball_extreme(F, grid, a, "max")
    integrand = F + osc(F, c)
    acc = np.zeros_like(F)
    count = 0
    for offset, w in grid.stencil(b):
        for j in range(-w, w + 1):
            acc += _shifted(integrand, tuple(offset) + (j,), 0.0)
            count += 1
    out["iv"] = float(np.max(sup_a - acc / count))
    return Prop32Report({k: max(0.0, v) for k, v in out.items()})

