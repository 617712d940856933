"""Lasota-Yorke ingredients: the boundary profile G, ζ, η, D, the uniform D̃, and verification.

``G(x, ε) = Σ_i m(T_i^{-1} B_ε(∂T U_i) ∩ B_r(x)) / m(B_r(x))`` with
``r = (S - s) ε0``.  For affine planar branches the collar ``B_ε(∂T U_i)`` is
built as a buffered polygon, pulled back by the inverse affine map and clipped
against a polygonal disc, so the ratio is exact up to the disc polygon.
Non-affine branches use seeded Monte Carlo inside the disc and report σ.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import shapely
from shapely import affinity

from .base_process import BaseProcess, log_average
from .geometry import unit_ball_volume
from .grid import Grid, GridFunction
from .maps import MapFamily, SaussolMap, _box_boundary_samples, hoelder_constant
from .osc import OscParams, alpha_seminorm, v_alpha_norm
from .transfer import TransferBackend, apply

QUAD_SEGS = 64


@dataclass
class GProfile:
    label: str
    eps0: float
    radius: float
    eps: np.ndarray
    values: np.ndarray
    sigma: np.ndarray
    argmax: list
    method: str
    n_points: int

    def ratio_sup(self, alpha: float) -> float:
        """``sup_ε G(ε)/ε^α`` over the ladder."""
        return float(np.max(self.values / self.eps**alpha))

    def to_dict(self) -> dict:
        return {"map": self.label, "eps0": self.eps0, "radius": self.radius, "method": self.method,
                "n_points": self.n_points, "eps": self.eps.tolist(), "G": self.values.tolist(),
                "sigma": self.sigma.tolist()}


def g_ladder(eps0: float, ratio: float = 0.75, levels: int = 16) -> np.ndarray:
    return eps0 * ratio ** np.arange(levels)


def candidate_points(tmap: SaussolMap, coarse: int = 33, random: int = 256, seed: int = 0) -> np.ndarray:
    """Partition skeleton (vertices, edge midpoints), a coarse lattice and random points of ``C``."""
    box = tmap.box
    pts = [b.domain.corners() for b in tmap.branches] + [b.domain.edge_midpoints() for b in tmap.branches]
    axes = [np.linspace(lo, hi, coarse) for lo, hi in zip(box.lower, box.upper)]
    pts.append(np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, box.dim))
    pts.append(box.sample(np.random.default_rng(seed), random))
    return np.unique(np.round(np.concatenate(pts), 12), axis=0)


def _image_polygon(b):
    c = b.domain.corners()
    ring = np.array([c[0], c[1], c[3], c[2]])  # corners in product order -> cycle
    return shapely.Polygon(b.forward(ring))


def _pulled_collar(b, eps: float):
    collar = _image_polygon(b).exterior.buffer(eps, quad_segs=QUAD_SEGS)
    Ai, o = b._inv_matrix, b.offset
    t = -Ai @ o
    return affinity.affine_transform(collar, [Ai[0, 0], Ai[0, 1], Ai[1, 0], Ai[1, 1], t[0], t[1]])


def _profile_exact(tmap, eps_values, r, pts):
    discs = shapely.buffer(shapely.points(pts), r, quad_segs=QUAD_SEGS)
    disc_area = shapely.area(discs)
    G = np.zeros((len(eps_values), len(pts)))
    for k, eps in enumerate(eps_values):
        for b in tmap.branches:
            collar = _pulled_collar(b, eps)
            near = shapely.distance(shapely.points(pts), collar) < r
            if near.any():
                G[k, near] += shapely.area(shapely.intersection(discs[near], collar)) / disc_area[near]
    return G, np.zeros_like(G)


def _profile_mc(tmap, eps_values, r, pts, samples, seed):
    """Monte Carlo fraction of the disc in each pulled-back collar, with binomial σ."""
    dim = tmap.dim
    rng = np.random.default_rng(seed)
    u = rng.normal(size=(samples, dim))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    u *= rng.random((samples, 1)) ** (1.0 / dim)
    curves = []
    for b in tmap.branches:
        bd = _box_boundary_samples(b.domain, 257)
        curves.append(b.forward(bd))
    G = np.zeros((len(eps_values), len(pts)))
    var = np.zeros_like(G)
    for j, x in enumerate(pts):
        z = x + r * u
        for b, curve in zip(tmap.branches, curves):
            inV = b.extension.contains(z)
            if not inV.any():
                continue
            y = b.forward(z[inV])
            d = _distance_to_boundary_image(b, y, curve)
            for k, eps in enumerate(eps_values):
                p = np.count_nonzero(d < eps) / samples
                G[k, j] += p
                var[k, j] += p * (1 - p) / samples
    return G, np.sqrt(var)


def _distance_to_boundary_image(b, y, curve):
    if y.shape[1] == 2:
        # boundary image of a box: polyline through mapped boundary samples
        ring = shapely.Polygon(b.forward(_ordered_ring(b.domain, 257))).exterior
        return shapely.distance(shapely.points(y), ring)
    from scipy.spatial import cKDTree

    return cKDTree(curve).query(y)[0]


def _ordered_ring(box, per_edge):
    (x0, y0), (x1, y1) = box.lower, box.upper
    t = np.linspace(0, 1, per_edge)[:-1]
    return np.concatenate([
        np.c_[x0 + (x1 - x0) * t, np.full_like(t, y0)],
        np.c_[np.full_like(t, x1), y0 + (y1 - y0) * t],
        np.c_[x1 - (x1 - x0) * t, np.full_like(t, y1)],
        np.c_[np.full_like(t, x0), y1 - (y1 - y0) * t],
    ])


def g_profile(tmap: SaussolMap, eps0: float, S: float, eps_ladder=None, points=None, method: str = "auto",
              samples: int = 20_000, seed: int = 0, min_radius: float = 0.0) -> GProfile:
    """Sup over sampled ``x`` of ``G(x, ε)`` at each ladder radius (``ε = 0`` gives 0)."""
    s = tmap.s
    r = (S - s) * eps0
    if r <= 0:
        raise ValueError("(S - s) eps0 must be positive")
    if r < min_radius:
        raise ValueError(f"ball radius {r:.3g} is below the resolution {min_radius:.3g}")
    eps_values = g_ladder(eps0) if eps_ladder is None else np.asarray(eps_ladder, dtype=float)
    pts = candidate_points(tmap) if points is None else np.atleast_2d(np.asarray(points, dtype=float))
    if method == "auto":
        method = "exact" if (tmap.is_affine and tmap.dim == 2) else "monte-carlo"
    pos = eps_values > 0
    G = np.zeros((len(eps_values), len(pts)))
    sig = np.zeros_like(G)
    if pos.any():
        if method == "exact":
            if not (tmap.is_affine and tmap.dim == 2):
                raise ValueError("exact G profile needs affine planar branches")
            G[pos], sig[pos] = _profile_exact(tmap, eps_values[pos], r, pts)
        else:
            G[pos], sig[pos] = _profile_mc(tmap, eps_values[pos], r, pts, samples, seed)
    best = np.argmax(G, axis=1)
    cols = np.arange(len(eps_values))
    return GProfile(tmap.label, eps0, r, eps_values, G[cols, best], sig[cols, best],
                    [pts[i].tolist() for i in best], method, len(pts))


def hgfrd_bound(tmap: SaussolMap, eps0: float, S: float, eps) -> np.ndarray:
    """Polygonal-boundary estimate ``2 Y (γ_{N-1}/γ_N) s ε / ((S - s) ε0)``."""
    s, Y, N = tmap.s, tmap.boundary_multiplicity, tmap.dim
    return 2 * Y * unit_ball_volume(N - 1) / unit_ball_volume(N) * s * np.asarray(eps) / ((S - s) * eps0)


def zeta(s: float, eps0: float, S: float, alpha: float, profile: GProfile) -> float:
    return s**alpha + 2 * profile.ratio_sup(alpha) * (S * eps0) ** alpha


def eta_D(s: float, eps0: float, alpha: float, c: float, zeta_value: float, profile: GProfile) -> tuple[float, float]:
    k = 1 + c * s**alpha * eps0**alpha
    return k * zeta_value, c * s**alpha + 2 * k * profile.ratio_sup(alpha)


def uniform_D(D_values, xi: float, eps_tilde: float, alpha: float) -> float:
    """``D̃ = max(max_ω D(ω), ξ ε̃0^{-α})``."""
    return float(max(max(D_values), xi * eps_tilde ** (-alpha)))


@dataclass
class MapConstants:
    label: str
    s: float
    c: float
    Y: int
    Lambda: float
    zeta: float
    eta: float
    D: float
    profile: GProfile

    def to_dict(self) -> dict:
        return {"map": self.label, "s": self.s, "c": self.c, "Y": self.Y, "Lambda": self.Lambda,
                "zeta": self.zeta, "eta": self.eta, "D": self.D}


def map_constants(family: MapFamily, symbol: str, **profile_kw) -> MapConstants:
    from .maps import lambda_example

    m = family[symbol]
    a, e0, S = family.alpha, family.eps0, family.S
    prof = g_profile(m, e0, S, **profile_kw)
    c = hoelder_constant(m, a, eps0=e0)
    z = zeta(m.s, e0, S, a, prof)
    eta, D = eta_D(m.s, e0, a, c, z, prof)
    return MapConstants(m.label, m.s, c, m.boundary_multiplicity, lambda_example(m, a, S), z, eta, D, prof)


@dataclass
class AverageCondition:
    exact: float | None
    empirical: float
    verdict: bool

    @property
    def label(self) -> str:
        return "expanding on average (LY sense)" if self.verdict else "not expanding on average"


def average_condition(process: BaseProcess, etas: dict, n: int = 10_000) -> AverageCondition:
    avg = log_average(process, etas, n)
    val = avg.exact if avg.exact is not None else avg.empirical
    return AverageCondition(avg.exact, avg.empirical, bool(val < 0))


# ---------------------------------------------------------------------------
# ensembles and verification


def _normalize(f: GridFunction) -> GridFunction:
    n = f.l1()
    return f * (1.0 / n) if n > 0 else f


def ly_ensemble(grid: Grid, count: int = 60, seed: int = 0) -> list[tuple[str, GridFunction]]:
    """Named test functions normalized to unit L¹ norm.

    Constants, half-spaces, quadrants, random boxes, smooth bumps and random
    trigonometric sums (signed and nonnegative).
    """
    rng = np.random.default_rng(seed)
    box = grid.box
    lo, w = box.lo, box.widths
    X = grid.centers
    out = [("constant", GridFunction.constant(grid, 1.0))]
    for axis in range(grid.dim):
        for t in (0.25, 0.5, 0.7):
            out.append((f"halfspace_{axis}_{t}", GridFunction(grid, (X[..., axis] < lo[axis] + t * w[axis]) * 1.0)))
    for qx in (0, 1):
        for qy in (0, 1):
            m = (((X[..., 0] - lo[0]) >= qx * w[0] / 2) & ((X[..., 0] - lo[0]) < (qx + 1) * w[0] / 2)
                 & ((X[..., 1] - lo[1]) >= qy * w[1] / 2) & ((X[..., 1] - lo[1]) < (qy + 1) * w[1] / 2))
            out.append((f"quadrant_{qx}{qy}", GridFunction(grid, m * 1.0)))
    k = 0
    while len(out) < count:
        kind = k % 4
        if kind == 0:
            a = lo + rng.random(2) * w
            b = a + (0.05 + 0.5 * rng.random(2)) * w
            m = np.all((X >= a) & (X < b), axis=-1)
            f = m * 1.0
            name = "box"
        elif kind == 1:
            c = lo + rng.random(2) * w
            rad = (0.05 + 0.3 * rng.random()) * w.min()
            f = np.exp(-np.sum((X - c) ** 2, -1) / (2 * rad**2))
            name = "bump"
        else:
            f = np.zeros(grid.shape)
            for _ in range(4):
                kx, ky = rng.integers(1, 6, size=2)
                ph = rng.random(2) * 2 * np.pi
                f += rng.normal() * np.cos(2 * np.pi * kx * (X[..., 0] - lo[0]) / w[0] + ph[0]) * \
                    np.cos(2 * np.pi * ky * (X[..., 1] - lo[1]) / w[1] + ph[1])
            if kind == 3:
                f = f - f.min()
                name = "trig_pos"
            else:
                name = "trig"
        if np.abs(f).sum() > 0:
            out.append((f"{name}_{k}", GridFunction(grid, f)))
        k += 1
    return [(n, _normalize(f)) for n, f in out]


@dataclass
class LYReport:
    map: str
    alpha: float
    eps0: float
    S: float
    s: float
    c: float
    zeta: float
    eta: float
    D: float
    D_tilde: float | None
    Lambda: float
    backend: dict
    tol_discr: float
    rows: list = field(default_factory=list)
    E_log_eta_exact: float | None = None
    E_log_eta_empirical: float | None = None
    hybrid_rows: list | None = None

    @property
    def slacks(self) -> list[float]:
        return [r["slack"] for r in self.rows]

    @property
    def min_slack(self) -> float:
        return min(self.slacks)

    @property
    def passed(self) -> bool:
        return self.min_slack >= -self.tol_discr

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("map", "alpha", "eps0", "S", "s", "c", "zeta", "eta", "D", "D_tilde",
                                           "Lambda", "E_log_eta_exact", "E_log_eta_empirical", "backend",
                                           "tol_discr")}
        d["ensemble"] = [r["function_id"] for r in self.rows]
        d["slacks"] = self.slacks
        d["min_slack"] = self.min_slack
        d["verdict"] = "pass" if self.passed else "fail"
        if self.hybrid_rows is not None:
            d["hybrid_min_slack"] = min(r["slack"] for r in self.hybrid_rows)
        return d


def _ly_row(name, f, tmap, backend, params, eta, D):
    Lf = apply(backend, tmap, f)
    lhs = v_alpha_norm(Lf, params)
    fa = alpha_seminorm(f, params)
    l1 = f.l1()
    rhs = eta * (l1 + fa) + D * l1
    return {"function_id": name, "lhs": lhs, "rhs": rhs, "slack": rhs - lhs, "l1": l1, "seminorm": fa}


def calibration_tolerance(tmap: SaussolMap, grid: Grid, params: OscParams) -> float:
    """Twice the largest V_α gap between branch-sum and exact Ulam on branch-aligned indicators."""
    if not tmap.is_affine:
        return 0.0
    bs = TransferBackend("branch-sum", grid)
    ul = TransferBackend("ulam", grid)
    worst = 0.0
    for b in tmap.branches:
        f = _normalize(GridFunction.indicator(grid, b.domain))
        if f.l1() == 0:
            continue
        worst = max(worst, abs(v_alpha_norm(apply(bs, tmap, f), params) - v_alpha_norm(apply(ul, tmap, f), params)))
    return 2 * worst


def verify_ly(tmap: SaussolMap, consts: MapConstants, ensemble, grid: Grid, alpha: float, eps0: float, S: float,
              D_tilde: float | None = None, threads: int = 1, tol_discr: float | None = None) -> LYReport:
    """Both sides of ``||Lf||_α <= η||f||_α + D||f||_1`` with the branch-sum backend and ``ε̃0 = S ε0``.

    When ``D_tilde`` is given the same rows are also evaluated with ``D̃`` in
    place of ``D`` (reported separately as the hybrid check).
    """
    params = OscParams(alpha, S * eps0)
    backend = TransferBackend("branch-sum", grid)
    backend.matrix(tmap)
    if tol_discr is None:
        tol_discr = calibration_tolerance(tmap, grid, params)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        rows = list(pool.map(lambda nf: _ly_row(nf[0], nf[1], tmap, backend, params, consts.eta, consts.D),
                             ensemble))
    hybrid = None
    if D_tilde is not None:
        hybrid = [dict(r, rhs=consts.eta * (r["l1"] + r["seminorm"]) + D_tilde * r["l1"]) for r in rows]
        for r in hybrid:
            r["slack"] = r["rhs"] - r["lhs"]
    return LYReport(tmap.label, alpha, eps0, S, consts.s, consts.c, consts.zeta, consts.eta, consts.D, D_tilde, consts.Lambda,
                    backend.describe(), tol_discr, rows, hybrid_rows=hybrid)


def telescoped_bound(etas, Ds, f_norm: float, f_l1: float) -> list[float]:
    """Iterate ``b_{k+1} = η_k b_k + D_k ||f||_1`` from ``b_0 = ||f||_α`` (L¹ mass is non-increasing)."""
    b = [f_norm]
    for e, d in zip(etas, Ds):
        b.append(e * b[-1] + d * f_l1)
    return b


def sweep_eps0(family: MapFamily, process: BaseProcess, grid: Grid, factor: float = 0.5, max_steps: int = 20):
    """Halve ε0 until ``E log η < 0`` or the floor ``4 h / S`` is reached; returns the trace."""
    floor = 4 * float(np.max(grid.h)) / family.S
    eps0 = family.eps0
    trace = []
    for _ in range(max_steps):
        fam = MapFamily(family.maps, family.alpha, eps0, family.S, family.name)
        etas = {k: map_constants(fam, k).eta for k in fam.symbols}
        cond = average_condition(process, etas)
        trace.append({"eps0": eps0, "E_log_eta": cond.exact if cond.exact is not None else cond.empirical,
                      "verdict": cond.verdict})
        if cond.verdict or eps0 * factor < floor:
            break
        eps0 *= factor
    return trace


def ratio_to_bound(profile: GProfile, tmap: SaussolMap, S: float) -> np.ndarray:
    b = hgfrd_bound(tmap, profile.eps0, S, profile.eps)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(b > 0, profile.values / b, 0.0)

