"""Lyapunov and index-of-compactness diagnostics, ergodic-component counting, the skew
bound, and Birkhoff checks of physicality.
"""

from __future__ import annotations

import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import nnls

from .base_process import BaseProcess, forward_path, log_average
from .density import invariant_density, theta_bound
from .geometry import Box, unit_ball_volume
from .grid import Grid, GridFunction
from .maps import MapFamily, SaussolMap
from .osc import OscParams, v_alpha_norm
from .transfer import TransferBackend, apply

# ---------------------------------------------------------------------------
# Lyapunov exponent of the operator cocycle


@dataclass
class SpectralReport:
    names: list
    traces: list  # per function: (1/k) log ||L^(k) f||_alpha, k = 1..k_max
    slopes: list  # least-squares slope of log ||L^(k) f|| over the second half of the window
    kinds: list
    kappa_bound: float | None = None

    @property
    def density_estimates(self) -> list[float]:
        return [t[-1] for t, k in zip(self.traces, self.kinds) if k == "density"]

    def to_dict(self) -> dict:
        return {"functions": self.names, "kinds": self.kinds, "final": [t[-1] for t in self.traces],
                "slopes": self.slopes, "kappa_bound": self.kappa_bound}

    def trace_csv(self, index: int = 0) -> str:
        rows = ["k,log_norm_over_k"] + [f"{k + 1},{v!r}" for k, v in enumerate(self.traces[index])]
        return "\n".join(rows) + "\n"


def lyapunov_estimate(family: MapFamily, process: BaseProcess, anchor: int, bundle, k_max: int,
                      backend: TransferBackend, params: OscParams, threads: int = 1) -> SpectralReport:
    """``(1/k) log ||L^{(k)}_ω f||_α`` along the forward path for each ``(name, kind, f)`` in ``bundle``.

    ``kind`` is ``"density"`` or ``"signed"``.  A norm that underflows to 0
    gives ``-inf`` from then on.
    """
    path = forward_path(process, anchor, k_max)

    def run(item):
        name, kind, f = item
        logs = []
        cur = f
        for sym in path:
            cur = apply(backend, family[sym], cur)
            nrm = v_alpha_norm(cur, params)
            logs.append(math.log(nrm) if nrm > 0 else -math.inf)
        k = np.arange(1, k_max + 1)
        trace = [v / kk for v, kk in zip(logs, k)]
        half = k_max // 2
        y = np.array(logs[half:])
        if np.all(np.isfinite(y)) and len(y) > 1:
            slope = float(np.polyfit(k[half:], y, 1)[0])
        else:
            slope = -math.inf
        return trace, slope

    items = list(bundle)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        out = list(pool.map(run, items))
    return SpectralReport([i[0] for i in items], [o[0] for o in out], [o[1] for o in out], [i[1] for i in items])


def lyapunov_bundle(grid: Grid, count: int = 3, seed: int = 0) -> list:
    """Random densities (unit mass) and zero-mean signed functions."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        v = rng.random(grid.shape) + 0.1
        f = GridFunction(grid, v)
        out.append((f"density_{i}", "density", f * (1.0 / f.integral())))
    for i in range(count):
        v = rng.normal(size=grid.shape)
        v -= v.mean()
        out.append((f"signed_{i}", "signed", GridFunction(grid, v)))
    return out


@dataclass
class KappaBound:
    bound: float
    exact: float | None
    empirical: float
    verdict: bool

    @property
    def label(self) -> str:
        return "quasi-compact" if self.verdict else "withheld (E log eta >= 0)"


def kappa_bound(process: BaseProcess, etas: dict, n: int = 10_000) -> KappaBound:
    """``E log η`` as the formula bound on the index of compactness (λ* = 0)."""
    avg = log_average(process, etas, n)
    b = avg.exact if avg.exact is not None else avg.empirical
    return KappaBound(b, avg.exact, avg.empirical, bool(b < 0))


# ---------------------------------------------------------------------------
# counting ergodic components


def initial_densities(grid: Grid, split: int = 2, random_boxes: int = 4, seed: int = 0) -> list:
    """Normalized indicators of a ``split^N`` partition of ``C`` plus random sub-boxes."""
    box = grid.box
    out = []
    w = box.widths / split
    for idx in np.ndindex(*(split,) * grid.dim):
        lo = box.lo + np.asarray(idx) * w
        out.append((f"part_{''.join(map(str, idx))}", Box(tuple(lo), tuple(lo + w))))
    rng = np.random.default_rng(seed)
    for i in range(random_boxes):
        lo = box.lo + rng.random(grid.dim) * box.widths * 0.7
        hi = lo + (0.1 + 0.2 * rng.random(grid.dim)) * box.widths
        out.append((f"rand_{i}", Box(tuple(lo), tuple(np.minimum(hi, box.hi)))))
    funcs = []
    for name, b in out:
        f = GridFunction.indicator(grid, b)
        if f.integral() > 0:
            funcs.append((name, f * (1.0 / f.integral())))
    return funcs


def _cluster(vectors, cell_volume, tol):
    """Greedy single-link clustering in L¹; ties at the tolerance merge."""
    n = len(vectors)
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            D[i, j] = D[j, i] = np.abs(vectors[i] - vectors[j]).sum() * cell_volume
    labels = list(range(n))

    def find(i):
        while labels[i] != i:
            labels[i] = labels[labels[i]]
            i = labels[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if D[i, j] <= tol:
                a, b = find(i), find(j)
                if a != b:
                    labels[max(a, b)] = min(a, b)
    roots = [find(i) for i in range(n)]
    order = sorted(set(roots))
    return D, [order.index(r) for r in roots]


def _extremal(reps: list[np.ndarray], cell_volume: float, tol: float) -> list[int]:
    """Indices of representatives that are not convex combinations of the others."""
    keep = []
    for i, r in enumerate(reps):
        others = [reps[j] for j in range(len(reps)) if j != i]
        if not others:
            keep.append(i)
            continue
        A = np.column_stack(others)
        weight = 1e3 * max(1.0, float(np.abs(r).max()))
        A2 = np.vstack([A, weight * np.ones(A.shape[1])])
        b2 = np.concatenate([r, [weight]])
        w, _ = nnls(A2, b2, maxiter=50 * A2.shape[1])
        resid = np.abs(A @ w - r).sum() * cell_volume
        if resid > tol:
            keep.append(i)
    return keep


@dataclass
class ErgodicCount:
    r_emp: int
    names: list
    distances: np.ndarray
    labels: list
    extremal: list
    representatives: list
    support_overlap: np.ndarray
    excluded: list
    bound: float | None = None
    gamma_N: float | None = None

    def to_dict(self) -> dict:
        return {"r_emp": self.r_emp, "initial_densities": self.names, "labels": self.labels,
                "extremal_clusters": self.extremal, "distances": self.distances.tolist(),
                "support_overlap": self.support_overlap.tolist(), "excluded": self.excluded,
                "skew_bound": self.bound, "gamma_N": self.gamma_N}

    def distance_csv(self) -> str:
        head = "row," + ",".join(self.names)
        rows = [f"{n}," + ",".join(repr(float(v)) for v in row) for n, row in zip(self.names, self.distances)]
        return "\n".join([head] + rows) + "\n"


def count_ergodic(family: MapFamily, process: BaseProcess, anchor: int, backend: TransferBackend,
                  params: OscParams, inits=None, cluster_tol: float = 1e-3, s_max: int = 1 << 24,
                  tol_l1: float = 1e-6, threads: int = 1) -> ErgodicCount:
    """Cluster the Cesàro limits started from several initial densities and count extremal clusters."""
    grid = backend.grid
    inits = initial_densities(grid) if inits is None else list(inits)
    backend.matrix(family[family.symbols[0]])  # build caches before threading

    def run(item):
        return invariant_density(family, process, anchor, backend, params, s_max=s_max, tol_l1=tol_l1,
                                 init=item[1])

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        recs = list(pool.map(run, inits))
    ok = [i for i, r in enumerate(recs) if r.converged]
    excluded = [inits[i][0] for i in range(len(inits)) if i not in ok]
    vecs = [recs[i].h.flat for i in ok]
    names = [inits[i][0] for i in ok]
    if not vecs:
        raise RuntimeError("no initial density converged")
    D, labels = _cluster(vecs, grid.cell_volume, cluster_tol)
    k = max(labels) + 1
    reps = [np.mean([v for v, l in zip(vecs, labels) if l == c], axis=0) for c in range(k)]
    ext = _extremal(reps, grid.cell_volume, cluster_tol)
    supp = [r > 1e-9 * r.max() for r in (reps[i] for i in ext)]
    ov = np.array([[np.count_nonzero(a & b) / max(1, min(a.sum(), b.sum())) for b in supp] for a in supp])
    return ErgodicCount(len(ext), names, D, labels, ext, [reps[i] for i in ext], ov, excluded)


# ---------------------------------------------------------------------------
# the skew-product bound


@dataclass
class SkewBound:
    bound: float
    gamma_N: float
    volume: float
    Thetas: list
    jackknife: list
    horizon_witnessed: bool

    def to_dict(self) -> dict:
        return {"bound": self.bound, "gamma_N": self.gamma_N, "m_C": self.volume, "Thetas": self.Thetas,
                "jackknife_min": min(self.jackknife) if self.jackknife else self.bound,
                "jackknife_max": max(self.jackknife) if self.jackknife else self.bound,
                "j0_witnessed_all": self.horizon_witnessed}


def skew_bound(family: MapFamily, process: BaseProcess, anchors: Sequence[int], etas: dict, D_tilde: float,
               xi: float | None = None, horizon: int = 512) -> SkewBound:
    """``(m(C)/γ_N) · min_ω Θ(ω)^{N/α}`` over the sampled anchors."""
    vol = family.box.volume
    if vol < 1:
        raise ValueError(f"the skew-product count bound assumes m(C) >= 1 (hypothesis of the counting "
                         f"theorem); here m(C) = {vol}")
    N, a = family.dim, family.alpha
    gN = unit_ball_volume(N)
    res = [theta_bound(family, process, k, etas, D_tilde, xi, horizon) for k in anchors]
    Th = [r.Theta for r in res]
    vals = [t ** (N / a) for t in Th]
    bound = vol / gN * min(vals)
    jack = [vol / gN * min(vals[:i] + vals[i + 1:]) for i in range(len(vals))] if len(vals) > 1 else []
    return SkewBound(bound, gN, vol, Th, jack, all(r.witnessed for r in res))


# ---------------------------------------------------------------------------
# exact orbits and Birkhoff averages


def _snap(v: float) -> Fraction:
    """Nearest rational with a small denominator (``1/3`` rather than its binary rounding)."""
    q = Fraction(v).limit_denominator(1 << 20)
    return q if abs(float(q) - v) <= 1e-12 * max(1.0, abs(v)) else Fraction(v)


class _FixedPointBranch:
    """Branch ``x -> A x + b`` with integer diagonal ``A`` on ``P``-bit fixed point."""

    def __init__(self, branch, P: int, closed_upper):
        one = 1 << P
        self.lo = [math.ceil(_snap(v) * one) for v in branch.domain.lower]
        self.hi = [math.ceil(_snap(v) * one) for v in branch.domain.upper]
        self.closed = list(closed_upper)
        self.scale = [int(branch.matrix[k, k]) for k in range(branch.dim)]
        self.shift = [int(_snap(v) * one) for v in branch.offset]

    def contains(self, X) -> bool:
        for x, lo, hi, c in zip(X, self.lo, self.hi, self.closed):
            if x < lo or x > hi or (x == hi and not c):
                return False
        return True

    def forward(self, X):
        return [a * x + b for a, x, b in zip(self.scale, X, self.shift)]


def _exact_ok(tmap: SaussolMap, P: int) -> bool:
    """Integer diagonal slopes and offsets representable on ``P`` bits."""
    for b in tmap.branches:
        diag = np.diag(b.matrix)
        if not b.is_diagonal or np.any(diag != np.round(diag)):
            return False
        if any((_snap(v) * (1 << P)).denominator != 1 for v in b.offset):
            return False
    return True


def random_orbits(family: MapFamily, path: Sequence[str], x0: np.ndarray, n: int, seed: int = 0,
                  exact: bool | None = None) -> tuple[np.ndarray, bool]:
    """Points ``T^{(k)}_ω(x0)``, ``k = 0..n-1``, for each starting point; shape ``(m, n, dim)``.

    Affine families with integer diagonal slopes and dyadic offsets are iterated
    in exact ``P``-bit fixed point (``P ≈ 1.6 n + 64``), starting from ``x0``
    refined by random low-order bits, so the orbit is that of a genuinely
    random real and does not collapse the way binary floats do under
    ``x -> 2x mod 1``.  Other families fall back to floating point.
    """
    box = family.box
    P = int(1.6 * n) + 64
    maps = {s: family[s] for s in set(path)}
    if exact is None:
        exact = all(_exact_ok(m, P) for m in maps.values())
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    out = np.empty((len(x0), n, box.dim))
    if not exact:
        for j, x in enumerate(x0):
            cur = x.copy()
            for k in range(n):
                out[j, k] = cur
                m = maps[path[k]]
                i = int(m.branch_index(cur)[0])
                if i < 0:
                    raise RuntimeError(f"orbit left C at step {k}: {cur.tolist()}")
                cur = m.branches[i].forward(cur)
        return out, False
    closed = np.isclose
    fp = {s: [_FixedPointBranch(b, P, [bool(closed(h, H)) for h, H in zip(b.domain.upper, box.upper)])
              for b in m.branches] for s, m in maps.items()}
    rng = np.random.default_rng(seed)
    shift = P - 53
    one = 1 << P
    lo_int = [math.ceil(_snap(v) * one) for v in box.lower]
    hi_int = [math.ceil(_snap(v) * one) for v in box.upper]
    for j, x in enumerate(x0):
        X = []
        for k, v in enumerate(x):
            base = int(Fraction(float(v)) * one)
            noise = int.from_bytes(rng.bytes(shift // 8 + 1), "little") % (1 << max(shift - 8, 1))
            X.append(min(max(base + noise, lo_int[k]), hi_int[k] - 1))
        for k in range(n):
            out[j, k] = [(xx >> shift) / 2.0**53 for xx in X]
            for br in fp[path[k]]:
                if br.contains(X):
                    X = br.forward(X)
                    break
            else:
                raise RuntimeError(f"orbit left C at step {k}")
    return out, True


_BOX_RE = re.compile(r"^box:\[([^,\]]+),([^\]]+)\]x\[([^,\]]+),([^\]]+)\]$")


def make_observable(spec: str) -> Callable[[np.ndarray], np.ndarray]:
    """``"x"``, ``"y"``, ``"xy"``, or ``"box:[a,b]x[c,d]"`` (half-open indicator)."""
    s = spec.replace(" ", "")
    if s == "x":
        return lambda p: p[..., 0]
    if s == "y":
        return lambda p: p[..., 1]
    if s == "xy":
        return lambda p: p[..., 0] * p[..., 1]
    m = _BOX_RE.match(s)
    if m:
        a, b, c, d = map(float, m.groups())
        return lambda p: ((p[..., 0] >= a) & (p[..., 0] < b) & (p[..., 1] >= c) & (p[..., 1] < d)).astype(float)
    raise ValueError(f"unknown observable {spec!r}")


def space_average(obs: Callable, density: GridFunction) -> float:
    """``∫ φ dν`` with ``ν = density/∫density``, midpoint rule on the grid."""
    return float((obs(density.grid.centers) * density.values).sum() / density.values.sum())


@dataclass
class PhysicalReport:
    observables: list
    space_averages: list  # per reference measure
    averages: np.ndarray  # (x0, observable)
    deviations: np.ndarray  # (x0, observable) against the assigned reference
    assignment: list
    tolerance: float
    n: int
    exact_orbits: bool
    scaling: dict = field(default_factory=dict)

    @property
    def coverage(self) -> float:
        return float(np.mean([a >= 0 for a in self.assignment]))

    def coverage_by_reference(self) -> list[float]:
        k = len(self.space_averages)
        return [float(np.mean([a == i for a in self.assignment])) for i in range(k)]

    def to_dict(self) -> dict:
        return {"observables": self.observables, "space_averages": self.space_averages, "n": self.n,
                "tolerance": self.tolerance, "observed_basin_fraction": self.coverage,
                "basin_fraction_by_reference": self.coverage_by_reference(),
                "max_deviation": float(np.max(self.deviations)), "exact_orbits": self.exact_orbits,
                "scaling": self.scaling}

    def deviation_csv(self) -> str:
        rows = ["n,rms_deviation"] + [f"{n},{d!r}" for n, d in zip(self.scaling.get("n", []),
                                                                   self.scaling.get("rms", []))]
        return "\n".join(rows) + "\n"


def physical_check(family: MapFamily, process: BaseProcess, anchor: int, x0: np.ndarray, observables: list[str],
                   n: int, references: list[GridFunction], tol_const: float = 5.0, seed: int = 0,
                   scaling_ns: Sequence[int] | None = None) -> PhysicalReport:
    """Birkhoff averages along the realized path versus space averages of reference densities.

    A starting point is assigned to the first reference whose averages it
    matches within ``tol_const/√n`` for every observable (``-1`` if none).
    """
    path = forward_path(process, anchor, n)
    orbits, exact = random_orbits(family, path, x0, n, seed)
    obs = [make_observable(o) for o in observables]
    vals = np.stack([o(orbits) for o in obs], axis=-1)  # (m, n, k)
    avgs = vals.mean(axis=1)
    space = [[space_average(o, r) for o in obs] for r in references]
    tol = tol_const / math.sqrt(n)
    assign, devs = [], []
    for a in avgs:
        d_all = [np.abs(a - np.asarray(sp_)) for sp_ in space]
        hit = [i for i, d in enumerate(d_all) if np.all(d <= tol)]
        best = hit[0] if hit else int(np.argmin([d.max() for d in d_all]))
        assign.append(hit[0] if hit else -1)
        devs.append(d_all[best])
    scaling = {}
    if scaling_ns:
        rms = []
        for m in scaling_ns:
            a = vals[:, :m].mean(axis=1)
            ref = np.array([space[i if i >= 0 else 0] for i in assign])
            rms.append(float(np.sqrt(np.mean((a - ref) ** 2))))
        slope = float(np.polyfit(np.log(scaling_ns), np.log(rms), 1)[0])
        scaling = {"n": list(scaling_ns), "rms": rms, "slope": slope}
    return PhysicalReport(list(observables), space, avgs, np.array(devs), assign, tol, n, exact, scaling)
