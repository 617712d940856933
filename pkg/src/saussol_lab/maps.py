"""Piecewise expanding maps on a box, their branch inverses, and condition checks.

A :class:`SaussolMap` is a finite list of :class:`BranchMap` objects.  Each
branch carries its open domain ``U_i`` (stored as a closed box, boundaries are
Lebesgue-null), an enlarged box ``V_i`` on which the branch is injective, a
forward map and its inverse.  Affine branches (``x -> A x + b``) are handled
exactly; generic differentiable branches are supported through callables and
sampled estimates.
"""

from __future__ import annotations

import hashlib
import json
import math
from fractions import Fraction
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping

import numpy as np

from .geometry import Box, unit_ball_volume

Array = np.ndarray

SAFETY_FACTOR = 1.05


class BranchMap:
    """One injective branch ``T_i : V_i -> R^N`` with ``clos(U_i) ⊂ V_i``."""

    def __init__(
        self,
        domain: Box,
        extension: Box,
        *,
        matrix=None,
        offset=None,
        forward: Callable[[Array], Array] | None = None,
        inverse: Callable[[Array], Array] | None = None,
        inverse_jacobian: Callable[[Array], Array] | None = None,
    ):
        self.domain = domain
        self.extension = extension
        if domain.dim != extension.dim:
            raise ValueError("domain and extension dimensions differ")
        if extension.margin_inside(domain) <= 0.0:
            raise ValueError("clos(U_i) must lie strictly inside V_i")
        self.matrix = None if matrix is None else np.array(matrix, dtype=float).reshape(domain.dim, domain.dim)
        self.offset = None if offset is None else np.array(offset, dtype=float).reshape(domain.dim)
        if self.matrix is not None:
            if self.offset is None:
                self.offset = np.zeros(domain.dim)
            det = np.linalg.det(self.matrix)
            if abs(det) < 1e-300:
                raise ValueError("singular branch matrix")
            self._inv_matrix = np.linalg.inv(self.matrix)
            self._inv_det = 1.0 / abs(det)
        else:
            if forward is None or inverse is None:
                raise ValueError("generic branches need forward and inverse callables")
        self._forward = forward
        self._inverse = inverse
        self._inverse_jacobian = inverse_jacobian
        if not self.is_affine:
            self._check_generic()

    @classmethod
    def affine(cls, domain: Box, matrix, offset, extension: Box | None = None, margin: float = 0.05):
        if extension is None:
            extension = domain.inflate(margin)
        return cls(domain, extension, matrix=matrix, offset=offset)

    @classmethod
    def generic(cls, domain: Box, forward, inverse, inverse_jacobian=None, extension: Box | None = None,
                margin: float = 0.05):
        if extension is None:
            extension = domain.inflate(margin)
        return cls(domain, extension, forward=forward, inverse=inverse, inverse_jacobian=inverse_jacobian)

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def is_affine(self) -> bool:
        return self.matrix is not None

    @property
    def is_diagonal(self) -> bool:
        return self.is_affine and np.count_nonzero(self.matrix - np.diag(np.diag(self.matrix))) == 0

    def forward(self, x) -> Array:
        x = np.asarray(x, dtype=float)
        if self.is_affine:
            return x @ self.matrix.T + self.offset
        return np.asarray(self._forward(x), dtype=float)

    def inverse(self, y) -> Array:
        y = np.asarray(y, dtype=float)
        if self.is_affine:
            return (y - self.offset) @ self._inv_matrix.T
        return np.asarray(self._inverse(y), dtype=float)

    def inverse_jacobian_det(self, y) -> Array:
        """``|det D T_i^{-1}(y)|``, i.e. the weight ``1/|det DT_i|`` at the preimage."""
        y = np.asarray(y, dtype=float)
        if self.is_affine:
            return np.full(y.shape[:-1], self._inv_det)
        if self._inverse_jacobian is not None:
            return np.abs(np.asarray(self._inverse_jacobian(y), dtype=float))
        h = 1e-6
        cols = []
        for k in range(self.dim):
            e = np.zeros(self.dim)
            e[k] = h
            cols.append((self.inverse(y + e) - self.inverse(y - e)) / (2 * h))
        jac = np.stack(cols, axis=-1)
        return np.abs(np.linalg.det(jac))

    def image_contains(self, y, tol: float = 0.0) -> Array:
        """Whether ``y`` lies in ``T_i(V_i)`` (the domain of the inverse branch)."""
        y = np.asarray(y, dtype=float)
        back = self.inverse(y)
        inside = self.extension.contains(back, tol=tol)
        if self.is_affine:
            return inside
        return inside & np.all(np.abs(self.forward(back) - y) <= 1e-9 + tol, axis=-1)

    def spec(self) -> dict:
        d = {"domain": self.domain.to_dict(), "extension": self.extension.to_dict()}
        if self.is_affine:
            d["matrix"] = self.matrix.tolist()
            d["offset"] = self.offset.tolist()
        else:
            d["callable"] = f"{getattr(self._forward, '__qualname__', 'fn')}@{id(self._forward):x}"
        return d

    def _check_generic(self, count: int = 256):
        rng = np.random.default_rng(0)
        pts = self.extension.sample(rng, count)
        img = self.forward(pts)
        back = self.inverse(img)
        if np.max(np.abs(back - pts)) > 1e-10:
            raise ValueError("inverse branch does not invert the forward map on V_i")
        d = np.sqrt(((img[:, None, :] - img[None, :, :]) ** 2).sum(-1))
        np.fill_diagonal(d, np.inf)
        if np.min(d) <= 0.0:
            raise ValueError("forward branch is not injective on V_i (sampled collision)")


class SaussolMap:
    """A piecewise expanding map ``T_ω`` on the box ``C``."""

    def __init__(self, label: str, branches, box: Box):
        self.label = label
        self.branches = tuple(branches)
        self.box = box
        if not self.branches:
            raise ValueError("a map needs at least one branch")
        for b in self.branches:
            if b.dim != box.dim:
                raise ValueError("branch dimension does not match the ambient box")
            if not box.contains_box(b.domain):
                raise ValueError(f"branch domain {b.domain} is not inside C")
        for i, a in enumerate(self.branches):
            for b in self.branches[i + 1:]:
                if a.domain.intersection_volume(b.domain) > 1e-14:
                    raise ValueError("branch domains overlap: disjointness violated")
        self._check_images()

    def _check_images(self):
        for b in self.branches:
            if b.is_affine:
                pts = b.forward(b.domain.corners())
            else:
                pts = b.forward(_box_boundary_samples(b.domain, 16))
            if not np.all(self.box.contains(pts, tol=1e-9)):
                raise ValueError(f"map {self.label!r} sends a branch outside C")

    @property
    def dim(self) -> int:
        return self.box.dim

    @property
    def is_affine(self) -> bool:
        return all(b.is_affine for b in self.branches)

    @cached_property
    def key(self) -> str:
        payload = {"label": self.label, "box": self.box.to_dict(), "branches": [b.spec() for b in self.branches]}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()

    def __hash__(self):
        return hash(self.key)

    def __eq__(self, other):
        return isinstance(other, SaussolMap) and other.key == self.key

    def __repr__(self):
        return f"SaussolMap({self.label!r}, {len(self.branches)} branches)"

    @cached_property
    def s(self) -> float:
        return contraction_coefficient(self)

    @cached_property
    def boundary_multiplicity(self) -> int:
        return boundary_multiplicity(self)

    def branch_index(self, x) -> Array:
        """First branch whose closed domain contains each point, -1 if none."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        idx = np.full(x.shape[0], -1, dtype=int)
        for i, b in enumerate(self.branches):
            free = idx < 0
            if not free.any():
                break
            hit = b.domain.contains(x[free])
            sel = np.flatnonzero(free)[hit]
            idx[sel] = i
        return idx


def _box_boundary_samples(box: Box, per_edge: int) -> Array:
    pts = [box.corners()]
    for axis in range(box.dim):
        for face_val in (box.lower[axis], box.upper[axis]):
            grids = [np.linspace(box.lower[a], box.upper[a], per_edge) if a != axis else np.array([face_val])
                     for a in range(box.dim)]
            mesh = np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1).reshape(-1, box.dim)
            pts.append(mesh)
    return np.concatenate(pts)


def apply(tmap: SaussolMap, x) -> Array:
    """Evaluate ``T_ω(x)`` using the first branch whose closed domain contains ``x``."""
    x = np.asarray(x, dtype=float)
    pts = np.atleast_2d(x)
    idx = tmap.branch_index(pts)
    if np.any(idx < 0):
        bad = pts[idx < 0][0]
        raise ValueError(f"point {bad.tolist()} lies outside every branch domain")
    out = np.empty_like(pts)
    for i, b in enumerate(tmap.branches):
        sel = idx == i
        if sel.any():
            out[sel] = b.forward(pts[sel])
    return out.reshape(x.shape)


def contraction_coefficient(tmap: SaussolMap, eps0: float = 0.05, samples: int = 2000, seed: int = 0) -> float:
    """Lipschitz bound ``s`` of the inverse branches.

    Affine branches give the exact value ``max_i ||A_i^{-1}||_2``.  Generic
    branches get a sampled estimate over nearby pairs in ``T(V_i)``, inflated by
    a 1.05 safety factor; it is an estimate, not a certified bound.
    """
    vals = []
    rng = np.random.default_rng(seed)
    for b in tmap.branches:
        if b.is_affine:
            vals.append(float(np.linalg.norm(b._inv_matrix, 2)))
            continue
        x = b.extension.sample(rng, samples)
        u = b.forward(x)
        step = rng.normal(size=u.shape)
        step *= (eps0 * rng.random((samples, 1))) / np.linalg.norm(step, axis=1, keepdims=True)
        v = u + step
        ok = b.image_contains(v)
        ratio = np.linalg.norm(b.inverse(u[ok]) - b.inverse(v[ok]), axis=1) / np.linalg.norm(step[ok], axis=1)
        vals.append(SAFETY_FACTOR * float(ratio.max()))
    return max(vals)


def hoelder_constant(tmap: SaussolMap, alpha: float, eps0: float = 0.05, resolution: int = 16,
                     levels: int = 6) -> float:
    """Smallest sampled ``c`` with ``|J(x) - J(y)| <= c |J(z)| ε^α`` for ``x, y ∈ B_ε(z)``.

    ``J = det D T_i^{-1}``.  Piecewise-affine maps return exactly 0.  The
    sampling uses a regular grid of centres ``z`` (``resolution`` per axis),
    antipodal pairs ``z ± 0.999 ε u`` over axis and diagonal directions ``u``,
    and ``levels`` dyadic radii below ``eps0``.
    """
    if not (0.0 < alpha <= 1.0):
        raise ValueError("alpha must lie in (0, 1]")
    if tmap.is_affine:
        return 0.0
    dim = tmap.dim
    dirs = [np.eye(dim)[k] for k in range(dim)]
    if dim >= 2:
        dirs += [np.array([1.0, 1.0] + [0.0] * (dim - 2)) / math.sqrt(2),
                 np.array([1.0, -1.0] + [0.0] * (dim - 2)) / math.sqrt(2)]
    best = 0.0
    for b in tmap.branches:
        axes = [np.linspace(lo, hi, resolution) for lo, hi in zip(b.domain.lower, b.domain.upper)]
        z = b.forward(np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, dim))
        jz = b.inverse_jacobian_det(z)
        for lev in range(levels):
            eps = eps0 * 0.5**lev
            for u in dirs:
                x, y = z + 0.999 * eps * u, z - 0.999 * eps * u
                ok = b.image_contains(x) & b.image_contains(y)
                if not ok.any():
                    continue
                diff = np.abs(b.inverse_jacobian_det(x[ok]) - b.inverse_jacobian_det(y[ok]))
                best = max(best, float(np.max(diff / (jz[ok] * eps**alpha))))
    return best


@dataclass
class CheckResult:
    """Outcome of a sampled condition check; failures are results, not errors."""

    passed: bool
    margin: float
    witnesses: list = field(default_factory=list)


def _affine_image_margin(b: BranchMap, pts: Array) -> Array:
    """Distance from image points ``pts`` (inside ``T(V)``) to the boundary of ``T(V)``.

    ``T(V) = {y : lo <= A^{-1}(y - b) <= hi}`` is a parallelotope; each facet
    half-space has normal ``±A^{-T} e_j``.
    """
    pre = b.inverse(pts)
    rows = b._inv_matrix
    norms = np.linalg.norm(rows, axis=1)
    lo_gap = (pre - b.extension.lo) / norms
    hi_gap = (b.extension.hi - pre) / norms
    return np.minimum(lo_gap.min(axis=1), hi_gap.min(axis=1))


def check_pe2(tmap: SaussolMap, eps0: float, directions: int = 64) -> CheckResult:
    """Check ``T_i(V_i) ⊃ B_{ε0}(T_i(U_i))`` for every branch.

    Affine branches are exact: the condition holds iff every vertex of the
    parallelotope ``T_i(U_i)`` is at distance at least ``ε0`` from every facet of
    ``T_i(V_i)``.  Generic branches are probed on sampled boundary points of
    ``T_i(U_i)`` along ``directions`` unit vectors.
    """
    margin = math.inf
    witnesses = []
    for i, b in enumerate(tmap.branches):
        if b.is_affine:
            pts = b.forward(b.domain.corners())
            gaps = _affine_image_margin(b, pts)
        else:
            pts = b.forward(_box_boundary_samples(b.domain, 24))
            rng = np.random.default_rng(i)
            u = rng.normal(size=(directions, b.dim))
            u /= np.linalg.norm(u, axis=1, keepdims=True)
            gaps = np.empty(len(pts))
            for k, y in enumerate(pts):
                ok = b.image_contains(y + eps0 * u)
                gaps[k] = eps0 if ok.all() else 0.0
        margin = min(margin, float(gaps.min()))
        for y, g in zip(pts, gaps):
            if g < eps0:
                witnesses.append({"branch": i, "point": y.tolist(), "margin": float(g)})
    return CheckResult(passed=not witnesses, margin=margin, witnesses=witnesses)


def _exact_volume(box: Box) -> Fraction:
    v = Fraction(1)
    for lo, hi in zip(box.lower, box.upper):
        v *= Fraction(hi) - Fraction(lo)
    return v


def check_pe4(tmap: SaussolMap) -> float:
    """Measure defect ``m(C) - Σ m(U_i)``, exact in rational arithmetic on the box coordinates."""
    return float(_exact_volume(tmap.box) - sum(_exact_volume(b.domain) for b in tmap.branches))


def boundary_multiplicity(tmap: SaussolMap, random_samples: int = 256, seed: int = 0) -> int:
    """``Y``: the largest number of boundary facets of the ``U_i`` through a single point.

    The supremum is attained on the partition skeleton; candidates are all box
    vertices and edge midpoints plus a few random points.
    """
    cands = [b.domain.corners() for b in tmap.branches]
    cands += [b.domain.edge_midpoints() for b in tmap.branches]
    cands.append(tmap.box.sample(np.random.default_rng(seed), random_samples))
    pts = np.concatenate(cands)
    counts = sum(b.domain.facet_count_at(pts) for b in tmap.branches)
    return int(np.max(counts))


def lambda_example(tmap: SaussolMap, alpha: float, S: float, s: float | None = None, Y: int | None = None) -> float:
    """``Λ = s^α + 4 Y (γ_{N-1}/γ_N) (s/(S - s)) S^α`` for polygonal partitions."""
    s = tmap.s if s is None else s
    Y = tmap.boundary_multiplicity if Y is None else Y
    if S <= s:
        raise ValueError(f"S = {S} must exceed s = {s}")
    N = tmap.dim
    ratio = unit_ball_volume(N - 1) / unit_ball_volume(N)
    return s**alpha + 4.0 * Y * ratio * (s / (S - s)) * S**alpha


class MapFamily:
    """Finite symbol set with one map per symbol plus the global parameters α, ε0, S."""

    def __init__(self, maps: Mapping[str, SaussolMap], alpha: float, eps0: float, S: float, name: str = "family"):
        if not maps:
            raise ValueError("empty map family")
        if not (0.0 < alpha <= 1.0):
            raise ValueError("alpha must lie in (0, 1]")
        if eps0 <= 0 or S <= 0:
            raise ValueError("eps0 and S must be positive")
        self.maps = dict(maps)
        self.alpha = float(alpha)
        self.eps0 = float(eps0)
        self.S = float(S)
        self.name = name
        boxes = {m.box for m in self.maps.values()}
        if len(boxes) != 1:
            raise ValueError("all maps in a family must share the ambient box C")
        for sym, m in self.maps.items():
            if not (0.0 < m.s < self.S):
                raise ValueError(f"map {sym!r}: s = {m.s} violates 0 < s < S = {self.S}")

    @property
    def symbols(self) -> list[str]:
        return list(self.maps)

    @property
    def box(self) -> Box:
        return next(iter(self.maps.values())).box

    @property
    def dim(self) -> int:
        return self.box.dim

    @property
    def eps_tilde(self) -> float:
        return self.S * self.eps0

    def __getitem__(self, symbol: str) -> SaussolMap:
        try:
            return self.maps[symbol]
        except KeyError:
            raise KeyError(f"unknown symbol {symbol!r}") from None

    def lambdas(self) -> dict[str, float]:
        return {k: lambda_example(m, self.alpha, self.S) for k, m in self.maps.items()}


@dataclass
class PE5Result:
    """``passed`` holds when ``E log ζ < 0``, either directly or through ``Λ >= ζ``."""

    passed: bool
    exact: float | None
    empirical: float
    lambdas: dict
    zeta_below_lambda: dict | None = None
    zeta_exact: float | None = None
    route: str = "lambda"

    def to_dict(self) -> dict:
        return {"passed": self.passed, "route": self.route, "E_log_Lambda_exact": self.exact,
                "E_log_Lambda_empirical": self.empirical, "Lambda": self.lambdas,
                "E_log_zeta_exact": self.zeta_exact, "zeta_below_Lambda": self.zeta_below_lambda}


def check_pe5(family: MapFamily, process, n: int = 10_000, zetas: Mapping[str, float] | None = None,
              rtol: float = 1e-9) -> PE5Result:
    """Average of ``log Λ`` over the base process, with an optional direct ``ζ`` route.

    ``Λ`` bounds ``ζ`` from above, so ``E log Λ < 0`` suffices.  When directly
    computed ``ζ`` values are supplied, each is compared with its ``Λ`` and
    ``E log ζ < 0`` is accepted as well.
    """
    from .base_process import log_average

    lambdas = family.lambdas()
    avg = log_average(process, lambdas, n)
    lam_value = avg.exact if avg.exact is not None else avg.empirical
    cross = zeta_value = None
    route = "lambda" if lam_value < 0 else "none"
    if zetas is not None:
        cross = {k: bool(zetas[k] <= lambdas[k] * (1 + rtol)) for k in zetas}
        zavg = log_average(process, zetas, n)
        zeta_value = zavg.exact if zavg.exact is not None else zavg.empirical
        if route == "none" and zeta_value < 0:
            route = "zeta"
    return PE5Result(passed=route != "none", exact=avg.exact, empirical=avg.empirical, lambdas=lambdas,
                     zeta_below_lambda=cross, zeta_exact=zeta_value, route=route)


def branch_checks(tmap: SaussolMap, samples: int = 1000, seed: int = 0) -> dict:
    """Invertibility, round-trip error, closure margin and pairwise domain overlap of the branches."""
    rng = np.random.default_rng(seed)
    worst_rt = 0.0
    min_det = math.inf
    min_margin = math.inf
    for b in tmap.branches:
        x = b.extension.sample(rng, samples)
        worst_rt = max(worst_rt, float(np.abs(b.inverse(b.forward(x)) - x).max()))
        min_det = min(min_det, float(np.min(np.abs(1.0 / b.inverse_jacobian_det(b.forward(x))))))
        min_margin = min(min_margin, b.extension.margin_inside(b.domain))
    overlap = 0.0
    bs = tmap.branches
    for i in range(len(bs)):
        for j in range(i + 1, len(bs)):
            overlap += bs[i].domain.intersection_volume(bs[j].domain)
    return {"round_trip_error": worst_rt, "min_abs_det": min_det, "closure_margin": min_margin,
            "overlap_volume": overlap}


def pe_report(family: MapFamily, process, zetas: Mapping[str, float] | None = None) -> dict:
    """PE1-PE5 verdicts for every map of the family plus ``Λ``."""
    maps = {}
    ok = True
    for sym, m in family.maps.items():
        pe2 = check_pe2(m, family.eps0)
        bc = branch_checks(m)
        pe1 = 0.0 < m.s < family.S
        pe3 = bc["min_abs_det"] > 0 and bc["round_trip_error"] < 1e-10 and bc["closure_margin"] > 0
        defect = check_pe4(m)
        pe4 = abs(defect) < 1e-12 and bc["overlap_volume"] < 1e-12
        maps[sym] = {"label": m.label, "s": m.s, "Y": m.boundary_multiplicity, "Lambda": family.lambdas()[sym],
                     "PE1": pe1, "PE2": pe2.passed, "PE2_margin": pe2.margin, "PE2_witnesses": pe2.witnesses[:5],
                     "PE3": pe3, "PE4": pe4, "PE4_defect": defect, **bc}
        ok &= pe1 and pe2.passed and pe3 and pe4
    pe5 = check_pe5(family, process, zetas=zetas)
    return {"family": family.name, "alpha": family.alpha, "eps0": family.eps0, "S": family.S, "maps": maps,
            "PE5": pe5.to_dict(), "passed": bool(ok and pe5.passed)}
