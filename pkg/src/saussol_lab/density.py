"""Random invariant densities by Cesàro averages of pull-backs, and the θ/Θ bounds.

``h^k_ω = L_{σ^{-1}ω} ∘ … ∘ L_{σ^{-k}ω} h0`` (``h0 = 1`` by default) and
``H^s_ω = (1/s) Σ_{k=1}^s h^k_ω``.  Each ``h^k`` is a fresh composition along
the past window, except that

* for single-map families ``h^{k+1} = L h^k``, so iterates are built
  incrementally;
* once consecutive pull-backs agree to ``stable_tol`` for ``stable_run``
  steps, later ``h^k`` are taken equal to the last computed one and the
  Cesàro tail is summed in closed form (``k_stable`` is recorded).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .base_process import BaseProcess, forward_path, past_path
from .grid import GridFunction
from .maps import MapFamily
from .osc import OscParams, positivity_ball, v_alpha_norm
from .transfer import TransferBackend, apply


@dataclass
class PullbackSequence:
    """Computed ``h^1..h^K`` plus the stabilization point (``None`` if never stable).

    ``covered_at`` is the first ``k`` whose past window contains every symbol
    that moves the initial function (``None`` if some never shows up).
    """

    anchor: int
    init: GridFunction
    iterates: list[GridFunction]
    k_stable: int | None
    covered_at: int | None = 0

    def h(self, k: int) -> GridFunction:
        if k == 0:
            return self.init
        if k <= len(self.iterates):
            return self.iterates[k - 1]
        if self.k_stable is None:
            raise IndexError(f"h^{k} was not computed")
        return self.iterates[-1]


def pullback_density(family: MapFamily, process: BaseProcess, anchor: int, k: int, backend: TransferBackend,
                     init: GridFunction | None = None) -> GridFunction:
    """``h^k_ω`` by direct composition along the past window."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    f = GridFunction.constant(backend.grid, 1.0) if init is None else init
    for sym in reversed(past_path(process, anchor, k)):
        f = apply(backend, family[sym], f)
    return f


def pullback_sequence(family: MapFamily, process: BaseProcess, anchor: int, backend: TransferBackend, k_max: int,
                      init: GridFunction | None = None, stable_tol: float = 1e-14, stable_run: int = 3
                      ) -> PullbackSequence:
    h0 = GridFunction.constant(backend.grid, 1.0) if init is None else init
    single = len(family.symbols) == 1
    past = past_path(process, anchor, k_max)
    iterates: list[GridFunction] = []
    # a symbol with L h0 = h0 at the deepest position leaves h^k unchanged, so a run
    # only counts once every symbol that moves h0 has been appended during it
    movers = {sym for sym, w in zip(process.symbols, process.stationary)
              if w > 0 and apply(backend, family[sym], h0).l1_distance(h0) >= stable_tol}
    covered_at = None
    prev = h0
    run, seen = 0, set()
    for k in range(1, k_max + 1):
        if covered_at is None and movers <= set(past[:k]):
            covered_at = k
        if single:
            cur = apply(backend, family[past[0]], prev)
        else:
            cur = h0
            for sym in reversed(past[:k]):
                cur = apply(backend, family[sym], cur)
        iterates.append(cur)
        if cur.l1_distance(prev) < stable_tol:
            run += 1
            seen.add(past[k - 1])
        else:
            run, seen = 0, set()
        prev = cur
        if run >= stable_run and seen >= movers:
            return PullbackSequence(anchor, h0, iterates, k, covered_at)
    return PullbackSequence(anchor, h0, iterates, None, covered_at)


def cesaro(seq, s: int) -> GridFunction:
    """``H^s = (1/s) Σ_{k=1}^s h^k``; accepts a list of grid functions or a :class:`PullbackSequence`."""
    if s < 1:
        raise ValueError("s must be at least 1")
    if isinstance(seq, PullbackSequence):
        K = len(seq.iterates)
        m = min(s, K)
        total = np.sum([h.values for h in seq.iterates[:m]], axis=0)
        if s > K:
            if seq.k_stable is None:
                raise IndexError(f"only {K} pull-backs available")
            total = total + (s - K) * seq.iterates[-1].values
        return GridFunction(seq.init.grid, total / s)
    items = list(seq)
    if s > len(items):
        raise IndexError(f"only {len(items)} pull-backs available")
    return GridFunction(items[0].grid, np.sum([h.values for h in items[:s]], axis=0) / s)


@dataclass
class ThetaResult:
    theta: float
    Theta: float
    j0: int
    horizon: int
    witnessed: bool
    xi: float
    xi_hat: float
    D_tilde: float
    volume: float
    products: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"theta": self.theta, "Theta": self.Theta, "j0": self.j0, "horizon": self.horizon,
                "j0_witnessed": self.witnessed, "xi": self.xi, "xi_hat": self.xi_hat, "D_tilde": self.D_tilde,
                "m_C": self.volume}


def validate_xi(xi: float, xi_hat: float) -> None:
    if not (0.5 < xi < 1.0):
        raise ValueError(f"xi = {xi} must lie in (1/2, 1)")
    if not (xi_hat < xi):
        raise ValueError(f"xi = {xi} must exceed exp(E log eta) = {xi_hat:.6g}")


XI_DEFAULT = 0.75


def choose_xi(xi_hat: float, xi: float | None = None) -> float:
    """``xi`` if given (validated); else 0.75, raised to ``(1 + ξ̂)/2`` when 0.75 is not above ``ξ̂``."""
    if xi is None:
        xi = XI_DEFAULT if xi_hat < XI_DEFAULT else 0.5 * (1.0 + xi_hat)
    validate_xi(xi, xi_hat)
    return xi


def exp_log_eta(process: BaseProcess, etas: dict) -> float:
    from .base_process import log_average

    return math.exp(log_average(process, etas, 1).exact)


def theta_bound(family: MapFamily, process: BaseProcess, anchor: int, etas: dict, D_tilde: float,
                xi: float | None = None, horizon: int = 512) -> ThetaResult:
    """Scan ``η^{(j)} = η(σ^{-1}ω)…η(σ^{-j}ω)`` for ``j <= horizon``.

    ``j0`` is one past the last ``j`` with ``η^{(j)} >= ξ^j`` (1 if there is
    none).  It counts as witnessed when the last violation sits in the first
    half of the horizon; otherwise the returned Θ is only a lower estimate.
    """
    xi_hat = exp_log_eta(process, etas)
    xi = choose_xi(xi_hat, xi)
    past = past_path(process, anchor, horizon)
    logs = np.cumsum([math.log(etas[s]) for s in past])
    j = np.arange(1, horizon + 1)
    excess = logs - j * math.log(xi)
    bad = np.flatnonzero(excess >= 0)
    last = int(bad[-1]) + 1 if len(bad) else 0
    j0 = last + 1
    ratios = np.exp(excess[:j0])
    theta = float(max(1.0, ratios.max()))
    vol = family.box.volume
    Theta = D_tilde * vol * (1 + theta / (1 - xi))
    return ThetaResult(theta, Theta, j0, horizon, last <= horizon // 2, xi, xi_hat, D_tilde, vol,
                       ratios.tolist())


@dataclass
class DensityRecord:
    anchor: int
    seed: int
    h: GridFunction
    s: int
    increment: float
    converged: bool
    k_stable: int | None
    l1_trace: list
    v_alpha_trace: list
    increments: list
    theta: ThetaResult | None = None
    positivity: dict | None = None
    residual: float | None = None

    @property
    def max_v_alpha(self) -> float:
        return max(self.v_alpha_trace) if self.v_alpha_trace else float("nan")

    @property
    def bound_holds(self) -> bool | None:
        if self.theta is None:
            return None
        return self.max_v_alpha <= self.theta.Theta

    def to_dict(self) -> dict:
        d = {"anchor": self.anchor, "seed": self.seed, "s": self.s, "increment": self.increment,
             "converged": self.converged, "k_stable": self.k_stable, "mass": self.h.integral(),
             "max_v_alpha": self.max_v_alpha, "increments": self.increments, "residual": self.residual,
             "positivity": self.positivity}
        if self.theta is not None:
            d["theta"] = self.theta.to_dict()
            d["bound_holds"] = self.bound_holds
        return d

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "l1", "v_alpha", "theta_bound"])
        Th = self.theta.Theta if self.theta else ""
        for k, (a, b) in enumerate(zip(self.l1_trace, self.v_alpha_trace)):
            w.writerow([k, repr(a), repr(b), repr(Th) if Th != "" else ""])
        return buf.getvalue()


def invariant_density(family: MapFamily, process: BaseProcess, anchor: int, backend: TransferBackend,
                      params: OscParams, s_max: int = 1 << 24, tol_l1: float = 1e-6, k_max: int = 2000,
                      init: GridFunction | None = None) -> DensityRecord:
    """Cesàro limit ``h_ω``, stopping when ``||H^s - H^{⌊s/2⌋}||_1 < tol_l1`` over ``s = 2, 4, 8, …``.

    ``H^0`` is taken to be the initial function.  A small increment only counts
    once the past window holds every symbol that moves the initial function.
    Non-convergence within ``s_max`` is reported through ``converged=False``.
    """
    seq = pullback_sequence(family, process, anchor, backend, min(k_max, s_max), init)
    K = len(seq.iterates)
    l1 = [seq.init.l1()] + [h.l1() for h in seq.iterates]
    va = [v_alpha_norm(seq.init, params)] + [v_alpha_norm(h, params) for h in seq.iterates]
    prev = seq.init
    s = 1
    increments = []
    H = cesaro(seq, 1)
    inc = H.l1_distance(prev)
    increments.append(inc)
    covered = seq.covered_at
    converged = inc < tol_l1 and covered is not None and covered <= s
    while not converged:
        s2 = 2 * s
        if s2 > s_max or (seq.k_stable is None and s2 > K):
            break
        H2 = cesaro(seq, s2)
        inc = H2.l1_distance(H)
        increments.append(inc)
        H, s = H2, s2
        converged = inc < tol_l1 and covered is not None and covered <= s
    return DensityRecord(anchor, process.seed, H, s, inc, converged, seq.k_stable, l1, va, increments)


def invariance_residual(family: MapFamily, process: BaseProcess, anchor: int, backend: TransferBackend,
                        h_omega: GridFunction, h_shift: GridFunction) -> float:
    """``||L_ω h_ω - h_{σω}||_1``."""
    sym = forward_path(process, anchor, 1)[0]
    return apply(backend, family[sym], h_omega).l1_distance(h_shift)


def positivity_summary(h: GridFunction, params: OscParams) -> dict:
    ball = positivity_ball(h, params)
    return {"radius": ball.radius, "center": list(ball.center), "inf": ball.inf_value, "found": ball.found}
