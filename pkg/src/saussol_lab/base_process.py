"""Two-sided stationary symbol processes standing in for the ergodic base σ.

Paths are never stored.  The uniform variate attached to absolute time ``t``
is read from a Philox counter-mode generator keyed on the master seed, so any
window ``[a, b]`` (including negative times) is a pure function of
``(seed, a, b)`` and overlapping windows agree.  σ acts as the index shift:
the symbol at time ``t`` relative to anchor ``k`` is the symbol at absolute
time ``k + t``.

Markov chains are realized with the grand (inverse-CDF) coupling and
coupling-from-the-past, which yields an exactly stationary two-sided chain
whose value at any time is determined by the uniforms up to that time.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Mapping, NamedTuple, Sequence

import numpy as np

_COUNTER_OFFSET = 1 << 62
_TOL = 1e-12


@dataclass(frozen=True)
class BaseProcess:
    kind: str
    symbols: tuple[str, ...]
    probabilities: tuple[float, ...] | None
    transition: tuple[tuple[float, ...], ...] | None
    stationary: tuple[float, ...]
    seed: int

    @property
    def n_symbols(self) -> int:
        return len(self.symbols)

    def with_seed(self, seed: int) -> BaseProcess:
        return BaseProcess(self.kind, self.symbols, self.probabilities, self.transition, self.stationary,
                           int(seed) % (1 << 64))

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "symbols": list(self.symbols), "seed": self.seed}
        if self.kind == "iid":
            d["probabilities"] = list(self.probabilities)
        else:
            d["transition"] = [list(r) for r in self.transition]
        return d


@dataclass(frozen=True)
class SymbolPath:
    anchor: int
    start: int
    symbols: tuple[str, ...]
    indices: np.ndarray

    @property
    def stop(self) -> int:
        return self.start + len(self.symbols) - 1

    def at(self, t: int) -> str:
        return self.symbols[t - self.start]

    def __len__(self):
        return len(self.symbols)


class LogAverage(NamedTuple):
    empirical: float
    exact: float | None
    n: int


def _irreducible(P: np.ndarray) -> bool:
    n = len(P)
    for start in range(n):
        seen = {start}
        todo = [start]
        while todo:
            i = todo.pop()
            for j in np.flatnonzero(P[i] > 0):
                if j not in seen:
                    seen.add(int(j))
                    todo.append(int(j))
        if len(seen) != n:
            return False
    return True


def _update_maps(P: np.ndarray) -> list[np.ndarray]:
    """Distinct deterministic maps of the inverse-CDF coupling ``x -> F_x^{-1}(u)``."""
    cdf = np.cumsum(P, axis=1)
    cuts = np.unique(np.concatenate([[0.0], np.clip(cdf.ravel(), 0, 1)]))
    maps = []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        if hi - lo <= 0:
            continue
        u = 0.5 * (lo + hi)
        maps.append(np.array([_inv_cdf(cdf[i], u) for i in range(len(P))]))
    return maps


def _inv_cdf(cdf_row: np.ndarray, u: float) -> int:
    return int(min(np.searchsorted(cdf_row, u, side="right"), len(cdf_row) - 1))


def _coupling_coalesces(P: np.ndarray) -> bool:
    """Whether compositions of coupling maps can send every state to one state."""
    maps = _update_maps(P)
    start = frozenset(range(len(P)))
    seen = {start}
    queue = deque([start])
    while queue:
        cur = queue.popleft()
        if len(cur) == 1:
            return True
        for m in maps:
            nxt = frozenset(int(m[i]) for i in cur)
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return False


def _stationary_vector(P: np.ndarray) -> np.ndarray:
    n = len(P)
    A = np.vstack([P.T - np.eye(n), np.ones(n)])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def build_process(spec: Mapping) -> BaseProcess:
    """Validate a process description and return a :class:`BaseProcess`.

    ``spec`` keys: ``kind`` (``"iid"`` or ``"markov"``), ``symbols``,
    ``probabilities`` (IID) or ``transition`` (Markov rows), ``seed``.
    """
    kind = str(spec.get("kind", "iid")).lower()
    symbols = tuple(str(s) for s in spec.get("symbols", ()))
    if not symbols:
        raise ValueError("empty symbol set")
    if len(set(symbols)) != len(symbols):
        raise ValueError("duplicate symbols")
    seed = int(spec.get("seed", 0)) % (1 << 64)
    if kind == "iid":
        p = np.asarray(spec.get("probabilities", [1.0 / len(symbols)] * len(symbols)), dtype=float)
        if p.shape != (len(symbols),):
            raise ValueError("probability vector length does not match the symbol set")
        if np.any(p < 0) or abs(p.sum() - 1.0) > _TOL:
            raise ValueError(f"probability vector is not stochastic (sum = {p.sum():.12g})")
        return BaseProcess("iid", symbols, tuple(p.tolist()), None, tuple(p.tolist()), seed)
    if kind == "markov":
        P = np.asarray(spec.get("transition"), dtype=float)
        if P.shape != (len(symbols), len(symbols)):
            raise ValueError("transition matrix shape does not match the symbol set")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > _TOL):
            raise ValueError("transition matrix rows are not stochastic")
        if not _irreducible(P):
            raise ValueError("Markov chain is reducible")
        if not _coupling_coalesces(P):
            raise ValueError("Markov chain coupling never coalesces (periodic or permutation-like chain)")
        pi = _stationary_vector(P)
        return BaseProcess("markov", symbols, None, tuple(map(tuple, P.tolist())), tuple(pi.tolist()), seed)
    raise ValueError(f"unknown process kind {kind!r}")


def _uniforms(seed: int, start: int, stop: int) -> np.ndarray:
    """Uniforms for absolute times ``start..stop`` inclusive (counter mode)."""
    if stop < start:
        return np.empty(0)
    q0, q1 = start // 4, stop // 4
    gen = np.random.Philox(key=seed, counter=q0 + _COUNTER_OFFSET)
    raw = gen.random_raw(4 * (q1 - q0 + 1))
    lo = start - 4 * q0
    raw = raw[lo:lo + stop - start + 1]
    return (raw >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


def _cftp_state(P_cdf: np.ndarray, seed: int, t: int) -> int:
    n = len(P_cdf)
    back = 1
    while True:
        u = _uniforms(seed, t - back, t - 1)
        states = np.arange(n)
        for v in u:
            states = np.array([_inv_cdf(P_cdf[s], v) for s in states])
        if np.all(states == states[0]):
            return int(states[0])
        back *= 2
        if back > 1 << 20:
            raise RuntimeError("coupling from the past did not coalesce")


def _absolute_indices(process: BaseProcess, start: int, stop: int) -> np.ndarray:
    u = _uniforms(process.seed, start, stop)
    if process.kind == "iid":
        cdf = np.cumsum(process.probabilities)
        idx = np.searchsorted(cdf, u, side="right")
        return np.minimum(idx, process.n_symbols - 1)
    P_cdf = np.cumsum(np.asarray(process.transition), axis=1)
    out = np.empty(stop - start + 1, dtype=int)
    out[0] = _cftp_state(P_cdf, process.seed, start)
    for k in range(1, len(out)):
        out[k] = _inv_cdf(P_cdf[out[k - 1]], u[k - 1])
    return out


def window(process: BaseProcess, anchor: int, start: int, stop: int) -> SymbolPath:
    """Symbols at times ``start..stop`` (inclusive) relative to ``anchor``."""
    if start > stop:
        raise ValueError("window start must not exceed its end")
    idx = _absolute_indices(process, anchor + start, anchor + stop)
    return SymbolPath(anchor, start, tuple(process.symbols[i] for i in idx), idx)


def forward_path(process: BaseProcess, anchor: int, length: int) -> list[str]:
    """``ω, σω, ..., σ^{length-1}ω`` as symbols (empty for length 0)."""
    if length <= 0:
        return []
    return list(window(process, anchor, 0, length - 1).symbols)


def past_path(process: BaseProcess, anchor: int, length: int) -> list[str]:
    """``σ^{-1}ω, σ^{-2}ω, ..., σ^{-length}ω`` as symbols."""
    if length <= 0:
        return []
    return list(reversed(window(process, anchor, -length, -1).symbols))


def log_average(process: BaseProcess, g: Mapping[str, float] | Sequence[float], n: int,
                anchor: int = 0) -> LogAverage:
    """Path average of ``log g(ω_t)`` over ``n`` steps, with the exact stationary expectation."""
    if n < 1:
        raise ValueError("sample length must be at least 1")
    vals = np.array([g[s] for s in process.symbols] if isinstance(g, Mapping) else g, dtype=float)
    if vals.shape != (process.n_symbols,):
        raise ValueError("one value per symbol is required")
    if np.any(vals <= 0):
        raise ValueError("log_average needs positive values")
    logs = np.log(vals)
    idx = _absolute_indices(process, anchor, anchor + n - 1)
    exact = float(np.dot(process.stationary, logs))
    return LogAverage(float(logs[idx].mean()), exact, n)
