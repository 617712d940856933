"""Transfer operators on grids: branch-sum pull-back and Ulam matrices, and their cocycles.

Both backends are sparse matrices acting on the flattened cell values:

* ``branch-sum`` evaluates ``(Lf)(y) = Σ_i f(T_i^{-1} y) |det DT_i^{-1}(y)|`` at
  every cell centre ``y`` with ``T_i^{-1} y ∈ U_i``, reading ``f`` in the cell
  that contains the preimage;
* ``ulam`` uses ``P[j, i] = m(cell_i ∩ T^{-1} cell_j) / m(cell_i)``, computed
  exactly for affine branches or by seeded Monte Carlo.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .grid import Grid, GridFunction
from .maps import MapFamily, SaussolMap
from .osc import OscParams, v_alpha_norm

MODES = ("branch-sum", "ulam")


# ---------------------------------------------------------------------------
# branch sum


def _in_domain(box, x, C) -> np.ndarray:
    """Half-open membership ``[lo, hi)``, closing faces that lie on the upper boundary of ``C``."""
    closed_upper = np.isclose(box.hi, C.hi)
    return box.contains_half_open(x, closed_upper)


def branch_sum_matrix(tmap: SaussolMap, grid: Grid) -> sp.csr_matrix:
    if grid.box != tmap.box:
        raise ValueError("grid box differs from the map's box")
    y = grid.flat_centers()
    rows, cols, vals = [], [], []
    for b in tmap.branches:
        ok = b.image_contains(y, tol=1e-12)
        x = b.inverse(y[ok])
        inside = _in_domain(b.domain, x, tmap.box)
        tgt = np.flatnonzero(ok)[inside]
        src = grid.locate(x[inside])
        good = src >= 0
        rows.append(tgt[good])
        cols.append(src[good])
        vals.append(b.inverse_jacobian_det(y[tgt[good]]))
    M = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(grid.size, grid.size))
    M.sum_duplicates()
    return M


def branch_sum_callable(tmap: SaussolMap, fn, y) -> np.ndarray:
    """Exact branch sum of a callable ``fn`` at arbitrary points ``y``."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    out = np.zeros(len(y))
    for b in tmap.branches:
        ok = b.image_contains(y, tol=1e-12)
        x = b.inverse(y[ok])
        inside = _in_domain(b.domain, x, tmap.box)
        idx = np.flatnonzero(ok)[inside]
        out[idx] += fn(x[inside]) * b.inverse_jacobian_det(y[idx])
    return out


# ---------------------------------------------------------------------------
# Ulam


def _overlap_1d(src_edges, dst_edges, lo, hi, scale, shift) -> np.ndarray:
    """``A[j, i] = m(src_i ∩ [lo,hi] ∩ T^{-1} dst_j) / m(src_i)`` for ``T(x) = scale x + shift``."""
    a0, a1 = src_edges[:-1], src_edges[1:]
    pre = (dst_edges - shift) / scale
    b0 = np.minimum(pre[:-1], pre[1:])
    b1 = np.maximum(pre[:-1], pre[1:])
    left = np.maximum(np.maximum(a0[None, :], b0[:, None]), lo)
    right = np.minimum(np.minimum(a1[None, :], b1[:, None]), hi)
    return np.clip(right - left, 0.0, None) / (a1 - a0)[None, :]


def _ulam_diagonal(tmap: SaussolMap, grid: Grid) -> sp.csc_matrix:
    total = sp.csc_matrix((grid.size, grid.size))
    for b in tmap.branches:
        mat = None
        for k in range(grid.dim):
            e = grid.axis_edges(k)
            A = _overlap_1d(e, e, b.domain.lower[k], b.domain.upper[k], b.matrix[k, k], b.offset[k])
            A[np.abs(A) < 1e-15] = 0.0
            A = sp.csc_matrix(A)
            mat = A if mat is None else sp.kron(mat, A, format="csc")
        total = total + mat
    return total.tocsc()


def _ulam_polygon(tmap: SaussolMap, grid: Grid) -> sp.csc_matrix:
    import shapely
    from shapely import affinity

    if grid.dim != 2:
        raise ValueError("exact Ulam for non-diagonal branches is implemented in two dimensions only")
    ex, ey = grid.axis_edges(0), grid.axis_edges(1)
    rows, cols, vals = [], [], []
    for i in range(grid.size):
        cell = grid.cell_box(i)
        for b in tmap.branches:
            w = np.minimum(cell.hi, b.domain.hi) - np.maximum(cell.lo, b.domain.lo)
            if np.any(w <= 0):
                continue
            lo, hi = np.maximum(cell.lo, b.domain.lo), np.minimum(cell.hi, b.domain.hi)
            poly = shapely.box(lo[0], lo[1], hi[0], hi[1])
            A, o = b.matrix, b.offset
            img = affinity.affine_transform(poly, [A[0, 0], A[0, 1], A[1, 0], A[1, 1], o[0], o[1]])
            x0, y0, x1, y1 = img.bounds
            i0, i1 = np.searchsorted(ex, [x0, x1])
            j0, j1 = np.searchsorted(ey, [y0, y1])
            ii, jj = np.meshgrid(np.arange(max(i0 - 1, 0), min(i1, grid.shape[0])),
                                 np.arange(max(j0 - 1, 0), min(j1, grid.shape[1])), indexing="ij")
            ii, jj = ii.ravel(), jj.ravel()
            targets = shapely.box(ex[ii], ey[jj], ex[ii + 1], ey[jj + 1])
            area = shapely.area(shapely.intersection(targets, img)) * b._inv_det / grid.cell_volume
            keep = area > 1e-15
            rows.append(ii[keep] * grid.shape[1] + jj[keep])
            cols.append(np.full(int(keep.sum()), i))
            vals.append(area[keep])
    M = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(grid.size, grid.size))
    M.sum_duplicates()
    return M


def _ulam_mc_columns(tmap: SaussolMap, grid: Grid, cols, samples: int, seed: int):
    rows, cc, vals = [], [], []
    for i in cols:
        rng = np.random.default_rng([seed, int(i)])
        cell = grid.cell_box(int(i))
        pts = cell.sample(rng, samples)
        idx = tmap.branch_index(pts)
        pts, idx = pts[idx >= 0], idx[idx >= 0]
        img = np.empty_like(pts)
        for k, b in enumerate(tmap.branches):
            sel = idx == k
            if sel.any():
                img[sel] = b.forward(pts[sel])
        tgt = grid.locate(img)
        tgt = tgt[tgt >= 0]
        u, cnt = np.unique(tgt, return_counts=True)
        rows.append(u)
        cc.append(np.full(len(u), i))
        vals.append(cnt / samples)
    return rows, cc, vals


def build_ulam(tmap: SaussolMap, grid: Grid, sampler: str = "exact", samples: int = 10_000, seed: int = 0,
               threads: int = 1) -> sp.csc_matrix:
    """Ulam matrix of ``tmap`` on ``grid``.

    ``sampler="exact"`` needs affine branches (diagonal ones use a Kronecker
    product of interval overlaps, others polygon clipping).  ``"monte-carlo"``
    draws ``samples`` uniform points per cell from a generator keyed on
    ``(seed, cell)``, so the result does not depend on ``threads``.
    """
    if grid.box != tmap.box:
        raise ValueError("grid box differs from the map's box")
    if sampler == "exact":
        if not tmap.is_affine:
            raise ValueError("exact Ulam mode requires affine branches")
        if all(b.is_diagonal for b in tmap.branches):
            return _ulam_diagonal(tmap, grid)
        return _ulam_polygon(tmap, grid)
    if sampler not in ("monte-carlo", "mc"):
        raise ValueError(f"unknown sampler {sampler!r}")
    chunks = np.array_split(np.arange(grid.size), max(1, threads * 4))
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        parts = list(pool.map(lambda c: _ulam_mc_columns(tmap, grid, c, samples, seed), chunks))
    rows = [r for p in parts for r in p[0]]
    cols = [c for p in parts for c in p[1]]
    vals = [v for p in parts for v in p[2]]
    return sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(grid.size, grid.size))


def save_ulam(M: sp.spmatrix, path, header: dict) -> None:
    """Triplet text: a JSON header line, then ``row col value`` lines in column-major order."""
    C = sp.csc_matrix(M)
    C.sort_indices()
    lines = [json.dumps({**header, "shape": list(C.shape), "nnz": int(C.nnz)}, sort_keys=True)]
    for col in range(C.shape[1]):
        for k in range(C.indptr[col], C.indptr[col + 1]):
            lines.append(f"{C.indices[k]} {col} {float(C.data[k])!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_ulam(path) -> tuple[sp.csc_matrix, dict]:
    text = Path(path).read_text().splitlines()
    header = json.loads(text[0])
    if len(text) > 1:
        data = np.array([ln.split() for ln in text[1:] if ln.strip()], dtype=object)
        r, c, v = data[:, 0].astype(int), data[:, 1].astype(int), data[:, 2].astype(float)
    else:
        r = c = np.zeros(0, dtype=int)
        v = np.zeros(0)
    return sp.csc_matrix((v, (r, c)), shape=tuple(header["shape"])), header


# ---------------------------------------------------------------------------
# backends and cocycles


class TransferBackend:
    """Caches one sparse operator per (map, grid); ``mode`` is ``branch-sum`` or ``ulam``."""

    def __init__(self, mode: str, grid: Grid, sampler: str = "exact", samples: int = 10_000, seed: int = 0,
                 threads: int = 1):
        if mode not in MODES:
            raise ValueError(f"unknown backend mode {mode!r}")
        self.mode = mode
        self.grid = grid
        self.sampler = sampler
        self.samples = samples
        self.seed = seed
        self.threads = threads
        self._cache: dict[str, sp.spmatrix] = {}

    def matrix(self, tmap: SaussolMap) -> sp.spmatrix:
        M = self._cache.get(tmap.key)
        if M is None:
            if self.mode == "ulam":
                M = build_ulam(tmap, self.grid, self.sampler, self.samples, self.seed, self.threads).tocsr()
            else:
                M = branch_sum_matrix(tmap, self.grid)
            self._cache[tmap.key] = M
        return M

    def describe(self) -> dict:
        d = {"mode": self.mode, "grid": self.grid.spec()}
        if self.mode == "ulam":
            d["sampler"] = self.sampler
            if self.sampler != "exact":
                d.update(samples=self.samples, seed=self.seed)
        return d


def apply(backend: TransferBackend, tmap: SaussolMap, f: GridFunction) -> GridFunction:
    if f.grid != backend.grid:
        raise ValueError("backend/grid mismatch")
    if tmap.box != backend.grid.box:
        raise ValueError("backend/map mismatch: different ambient boxes")
    return GridFunction(f.grid, backend.matrix(tmap) @ f.flat)


@dataclass
class CocycleResult:
    iterates: list[GridFunction]
    l1: list[float] = field(default_factory=list)
    v_alpha: list[float] = field(default_factory=list)

    @property
    def final(self) -> GridFunction:
        return self.iterates[-1]


def cocycle_apply(family: MapFamily, path, f: GridFunction, backend: TransferBackend,
                  params: OscParams | None = None, keep: bool = True) -> CocycleResult:
    """Apply ``L_{ω_{k-1}} ∘ … ∘ L_{ω_0}`` to ``f`` along the symbols of ``path``.

    Norms are recorded after every step (V_α only when ``params`` is given).
    With ``keep=False`` only the initial and final functions are retained.
    """
    symbols = list(getattr(path, "symbols", path))
    maps = [family[s] for s in symbols]
    cur = f
    res = CocycleResult([f], [f.l1()], [v_alpha_norm(f, params)] if params else [])
    for m in maps:
        cur = apply(backend, m, cur)
        if keep:
            res.iterates.append(cur)
        res.l1.append(cur.l1())
        if params:
            res.v_alpha.append(v_alpha_norm(cur, params))
    if not keep and maps:
        res.iterates.append(cur)
    return res


def l1_contraction_check(backend: TransferBackend, tmap: SaussolMap, ensemble) -> float:
    """Largest ``||Lf||_1 / ||f||_1`` over the ensemble (zero functions skipped)."""
    worst = 0.0
    for f in ensemble:
        n = f.l1()
        if n > 0:
            worst = max(worst, apply(backend, tmap, f).l1() / n)
    return worst


def fixed_density(M: sp.spmatrix, grid: Grid, tol: float = 1e-13, max_iter: int = 100_000) -> GridFunction:
    """Power iteration for the fixed vector of a column-stochastic matrix, normalized to ``∫ = 1``."""
    v = np.full(grid.size, 1.0 / grid.box.volume)
    for _ in range(max_iter):
        w = M @ v
        w *= 1.0 / (w.sum() * grid.cell_volume)
        if np.abs(w - v).sum() * grid.cell_volume < tol:
            return GridFunction(grid, w)
        v = w
    raise RuntimeError("power iteration did not converge")
