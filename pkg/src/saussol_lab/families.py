"""Built-in map families, addressable by name.

Each builder returns ``(MapFamily, process_spec)`` where ``process_spec`` is a
default description for :func:`saussol_lab.base_process.build_process`.
"""

from __future__ import annotations

from itertools import product

import numpy as np

from .geometry import Box
from .maps import BranchMap, MapFamily, SaussolMap

UNIT_SQUARE = Box((0.0, 0.0), (1.0, 1.0))

# ε̃0 = S ε0 = 0.01: the Lasota-Yorke runs at n = 256 pass for every shipped family.
_SHIPPED = {"alpha": 0.5, "eps0": 0.01 / 900, "S": 900.0}
DEFAULT_PARAMS = {name: dict(_SHIPPED) for name in (
    "doubling2d", "tripling2d", "markov_product2d", "two_component2d", "random_mix", "contracting_mix")}


def _grid_map(label: str, k: int, box: Box = UNIT_SQUARE, margin: float = 0.1) -> SaussolMap:
    """``x -> k x mod 1`` on each axis of ``box`` (``k^N`` affine branches)."""
    lo, w = box.lo, box.widths
    branches = []
    for cell in product(range(k), repeat=box.dim):
        cell = np.asarray(cell, dtype=float)
        d_lo = lo + cell * w / k
        dom = Box(tuple(d_lo), tuple(d_lo + w / k))
        # T(x) = k (x - d_lo) + lo
        branches.append(BranchMap.affine(dom, k * np.eye(box.dim), lo - k * d_lo, margin=margin))
    return SaussolMap(label, branches, box)


def doubling_map(box: Box = UNIT_SQUARE, margin: float = 0.1) -> SaussolMap:
    return _grid_map("doubling2d", 2, box, margin)


def tripling_map(box: Box = UNIT_SQUARE, margin: float = 0.1) -> SaussolMap:
    return _grid_map("tripling2d", 3, box, margin)


# 1D Markov factor: three slope-2 branches with images [0,1], [0,1/2], [0,1/2].
MARKOV_1D = (((0.0, 0.5), 0.0), ((0.5, 0.75), -1.0), ((0.75, 1.0), -1.5))


def markov_interval_map(margin: float = 0.05) -> SaussolMap:
    """The one-dimensional factor of ``markov_product2d`` on ``[0, 1]``."""
    branches = [BranchMap.affine(Box((a,), (b,)), [[2.0]], [off], margin=margin) for (a, b), off in MARKOV_1D]
    return SaussolMap("markov1d", branches, Box((0.0,), (1.0,)))


def markov_product_map(box: Box = UNIT_SQUARE, margin: float = 0.05) -> SaussolMap:
    """Product of the 1D Markov factor with itself, rescaled to ``box`` (9 branches)."""
    lo, w = box.lo, box.widths
    branches = []
    for (ia, off_a), (ib, off_b) in product(MARKOV_1D, repeat=2):
        d_lo = lo + w * np.array([ia[0], ib[0]])
        d_hi = lo + w * np.array([ia[1], ib[1]])
        # unit-square branch u -> 2u + off, conjugated by x = lo + w u
        offset = lo - 2 * lo + w * np.array([off_a, off_b])
        branches.append(BranchMap.affine(Box(tuple(d_lo), tuple(d_hi)), 2 * np.eye(2), offset, margin=margin))
    return SaussolMap("markov_product2d", branches, box)


def weak_contraction_map(box: Box = UNIT_SQUARE, factor: float = 0.9) -> SaussolMap:
    """Single affine branch shrinking ``box`` toward its centre (``s = 1/factor > 1``)."""
    c = 0.5 * (box.lo + box.hi)
    branch = BranchMap.affine(box, factor * np.eye(box.dim), c - factor * c, margin=0.1)
    return SaussolMap("weak_contraction", [branch], box)


def two_component_map(margin: float = 0.05) -> SaussolMap:
    """Doubling on ``[0,1]^2`` and the Markov product on ``[1,2]x[0,1]``."""
    C = Box((0.0, 0.0), (2.0, 1.0))
    left = doubling_map(UNIT_SQUARE, margin).branches
    right = markov_product_map(Box((1.0, 0.0), (2.0, 1.0)), margin).branches
    return SaussolMap("two_component2d", list(left) + list(right), C)


def _family(name: str, maps: dict, alpha=None, eps0=None, S=None) -> MapFamily:
    p = dict(DEFAULT_PARAMS[name])
    p.update({k: v for k, v in {"alpha": alpha, "eps0": eps0, "S": S}.items() if v is not None})
    return MapFamily(maps, p["alpha"], p["eps0"], p["S"], name=name)


def builtin_family(name: str, alpha=None, eps0=None, S=None, seed: int = 7):
    """Return ``(family, default process spec)`` for a built-in family name."""
    if name == "doubling2d":
        maps = {"D": doubling_map()}
    elif name == "tripling2d":
        maps = {"T": tripling_map()}
    elif name == "markov_product2d":
        maps = {"M": markov_product_map()}
    elif name == "two_component2d":
        maps = {"K": two_component_map()}
    elif name == "random_mix":
        maps = {"D": doubling_map(), "T": tripling_map()}
        fam = _family(name, maps, alpha, eps0, S)
        return fam, {"kind": "iid", "symbols": ["D", "T"], "probabilities": [0.5, 0.5], "seed": seed}
    elif name == "contracting_mix":
        maps = {"T": tripling_map(), "W": weak_contraction_map()}
        fam = _family(name, maps, alpha, eps0, S)
        return fam, {"kind": "iid", "symbols": ["T", "W"], "probabilities": [0.8, 0.2], "seed": seed}
    else:
        raise KeyError(f"unknown built-in family {name!r}; choose from {sorted(DEFAULT_PARAMS)}")
    fam = _family(name, maps, alpha, eps0, S)
    sym = fam.symbols[0]
    return fam, {"kind": "iid", "symbols": [sym], "probabilities": [1.0], "seed": seed}


BUILTIN_NAMES = tuple(DEFAULT_PARAMS)
