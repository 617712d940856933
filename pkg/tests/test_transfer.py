import json

import numpy as np
import pytest

from conftest import random_piecewise
from saussol_lab.base_process import build_process, window
from saussol_lab.families import builtin_family, doubling_map, markov_interval_map, markov_product_map, tripling_map
from saussol_lab.geometry import Box
from saussol_lab.grid import Grid, GridFunction
from saussol_lab.maps import BranchMap, SaussolMap
from saussol_lab.transfer import (TransferBackend, apply, branch_sum_callable, build_ulam, cocycle_apply,
                                  fixed_density, l1_contraction_check, load_ulam, save_ulam)

UNIT = Box((0.0, 0.0), (1.0, 1.0))


def markov_density(x):
    return np.where(x < 0.5, 4 / 3, 2 / 3)


def test_doubling_preserves_one_both_backends():
    g = Grid.regular(UNIT, 32)
    one = GridFunction.constant(g, 1.0)
    for mode in ("branch-sum", "ulam"):
        assert np.allclose(apply(TransferBackend(mode, g), doubling_map(), one).values, 1.0, atol=1e-15)


def test_doubling_closed_form_branch_sum():
    g = Grid.regular(UNIT, 16)
    y = g.flat_centers()
    # preimages x/2, (x+1)/2, each with two y-preimages and weight 1/4
    exact = branch_sum_callable(doubling_map(), lambda p: p[:, 0], y)
    assert np.allclose(exact, (2 * y[:, 0] + 1) / 4, atol=1e-15)
    f = GridFunction.from_callable(g, lambda p: p[..., 0])
    grid_version = apply(TransferBackend("branch-sum", g), doubling_map(), f)
    assert np.abs(grid_version.flat - (2 * y[:, 0] + 1) / 4).max() <= g.h[0]


def test_ulam_small_exact_matrices():
    D = build_ulam(doubling_map(), Grid.regular(UNIT, 2)).toarray()
    assert np.abs(D - 0.25).max() < 1e-12
    T = build_ulam(tripling_map(), Grid.regular(UNIT, 3)).toarray()
    assert T.shape == (9, 9) and np.abs(T - 1 / 9).max() < 1e-12


def test_markov_factor_matrix_and_fixed_vector():
    g = Grid.regular(Box((0.0,), (1.0,)), 2)
    M = build_ulam(markov_interval_map(), g).toarray()
    assert np.abs(M - np.array([[0.5, 1.0], [0.5, 0.0]])).max() < 1e-12
    h = fixed_density(build_ulam(markov_interval_map(), g), g)
    assert np.abs(h.values - [4 / 3, 2 / 3]).max() < 1e-10


def test_monte_carlo_binomial_agreement():
    g = Grid.regular(UNIT, 2)
    exact = build_ulam(doubling_map(), g).toarray()
    mc = build_ulam(doubling_map(), g, sampler="monte-carlo", samples=100_000, seed=3).toarray()
    sigma = np.sqrt(exact * (1 - exact) / 100_000)
    assert np.all(np.abs(mc - exact) <= 3 * sigma)


def test_monte_carlo_thread_invariance():
    g = Grid.regular(UNIT, 8)
    a = build_ulam(markov_product_map(), g, sampler="monte-carlo", samples=500, seed=1, threads=1)
    b = build_ulam(markov_product_map(), g, sampler="monte-carlo", samples=500, seed=1, threads=4)
    assert (a != b).nnz == 0


def test_exact_ulam_rejects_generic():
    fwd = lambda x: 2 * x
    inv = lambda y: y / 2
    jac = lambda y: np.full(len(np.atleast_2d(y)), 0.25)
    m = SaussolMap("gen", [BranchMap.generic(Box((0, 0), (0.5, 0.5)), fwd, inv, jac, margin=0.01)], UNIT)
    with pytest.raises(ValueError, match="affine"):
        build_ulam(m, Grid.regular(UNIT, 8))


@pytest.mark.parametrize("tmap", [doubling_map(), tripling_map(), markov_product_map()], ids=lambda m: m.label)
def test_ulam_columns_stochastic(tmap):
    M = build_ulam(tmap, Grid.regular(UNIT, 48))
    assert np.abs(np.asarray(M.sum(axis=0)).ravel() - 1).max() < 1e-12


def test_cocycle_examples():
    fam, spec = builtin_family("random_mix")
    g = Grid.regular(UNIT, 32)
    be = TransferBackend("ulam", g)
    f = random_piecewise(g, np.random.default_rng(0))
    assert cocycle_apply(fam, [], f, be).final is f
    res = cocycle_apply(fam, ["D", "T"], GridFunction.constant(g, 1.0), be)
    assert all(np.allclose(h.values, 1.0, atol=1e-14) for h in res.iterates)
    with pytest.raises(KeyError):
        cocycle_apply(fam, ["Q"], f, be)
    path = window(build_process(spec), 0, 0, 9)
    assert len(cocycle_apply(fam, path, f, be).iterates) == 11


def test_markov_cocycle_converges_to_product_density():
    fam, _ = builtin_family("markov_product2d")
    g = Grid.regular(UNIT, 64)
    res = cocycle_apply(fam, ["M"] * 60, GridFunction.constant(g, 1.0), TransferBackend("ulam", g), keep=False)
    target = GridFunction.from_callable(g, lambda p: markov_density(p[..., 0]) * markov_density(p[..., 1]))
    assert res.final.l1_distance(target) < 1e-12
    assert all(np.diff(res.l1) <= 1e-13)


def test_l1_contraction():
    g = Grid.regular(UNIT, 32)
    rng = np.random.default_rng(4)
    pos = [GridFunction(g, rng.random((32, 32))) for _ in range(10)]
    signed = [random_piecewise(g, rng) for _ in range(10)]
    m = markov_product_map()
    ul = TransferBackend("ulam", g)
    assert l1_contraction_check(ul, m, pos) == pytest.approx(1.0, abs=1e-12)
    assert l1_contraction_check(ul, m, signed) <= 1 + 1e-12
    bs = TransferBackend("branch-sum", Grid.regular(UNIT, 33))
    pos33 = [GridFunction(bs.grid, rng.random((33, 33))) for _ in range(5)]
    assert abs(l1_contraction_check(bs, m, pos33) - 1) <= 4 / 33


def test_positivity_preserved(rng):
    g = Grid.regular(UNIT, 25)
    f = GridFunction(g, rng.random((25, 25)))
    for mode in ("branch-sum", "ulam"):
        for m in (doubling_map(), markov_product_map()):
            assert apply(TransferBackend(mode, g), m, f).values.min() >= 0


def test_backend_consistency_halves():
    m = markov_product_map()
    errs = []
    for n in (25, 51, 101, 201):
        g = Grid.regular(UNIT, n)
        f = GridFunction.from_callable(g, lambda p: np.sin(3 * p[..., 0]) + p[..., 1] ** 2 + 1)
        errs.append(apply(TransferBackend("branch-sum", g), m, f).l1_distance(apply(TransferBackend("ulam", g), m, f)))
    ratios = np.array(errs[1:]) / np.array(errs[:-1])
    assert errs[0] < 0.05
    assert np.all((ratios > 0.4) & (ratios < 0.6))


def test_branch_aligned_functions_agree_exactly():
    g = Grid.regular(UNIT, 64)
    m = markov_product_map()
    for b in m.branches:
        f = GridFunction.indicator(g, b.domain)
        a = apply(TransferBackend("branch-sum", g), m, f)
        u = apply(TransferBackend("ulam", g), m, f)
        assert a.l1_distance(u) < 1e-12


def test_koopman_duality(rng):
    g = Grid.regular(UNIT, 64)
    m = markov_product_map()
    f = GridFunction(g, rng.random((64, 64)))
    obs = lambda p: np.cos(2 * p[..., 0]) + p[..., 1]
    Lf = apply(TransferBackend("ulam", g), m, f)
    lhs = (Lf.values * obs(g.centers)).sum() * g.cell_volume
    from saussol_lab.maps import apply as T
    rhs = (f.values * obs(T(m, g.flat_centers()).reshape(64, 64, 2))).sum() * g.cell_volume
    assert abs(lhs - rhs) < 4 * g.h[0]


def test_apply_grid_mismatch():
    g = Grid(Box((0, 0), (2, 1)), (16, 8))
    with pytest.raises(ValueError):
        apply(TransferBackend("ulam", Grid.regular(UNIT, 8)), doubling_map(), GridFunction.constant(g, 1.0))


def test_ulam_triplet_round_trip(tmp_path):
    g = Grid.regular(UNIT, 8)
    M = build_ulam(markov_product_map(), g)
    p = tmp_path / "m.txt"
    save_ulam(M, p, {"grid": g.spec(), "map": markov_product_map().key, "sampler": "exact"})
    lines = p.read_text().splitlines()
    head = json.loads(lines[0])
    assert head["nnz"] == M.nnz and head["shape"] == [64, 64]
    r, c, v = lines[1].split()
    assert int(r) >= 0 and int(c) == 0
    back, header = load_ulam(p)
    assert (back != M).nnz == 0 and header["sampler"] == "exact"


def test_backend_rejects_unknown_mode():
    with pytest.raises(ValueError):
        TransferBackend("fourier", Grid.regular(UNIT, 8))
