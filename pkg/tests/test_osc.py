import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_piecewise
from saussol_lab.geometry import Box
from saussol_lab.grid import Grid, GridFunction
from saussol_lab.osc import (OscParams, alpha_seminorm, osc_array, osc_field, positivity_ball, prop32_suite,
                             v_alpha_norm)

UNIT = Box((0.0, 0.0), (1.0, 1.0))
HALF = Box((0.0, 0.0), (0.5, 1.0))


def brute_osc(values, h, eps):
    """Definition-level oscillation with zero extension: every pair of centres, no decomposition."""
    R = int(np.ceil(eps / h))
    P = np.pad(values, R)
    out = np.zeros_like(P)
    offs = [(i, j) for i in range(-R, R + 1) for j in range(-R, R + 1) if (i * h) ** 2 + (j * h) ** 2 < eps**2]
    for a in range(P.shape[0]):
        for b in range(P.shape[1]):
            vals = [P[a + i, b + j] if 0 <= a + i < P.shape[0] and 0 <= b + j < P.shape[1] else 0.0
                    for i, j in offs]
            out[a, b] = max(vals) - min(vals)
    return out, R


def test_constant_oscillation():
    g = Grid.regular(UNIT, 16)
    f = GridFunction.constant(g, 3.0)
    assert np.all(osc_array(f, 0.1, "restricted")[0] == 0)
    arr, pad = osc_array(f, 0.1, "zero")
    interior = arr[pad[0] + 2:-pad[0] - 2, pad[1] + 2:-pad[1] - 2]
    assert np.all(interior == 0)
    assert arr.max() == 3.0  # the zero extension shows up only in the boundary collar


def test_indicator_collar_against_brute_force():
    n, eps = 32, 0.07
    g = Grid.regular(UNIT, n)
    f = GridFunction.indicator(g, HALF)
    arr, pad = osc_array(f, eps)
    ref, R = brute_osc(f.values, 1 / n, eps)
    cut = R - pad[0]
    ref = ref[cut:ref.shape[0] - cut, cut:ref.shape[1] - cut]
    assert np.array_equal(arr, ref)
    assert set(np.unique(arr)) <= {0.0, 1.0}


def test_random_field_against_brute_force(rng):
    g = Grid.regular(UNIT, 16)
    f = GridFunction(g, rng.normal(size=(16, 16)))
    arr, pad = osc_array(f, 0.15)
    ref, R = brute_osc(f.values, 1 / 16, 0.15)
    cut = R - pad[0]
    assert np.allclose(arr, ref[cut:ref.shape[0] - cut, cut:ref.shape[1] - cut], atol=0, rtol=0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), eps=st.floats(0.02, 0.3))
def test_subadditive_and_monotone(seed, eps):
    rng = np.random.default_rng(seed)
    g = Grid.regular(UNIT, 16)
    f, h = random_piecewise(g, rng), random_piecewise(g, rng)
    osc_sum = osc_field(f + h, eps).values
    assert np.all(osc_sum <= osc_field(f, eps).values + osc_field(h, eps).values + 1e-12)
    small, pad_s = osc_array(f, 0.7 * eps)
    big, pad_b = osc_array(f, eps)
    d = pad_b[0] - pad_s[0]
    inner = big[d:big.shape[0] - d, d:big.shape[1] - d] if d else big
    assert np.all(small <= inner)


def test_seminorm_trivial_cases():
    g = Grid.regular(UNIT, 64)
    p = OscParams(0.5, 0.05, extension="restricted")
    assert alpha_seminorm(GridFunction.constant(g, 2.0), p) == 0.0
    assert v_alpha_norm(GridFunction.constant(g, 0.0), OscParams(0.5, 0.05)) == 0.0


def test_homogeneity_and_triangle(rng):
    g = Grid.regular(UNIT, 32)
    p = OscParams(0.5, 0.1)
    for _ in range(100):
        f, h = random_piecewise(g, rng), random_piecewise(g, rng)
        a, b, ab = alpha_seminorm(f, p), alpha_seminorm(h, p), alpha_seminorm(f + h, p)
        assert ab <= a + b + 1e-12 * (a + b)
    f = random_piecewise(g, rng)
    assert alpha_seminorm(f * -2.5, p) == pytest.approx(2.5 * alpha_seminorm(f, p), rel=1e-12)


def test_half_square_indicator_collar_oracle():
    g = Grid.regular(UNIT, 512)
    p = OscParams(1.0, 0.01)
    # straddling collar has width 2ε along a boundary of length 3: ε^{-1} · 2ε · 3 = 6
    assert alpha_seminorm(GridFunction.indicator(g, HALF), p) == pytest.approx(6.0, rel=0.05)


def test_unit_constant_norm_under_zero_extension():
    g = Grid.regular(UNIT, 512)
    p = OscParams(1.0, 0.01)
    one = GridFunction.constant(g, 1.0)
    semi = alpha_seminorm(one, p)
    assert v_alpha_norm(one, p) == pytest.approx(1.0 + semi, rel=1e-15)
    assert semi == pytest.approx(8.0, rel=0.05)  # perimeter 4, two-sided collar


def test_refinement_stability():
    p = OscParams(0.5, 0.05)
    vals = [alpha_seminorm(GridFunction.indicator(Grid.regular(UNIT, n), Box((0.2, 0.3), (0.7, 0.6))), p)
            for n in (128, 256)]
    assert abs(vals[0] - vals[1]) < 0.1 * vals[1]


def test_positivity_ball_constant():
    g = Grid.regular(UNIT, 64)
    one = GridFunction.constant(g, 1.0)
    p = OscParams(1.0, 0.05)
    ball = positivity_ball(one, p)
    expected = min(0.05, 1.0 / alpha_seminorm(one, p))
    assert ball.radius == pytest.approx(expected, rel=1e-14) and ball.inf_value == 1.0
    r = positivity_ball(one, OscParams(1.0, 0.05, extension="restricted"))
    assert r.radius == 0.05 and r.found


def test_positivity_ball_subsquare():
    g = Grid.regular(UNIT, 64)
    sq = Box((0.25, 0.25), (0.5, 0.5))
    h = GridFunction.indicator(g, sq)
    h = h * (1 / h.integral())
    p = OscParams(0.5, 0.05)
    ball = positivity_ball(h, p)
    assert ball.found and ball.inf_value == pytest.approx(16.0)
    assert sq.contains(np.array(ball.center))
    # every centre within the radius lies in the sub-square
    c = g.flat_centers()
    near = np.linalg.norm(c - np.array(ball.center), axis=1) < ball.radius
    assert np.all(h.flat[near] > 0)


def test_positivity_ball_errors():
    g = Grid.regular(UNIT, 16)
    p = OscParams(0.5, 0.05)
    with pytest.raises(ValueError):
        positivity_ball(GridFunction(g, np.full((16, 16), -1.0)), p)
    with pytest.raises(ValueError):
        positivity_ball(GridFunction.constant(g, 0.0), p)


def test_prop32_constants_zero_violation():
    g = Grid.regular(UNIT, 32)
    K = np.zeros((32, 32), bool)
    K[:16] = True
    r = prop32_suite(GridFunction.constant(g, 2.0), GridFunction.constant(g, 3.0), K, 0.05, 0.05, 0.12)
    assert r.max_violation == 0.0


def test_prop32_random_32(rng):
    g = Grid.regular(UNIT, 32)
    for _ in range(10):
        f, h = random_piecewise(g, rng), random_piecewise(g, rng)
        K = rng.random((32, 32)) < 0.5
        assert prop32_suite(f, GridFunction(g, np.abs(h.values)), K, 0.06, 0.04, 0.1).passed(1e-9)


def test_prop32_refuses_bad_radii():
    g = Grid.regular(UNIT, 16)
    f = GridFunction.constant(g, 1.0)
    with pytest.raises(ValueError, match="a \\+ b <= c"):
        prop32_suite(f, f, np.ones((16, 16), bool), 0.1, 0.1, 0.15)


def test_params_validation():
    with pytest.raises(ValueError):
        OscParams(1.5, 0.1)
    with pytest.raises(ValueError):
        OscParams(0.5, 0.1, levels=4)
    p = OscParams(0.5, 0.1)
    assert p.ladder[0] == 0.1 and len(p.ladder) == 16
