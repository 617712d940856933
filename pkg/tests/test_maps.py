import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from saussol_lab.base_process import build_process
from saussol_lab.families import (BUILTIN_NAMES, builtin_family, doubling_map, markov_product_map, tripling_map,
                                  weak_contraction_map)
from saussol_lab.geometry import Box
from saussol_lab.maps import (BranchMap, MapFamily, SaussolMap, apply, check_pe2, check_pe4, check_pe5,
                              contraction_coefficient, hoelder_constant, lambda_example, pe_report)

UNIT = Box((0.0, 0.0), (1.0, 1.0))


def test_apply_doubling_examples():
    m = doubling_map()
    assert np.allclose(apply(m, [0.3, 0.4]), [0.6, 0.8], atol=1e-15)
    assert np.allclose(apply(m, [0.7, 0.9]), [0.4, 0.8], atol=1e-15)
    with pytest.raises(ValueError, match="outside"):
        apply(m, [1.5, 0.2])


def test_contraction_coefficients():
    assert contraction_coefficient(doubling_map()) == 0.5
    assert contraction_coefficient(tripling_map()) == pytest.approx(1 / 3, rel=1e-15)
    aniso = SaussolMap("aniso", [BranchMap.affine(Box((0, 0), (0.5, 1 / 3)), np.diag([2.0, 3.0]), [0, 0])],
                       UNIT)
    # spectral norm of diag(1/2, 1/3)
    assert contraction_coefficient(aniso) == pytest.approx(0.5, rel=1e-15)


def test_singular_branch_rejected():
    with pytest.raises(ValueError, match="singular"):
        BranchMap.affine(UNIT, [[1, 0], [1, 0]], [0, 0])


@pytest.mark.parametrize("tmap", [doubling_map(), tripling_map(), markov_product_map()], ids=lambda m: m.label)
def test_pe1_sampled_pairs(tmap):
    rng = np.random.default_rng(1)
    s = contraction_coefficient(tmap)
    for b in tmap.branches:
        lo, hi = b.forward(b.domain.lo), b.forward(b.domain.hi)
        u = lo + rng.random((10_000, 2)) * (hi - lo)
        v = lo + rng.random((10_000, 2)) * (hi - lo)
        lhs = np.linalg.norm(b.inverse(u) - b.inverse(v), axis=1)
        assert np.all(lhs <= s * np.linalg.norm(u - v, axis=1) * (1 + 1e-12))


@pytest.mark.parametrize("tmap", [doubling_map(), tripling_map(), markov_product_map()], ids=lambda m: m.label)
def test_forward_inverse_round_trip(tmap):
    rng = np.random.default_rng(2)
    for b in tmap.branches:
        x = b.domain.sample(rng, 1000)
        assert np.abs(b.inverse(b.forward(x)) - x).max() < 1e-12


def _generic_map():
    # T(x) = (4x + x²/2, y): inverse Jacobian determinant 1/(4 + x)
    fwd = lambda x: np.stack([4 * x[..., 0] + x[..., 0] ** 2 / 2, x[..., 1]], -1)
    inv = lambda y: np.stack([-4 + np.sqrt(16 + 2 * y[..., 0]), y[..., 1]], -1)
    jac = lambda y: 1 / np.sqrt(16 + 2 * y[..., 0])
    return SaussolMap("generic", [BranchMap.generic(UNIT, fwd, inv, jac)], Box((0, 0), (5, 1)))


def test_hoelder_affine_is_zero():
    assert hoelder_constant(tripling_map(), 0.5) == 0.0


def test_hoelder_generic_against_derivative_bound():
    m = _generic_map()
    coarse = hoelder_constant(m, 1.0, eps0=0.05, resolution=16)
    fine = hoelder_constant(m, 1.0, eps0=0.05, resolution=32)
    assert coarse > 0
    assert abs(fine - coarse) <= 0.1 * fine
    # |d/dy log g| = 1/(4+x)^2 <= 1/16; two points at distance < ε from z give c <= 2/16
    assert fine <= 0.125 * (1 + 1e-3)
    assert fine >= 0.1


@pytest.mark.parametrize("alpha", [0.0, -0.5, 1.5])
def test_hoelder_alpha_domain(alpha):
    with pytest.raises(ValueError):
        hoelder_constant(doubling_map(), alpha)


def test_pe2_margins():
    m = doubling_map(margin=0.1)
    assert check_pe2(m, 0.05).passed
    # image margin is the expansion factor times the domain margin: 2 * 0.1
    r = check_pe2(m, 0.25)
    assert not r.passed and r.witnesses
    assert r.margin == pytest.approx(0.2, abs=1e-12)
    assert check_pe2(m, 0.19).passed
    tight = doubling_map(margin=1e-9)
    r = check_pe2(tight, 0.05)
    assert not r.passed and r.witnesses[0]["margin"] < 0.05


def test_zero_margin_extension_rejected():
    with pytest.raises(ValueError, match="strictly"):
        BranchMap(UNIT, UNIT, matrix=2 * np.eye(2), offset=[0, 0])


def test_pe4_defects():
    quarters = [Box((a, b), (a + 0.5, b + 0.5)) for a in (0, 0.5) for b in (0, 0.5)]
    mk = lambda doms: SaussolMap("q", [BranchMap.affine(d, 2 * np.eye(2), -2 * d.lo, margin=0.01) for d in doms],
                                 UNIT)
    assert check_pe4(mk(quarters)) == 0.0
    assert check_pe4(mk(quarters[:3])) == pytest.approx(0.25)
    with pytest.raises(ValueError, match="overlap"):
        mk([quarters[0], Box((0.25, 0.25), (0.75, 0.75))])


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_shipped_partitions_exact(name):
    fam, _ = builtin_family(name)
    for m in fam.maps.values():
        assert check_pe4(m) == 0.0


def test_lambda_tripling_formula():
    m = tripling_map()
    Y = m.boundary_multiplicity
    assert Y == 8  # four squares meet at an interior cross point, two facets each
    expected = (1 / 3) ** 0.5 + 4 * Y * (2 / math.pi) * (1 / 3) / (1e4 - 1 / 3) * 1e4**0.5
    assert lambda_example(m, 0.5, 1e4) == pytest.approx(expected, rel=1e-14)
    assert expected < 1


def test_lambda_errors_and_failure():
    m = tripling_map()
    with pytest.raises(ValueError):
        lambda_example(m, 0.5, 1 / 3)
    w = weak_contraction_map()
    assert lambda_example(w, 0.5, 10.0) >= 1


@settings(max_examples=50, deadline=None)
@given(s1=st.floats(0.05, 0.9), ds=st.floats(1e-3, 0.09), Y=st.integers(1, 12), S=st.floats(2, 1e4))
def test_lambda_monotone(s1, ds, Y, S):
    m = doubling_map()
    base = lambda_example(m, 0.5, S, s=s1, Y=Y)
    assert lambda_example(m, 0.5, S, s=s1 + ds, Y=Y) > base
    assert lambda_example(m, 0.5, S, s=s1, Y=Y + 1) > base


def test_pe5_single_tripling():
    fam, spec = builtin_family("tripling2d")
    r = check_pe5(fam, build_process(spec))
    assert r.passed and r.exact == pytest.approx(math.log(fam.lambdas()["T"]), rel=1e-14)


def test_pe5_mix_exact_expectation():
    fam, spec = builtin_family("contracting_mix")
    lam = fam.lambdas()
    assert lam["W"] > 1 > lam["T"]
    r = check_pe5(fam, build_process(spec))
    assert r.exact == pytest.approx(0.8 * math.log(lam["T"]) + 0.2 * math.log(lam["W"]), rel=1e-14)
    assert r.passed
    bad = build_process(dict(spec, probabilities=[0.3, 0.7]))
    r = check_pe5(fam, bad)
    assert r.exact == pytest.approx(0.3 * math.log(lam["T"]) + 0.7 * math.log(lam["W"]), rel=1e-14)
    assert r.exact >= 0 and not r.passed


def test_pe5_zeta_route():
    fam, spec = builtin_family("doubling2d")
    p = build_process(spec)
    assert not check_pe5(fam, p).passed  # Λ > 1 at the shipped parameters
    r = check_pe5(fam, p, zetas={"D": 0.9})
    assert r.passed and r.route == "zeta" and r.zeta_below_lambda == {"D": True}


def test_family_validation():
    with pytest.raises(ValueError, match="alpha"):
        MapFamily({"D": doubling_map()}, 0.0, 0.01, 10)
    with pytest.raises(ValueError, match="violates"):
        MapFamily({"W": weak_contraction_map()}, 0.5, 0.01, 1.0)
    fam, _ = builtin_family("random_mix")
    with pytest.raises(KeyError, match="unknown symbol"):
        fam["Q"]
    assert fam.eps_tilde == pytest.approx(0.01)


def test_pe_report_tripling():
    fam, spec = builtin_family("tripling2d")
    rep = pe_report(fam, build_process(spec))
    t = rep["maps"]["T"]
    assert rep["passed"] and t["PE1"] and t["PE2"] and t["PE3"] and t["PE4"]
    assert t["Lambda"] < 1
