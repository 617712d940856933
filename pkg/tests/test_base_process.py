import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from saussol_lab.base_process import build_process, forward_path, log_average, past_path, window

IID2 = {"kind": "iid", "symbols": ["0", "1"], "probabilities": [0.5, 0.5], "seed": 7}


def test_build_iid_uniform():
    p = build_process(IID2)
    assert p.kind == "iid" and p.stationary == (0.5, 0.5) and p.seed == 7


@pytest.mark.parametrize("spec, msg", [
    ({"kind": "markov", "symbols": ["a", "b"], "transition": [[1, 0], [0, 1]]}, "reducible"),
    ({"kind": "iid", "symbols": ["a", "b"], "probabilities": [0.3, 0.8]}, "not stochastic"),
    ({"kind": "iid", "symbols": []}, "empty"),
    ({"kind": "iid", "symbols": ["a", "a"], "probabilities": [0.5, 0.5]}, "duplicate"),
    ({"kind": "markov", "symbols": ["a", "b"], "transition": [[0.5, 0.6], [0.5, 0.5]]}, "not stochastic"),
    ({"kind": "markov", "symbols": ["a", "b"], "transition": [[0, 1], [1, 0]]}, "coalesce"),
    ({"kind": "rotation", "symbols": ["a"]}, "unknown"),
])
def test_build_errors(spec, msg):
    with pytest.raises(ValueError, match=msg):
        build_process(spec)


def test_window_determinism_and_extension():
    p = build_process(IID2)
    assert window(p, 0, 0, 3).symbols == window(p, 0, 0, 3).symbols
    short, long_ = window(p, 0, -5, 0), window(p, 0, -8, 0)
    assert long_.symbols[3:] == short.symbols
    assert window(p, 2, 0, 0).symbols == window(p, 0, 2, 2).symbols


def test_window_rejects_reversed_range():
    with pytest.raises(ValueError):
        window(build_process(IID2), 0, 3, 2)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**64 - 1), anchor=st.integers(-10**6, 10**6), a=st.integers(-40, 40),
       la=st.integers(0, 30), lb=st.integers(0, 30), markov=st.booleans())
def test_nested_windows_agree(seed, anchor, a, la, lb, markov):
    spec = ({"kind": "markov", "symbols": ["x", "y"], "transition": [[0.9, 0.1], [0.5, 0.5]], "seed": seed}
            if markov else dict(IID2, seed=seed))
    p = build_process(spec)
    inner = window(p, anchor, a, a + la)
    outer = window(p, anchor, a - lb, a + la + lb)
    assert outer.symbols[lb:lb + la + 1] == inner.symbols


@settings(max_examples=50, deadline=None)
@given(k=st.integers(-1000, 1000), t=st.integers(-50, 50))
def test_shift_equivariance(k, t):
    p = build_process(IID2)
    assert window(p, 5 + k, t, t).symbols == window(p, 5, t + k, t + k).symbols


def test_past_and_forward_paths_are_windows():
    p = build_process(IID2)
    w = window(p, 3, -4, 3).symbols
    assert past_path(p, 3, 4) == list(reversed(w[:4]))
    assert forward_path(p, 3, 4) == list(w[4:])
    assert past_path(p, 0, 0) == [] and forward_path(p, 0, 0) == []


def test_log_average_constant():
    p = build_process(IID2)
    assert log_average(p, {"0": 2.5, "1": 2.5}, 100).empirical == pytest.approx(math.log(2.5), abs=1e-15)


def test_log_average_iid_oracle():
    p = build_process(IID2)
    r = log_average(p, {"0": 0.5, "1": 1 / 3}, 100_000)
    exact = 0.5 * math.log(0.5) + 0.5 * math.log(1 / 3)
    assert r.exact == pytest.approx(exact, rel=1e-14)
    assert r.exact == pytest.approx(-0.8959, abs=1e-4)
    sigma = 0.5 * abs(math.log(0.5) - math.log(1 / 3)) / math.sqrt(100_000)
    assert abs(r.empirical - exact) <= 3 * sigma


def test_markov_stationary_oracle():
    p = build_process({"kind": "markov", "symbols": ["a", "b"], "transition": [[0.9, 0.1], [0.5, 0.5]], "seed": 3})
    # π solves π P = π: π = (5/6, 1/6)
    assert np.allclose(p.stationary, [5 / 6, 1 / 6], atol=1e-14)
    r = log_average(p, {"a": 2.0, "b": 0.25}, 50_000)
    assert r.exact == pytest.approx(5 / 6 * math.log(2) + 1 / 6 * math.log(0.25), rel=1e-12)
    assert abs(r.empirical - r.exact) < 0.05


def test_lln_within_5_over_sqrt_n():
    p = build_process({"kind": "iid", "symbols": list("abc"), "probabilities": [0.2, 0.3, 0.5], "seed": 11})
    g = {"a": 0.5, "b": 2.0, "c": 1.2}
    for n in (1000, 10_000, 100_000):
        r = log_average(p, g, n)
        assert abs(r.empirical - r.exact) < 5 / math.sqrt(n)


def test_log_average_errors():
    p = build_process(IID2)
    with pytest.raises(ValueError):
        log_average(p, {"0": 0.0, "1": 1.0}, 10)
    with pytest.raises(ValueError):
        log_average(p, {"0": 1.0, "1": 1.0}, 0)


def test_seed_changes_path():
    a = build_process(IID2)
    b = a.with_seed(8)
    assert window(a, 0, 0, 63).symbols != window(b, 0, 0, 63).symbols
