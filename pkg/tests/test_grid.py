import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from adderfrag import DomainError, Grid1D, GridFunction


def test_nodes_and_weights():
    g = Grid1D(1.0, 3.0, 9)
    assert g.h == pytest.approx(0.25)
    assert np.all(np.diff(g.nodes) > 0)
    assert g.weights.sum() == pytest.approx(g.length, rel=1e-12)
    with pytest.raises(ValueError):
        g.weights[0] = 1.0


def test_invalid_grid():
    with pytest.raises(ValueError):
        Grid1D(1.0, 1.0, 5)
    with pytest.raises(ValueError):
        Grid1D(0.0, 1.0, 1)


def test_anchored_grid_contains_anchor():
    g = Grid1D.anchored(1.0, 50.0, 4096)
    i = g.index_of(1.0)
    assert i is not None and i > 0
    assert g.s_max == pytest.approx(50.0)


def test_integrate_constant():
    for n in (2, 7, 100):
        assert GridFunction.from_callable(Grid1D(0.0, 2.0, n), lambda s: np.ones_like(s)).integrate() == pytest.approx(2.0)


def test_integrate_identity_exact():
    f = GridFunction.from_callable(Grid1D(0.0, 1.0, 101), lambda s: s)
    assert f.integrate() == pytest.approx(0.5, abs=1e-12)


def test_integrate_square_error_bound():
    f = GridFunction.from_callable(Grid1D(0.0, 1.0, 101), lambda s: s * s)
    assert abs(f.integrate() - 1.0 / 3.0) <= 2e-5


@pytest.mark.parametrize("k,l,expected", [(0, 0, 2.0), (1, 0, 2.5), (0, -1, 1.0 + math.log(2.0))])
def test_weighted_norm_examples(k, l, expected):
    f = GridFunction.from_callable(Grid1D(1.0, 2.0, 4001), lambda s: np.ones_like(s))
    assert f.weighted_norm(k, l) == pytest.approx(expected, abs=1e-7)


def test_weighted_norm_rejects_negative_power_at_zero():
    f = GridFunction.from_callable(Grid1D(0.0, 1.0, 11), lambda s: np.ones_like(s))
    with pytest.raises(DomainError):
        f.weighted_norm(0, -1)


def test_interpolate_examples():
    g = Grid1D(0.0, 1.0, 3)
    f = GridFunction(g, np.array([0.0, 1.0, 3.0]))
    assert f.interpolate(0.5) == 1.0
    assert f.interpolate(0.25) == pytest.approx(0.5)
    assert f.interpolate(-0.1) == 0.0
    assert f.interpolate(1.1) == 0.0
    assert f.interpolate(0.0) == 0.0


@settings(max_examples=50, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), q=st.lists(st.floats(0.0, 1.0), min_size=1, max_size=20))
def test_interpolate_exact_on_affine(a, b, q):
    g = Grid1D(-1.0, 2.0, 17)
    f = GridFunction.from_callable(g, lambda s: a * s + b)
    x = -1.0 + 3.0 * np.asarray(q)
    np.testing.assert_allclose(f.interpolate(x), a * x + b, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(vals=st.lists(st.floats(0.0, 10.0), min_size=5, max_size=5))
def test_integral_is_half_the_unit_weighted_norm(vals):
    f = GridFunction(Grid1D(0.5, 2.5, 5), np.asarray(vals))
    assert f.integrate() == pytest.approx(f.weighted_norm(0, 0) / 2.0, abs=1e-12)


def test_refinement_is_second_order():
    fn = lambda s: np.exp(-s) * np.sin(3 * s)  # noqa: E731
    exact = integrate.quad(fn, 0.0, 2.0)[0]
    g = Grid1D(0.0, 2.0, 33)
    e1 = abs(GridFunction.from_callable(g, fn).integrate() - exact)
    e2 = abs(GridFunction.from_callable(g.refine(), fn).integrate() - exact)
    assert g.refine().n == 2 * g.n - 1
    assert 3.5 < e1 / e2 < 4.5


def test_cdf_is_exact_for_the_interpolant(rng):
    g = Grid1D(0.0, 1.0, 9)
    f = GridFunction(g, rng.random(9))
    for s in (0.0, 0.11, 0.5, 0.93, 1.0):
        ref = integrate.quad(lambda x: float(f.interpolate(x)), 0.0, s, points=g.nodes[(g.nodes > 0) & (g.nodes < s)])[0] if s > 0 else 0.0
        assert float(f.cdf(s)) == pytest.approx(ref, abs=1e-12)
    assert f.mass_below(1.0) == pytest.approx(f.integrate())


def test_sampling_matches_cdf(rng):
    from scipy import stats

    g = Grid1D(1.0, 3.0, 21)
    f = GridFunction.from_callable(g, lambda s: (s - 1.0) * (3.0 - s) + 0.1)
    x = f.sample(np.random.default_rng(3), 50_000)
    assert x.min() >= 1.0 and x.max() <= 3.0
    ks = stats.kstest(x, lambda s: f.cdf(s) / f.integrate()).statistic
    assert ks < 0.01


def test_sampling_rejects_negative():
    f = GridFunction(Grid1D(0.0, 1.0, 3), np.array([1.0, -1.0, 1.0]))
    with pytest.raises(DomainError):
        f.sample(np.random.default_rng(0), 10)


def test_csv_round_trip_is_exact(tmp_path, rng):
    g = Grid1D(0.952089953556, 50.0, 257)
    f = GridFunction(g, rng.random(257) * 1e-3)
    p = tmp_path / "f.csv"
    f.to_csv(p)
    back = GridFunction.from_csv(p)
    assert np.array_equal(back.values, f.values)
    assert np.allclose(back.grid.nodes, g.nodes, rtol=0, atol=1e-12)
    text = f.to_csv()
    assert text.splitlines()[0] == "s,value"
    buf = io.StringIO()
    f.to_csv(buf)
    assert buf.getvalue() == text


def test_arithmetic_requires_same_grid():
    f = GridFunction(Grid1D(0.0, 1.0, 3), np.ones(3))
    g = GridFunction(Grid1D(0.0, 2.0, 3), np.ones(3))
    assert np.array_equal((f + f).values, 2 * np.ones(3))
    assert np.array_equal((f * 3.0).values, 3 * np.ones(3))
    with pytest.raises(ValueError):
        f + g
