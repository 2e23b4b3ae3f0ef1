import warnings

import numpy as np
import pytest

import adderfrag as af
from adderfrag.entropy import (
    EntropyConfig,
    dissipation,
    dissipation_report,
    entropy,
    entropy_report,
    get_h,
    h_abs,
    h_identity,
    h_quadratic,
    h_tabulated,
    nu_x_mass,
)
from adderfrag.transport import TransportScheme, entropy_observer, initial_state, run


@pytest.fixture(scope="module")
def quad_cfg(small_transport, mitosis_op):
    _, _, N = small_transport
    return EntropyConfig(h_quadratic(), N, mitosis_op)


def test_library_functions():
    x = np.array([0.0, 1.0, 3.0])
    np.testing.assert_array_equal(h_quadratic()(x), [1.0, 0.0, 4.0])
    np.testing.assert_array_equal(h_abs()(x), [1.0, 0.0, 2.0])
    np.testing.assert_array_equal(h_identity()(x), x)
    assert get_h("quadratic").name == "quadratic"
    with pytest.raises(ValueError, match="unknown H"):
        get_h("cubic")


def test_tabulated_h_extends_linearly():
    h = h_tabulated([0.0, 1.0, 2.0], [1.0, 0.0, 1.0])
    np.testing.assert_allclose(h([-1.0, 0.5, 1.0, 3.0]), [2.0, 0.5, 0.0, 2.0])


def test_tabulated_h_rejects_nonconvex_and_bad_input():
    with pytest.raises(af.DomainError, match="convex"):
        h_tabulated([0.0, 1.0, 2.0], [0.0, 1.0, 0.0])
    with pytest.raises(ValueError):
        h_tabulated([0.0, 0.0, 1.0], [0.0, 1.0, 2.0])
    with pytest.raises(ValueError):
        h_tabulated([0.0], [1.0])


def test_entropy_of_stationary_profile(quad_cfg):
    N = quad_cfg.stationary
    assert entropy(quad_cfg, N) == 0.0
    ident = EntropyConfig(h_identity(), N, quad_cfg.op)
    # cells with N below 1e-12 of its maximum are outside the support
    assert entropy(ident, N) == pytest.approx(N.weighted_mass(), rel=1e-9)


@pytest.mark.parametrize("c", [0.0, 0.5, 1.7])
def test_entropy_of_scaled_profile(quad_cfg, c):
    N = quad_cfg.stationary
    assert entropy(quad_cfg, N * c) == pytest.approx((1.0 - c) ** 2 * N.weighted_mass(), rel=1e-9)


def test_dissipation_vanishes_at_equilibrium_and_for_linear_h(quad_cfg):
    N = quad_cfg.stationary
    assert dissipation(quad_cfg, N) == pytest.approx(0.0, abs=1e-15)
    bent = N.with_values(N.values * (1.0 + 0.4 * np.sin(3.0 * N.second_grid.nodes))[None, :])
    assert dissipation(EntropyConfig(h_identity(), N, quad_cfg.op), bent) == pytest.approx(0.0, abs=1e-14)


def test_dissipation_nonnegative_for_random_perturbations(quad_cfg, rng):
    N = quad_cfg.stationary
    for _ in range(5):
        n = N.with_values(N.values * rng.uniform(0.2, 1.8, N.values.shape))
        for h in (h_quadratic(), h_abs()):
            assert dissipation(EntropyConfig(h, N, quad_cfg.op), n) >= -1e-12


def test_cutoff_restricts_dissipation(quad_cfg, rng):
    N = quad_cfg.stationary
    n = N.with_values(N.values * rng.uniform(0.5, 1.5, N.values.shape))
    full = dissipation(quad_cfg, n)
    part = dissipation(EntropyConfig(quad_cfg.h, N, quad_cfg.op, cutoff=(1.0, 2.0)), n)
    assert 0.0 < part < full


def test_nu_mass_is_one_away_from_the_edge(quad_cfg):
    nu = nu_x_mass(quad_cfg, np.linspace(1.0, 4.0, 10))
    np.testing.assert_allclose(nu, 1.0, atol=1e-2)
    assert np.isnan(nu_x_mass(quad_cfg, 0.1))  # below b_theta N(0, x) vanishes


def test_mass_check_is_opt_in(quad_cfg):
    N = quad_cfg.stationary
    rep = dissipation_report(quad_cfg, N)
    # the coarse grid leaves a large offset one cell past b_theta
    assert rep.mass_error > 1e-2
    with pytest.raises(af.DomainError, match="nu_x has mass"):
        dissipation_report(quad_cfg, N, check_mass=True)
    ok = dissipation_report(quad_cfg, N, check_mass=True, mass_tol=1.0)
    assert ok.mass_error == rep.mass_error


def test_domination_warning(quad_cfg):
    N = quad_cfg.stationary
    strict = EntropyConfig(h_quadratic(), N, quad_cfg.op, domination=1.1)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert entropy_report(strict, N).domination_ok
    with pytest.warns(RuntimeWarning, match="domination"):
        rep = entropy_report(strict, N * 1.5)
    assert not rep.domination_ok and rep.max_ratio == pytest.approx(1.5)


def test_grid_mismatch_rejected(quad_cfg):
    N = quad_cfg.stationary
    other = af.reconstruct.Density2D("as", af.Grid1D(0.0, 8.0, 64), N.second_grid, np.zeros((64, N.second_grid.n)))
    with pytest.raises(ValueError, match="same grid"):
        entropy(quad_cfg, other)


def test_entropy_decreases_along_a_short_run(quad_cfg, small_transport):
    a, s, N = small_transport
    scheme = TransportScheme(quad_cfg.op, a, s, 4e-3)
    traj = run(initial_state("perturbed", N, 0.3), 1.0, scheme, [entropy_observer(quad_cfg)], every=25)
    H, D = traj.column("H"), traj.column("D")
    assert np.all(np.diff(H) <= 1e-4)
    assert H[-1] < 0.9 * H[0]
    assert np.all(D >= -1e-6)
