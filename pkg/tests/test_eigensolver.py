import dataclasses
import json

import numpy as np
import pytest

import adderfrag as af
from adderfrag.eigensolver import (
    fixed_point_residual,
    power_iterate,
    rho_bounds,
    rho_identity_residual,
    sigma_sweep,
    sigma_threshold,
    solver_grid,
    sweep_to_csv,
)


def test_threshold_is_two_for_mitosis(hyp_op):
    assert sigma_threshold(hyp_op) == pytest.approx(2.0)


@pytest.mark.parametrize("sigma", [1.0, 1.5, 2.0])
def test_sigma_below_threshold_rejected(hyp_op, sigma):
    with pytest.raises(af.DomainError):
        power_iterate(hyp_op, sigma, n=64)


def test_iteration_cap_raises_with_last_iterate(hyp_op):
    with pytest.raises(af.ConvergenceError) as info:
        power_iterate(hyp_op, 10.0, n=256, tol=0.0, max_iter=5)
    last = info.value.result
    assert last is not None and not last.converged
    assert last.iterations == 5 and len(last.history) == 5
    assert np.isfinite(info.value.residual)


def test_bad_initial_iterate_rejected(hyp_op):
    with pytest.raises(ValueError):
        power_iterate(hyp_op, 10.0, n=64, initial=-np.ones(64))
    with pytest.raises(ValueError):
        power_iterate(hyp_op, 10.0, n=64, initial="bump")


def test_closed_form_bounds_at_ten(hyp_op):
    lo, hi = rho_bounds(hyp_op, 10.0)
    assert lo == pytest.approx(117.0 / 121.0, abs=1e-15)
    assert hi == pytest.approx(0.99, abs=1e-15)
    r = power_iterate(hyp_op, 10.0, n=1024)
    assert lo <= r.rho <= hi


@pytest.mark.parametrize("sigma", ["10", "20"])
def test_rho_matches_independent_oracle(hyp_op, derived, sigma):
    r = power_iterate(hyp_op, float(sigma), n=4096)
    # product integration and the midpoint oracle differ by O(h) ~ 1e-6
    assert r.rho == pytest.approx(derived["rho"][sigma], abs=5e-6)


def test_result_is_normalised_fixed_point(hyp_small, hyp_op):
    f = hyp_small.f
    assert f.integrate() == pytest.approx(1.0, abs=1e-12)
    assert np.all(f.values >= 0)
    assert hyp_small.converged and hyp_small.residual < 1e-9
    # T f = rho f, so |Tf - f|_1 is close to 1 - rho
    assert fixed_point_residual(hyp_op, f) == pytest.approx(1.0 - hyp_small.rho, rel=0.05)


def test_support_starts_at_b_theta(hyp_small):
    f = hyp_small.f
    g = f.grid
    below = g.nodes <= 1.0 - g.h + 1e-12
    assert np.all(f.values[below] == 0.0)


@pytest.mark.parametrize("initial", ["triangle", "random"])
def test_uniqueness_across_initialisations(hyp_op, hyp_small, initial, rng):
    grid = hyp_small.f.grid
    if initial == "random":
        initial = rng.random(grid.n) + 0.1
    r = power_iterate(hyp_op, 20.0, n=1024, initial=initial, tol=1e-12)
    ref = power_iterate(hyp_op, 20.0, n=1024, tol=1e-12)
    assert (r.f - ref.f).l1() <= 1e-6
    assert r.rho == pytest.approx(ref.rho, abs=1e-10)


def test_explicit_grid_is_used(hyp_op):
    g = solver_grid(hyp_op, 10.0, 300)
    r = power_iterate(hyp_op, 10.0, grid=g)
    assert r.f.grid is g


def test_rho_identity_holds_for_eigenfunction(hyp_op, hyp_small):
    exact = rho_identity_residual(hyp_op, hyp_small)
    f = hyp_small.f
    bent = af.GridFunction(f.grid, f.values * (1.0 + 0.2 * np.sin(f.grid.nodes)))
    perturbed = rho_identity_residual(hyp_op, dataclasses.replace(hyp_small, f=bent))
    assert exact < 1e-7
    assert perturbed > 100 * exact


def test_sweep_handles_duplicates_and_compares_to_last(hyp_op, tmp_path):
    rows = sigma_sweep(hyp_op, [10, 10, 20], n=512)
    assert [r.sigma for r in rows] == [10.0, 10.0, 20.0]
    assert rows[0] == rows[1]
    assert rows[-1].diff_to_last == 0.0
    assert rows[0].diff_to_last > 0
    for r in rows:
        assert r.one_minus_rho <= r.psi_lower + 1e-4
    p = tmp_path / "sweep.csv"
    sweep_to_csv(rows, p)
    lines = p.read_text().splitlines()
    assert lines[0].startswith("sigma,rho,")
    assert float(lines[1].split(",")[1]) == rows[0].rho


def test_sweep_single_entry_and_order(hyp_op):
    (row,) = sigma_sweep(hyp_op, [10], n=256)
    assert row.diff_to_last is None
    assert sigma_sweep(hyp_op, []) == []
    with pytest.raises(ValueError):
        sigma_sweep(hyp_op, [20, 10])


def test_json_summary(hyp_op, hyp_small, tmp_path):
    p = tmp_path / "eigen.json"
    hyp_small.to_json(p, hyp_op, extra={"tag": "x"})
    data = json.loads(p.read_text())
    assert data["rho"] == hyp_small.rho
    assert data["bounds"]["lower"] <= data["rho"] <= data["bounds"]["upper"]
    assert data["grid"]["n"] == 1024 and data["tag"] == "x"
