"""Principal eigenpair of the truncated transition operator by power iteration."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DomainError
from .grid import Grid1D, GridFunction
from .operator import TransitionOperator


@dataclass(frozen=True)
class EigenResult:
    """Converged (or last) iterate of the power method on ``[s_min, sigma]``."""

    rho: float
    f: GridFunction
    sigma: float
    iterations: int
    residual: float
    step: float = math.nan
    converged: bool = True
    history: tuple[float, ...] = field(default=(), repr=False)

    def bounds(self, op: TransitionOperator) -> tuple[float, float]:
        return rho_bounds(op, self.sigma)

    def summary(self, op: TransitionOperator | None = None) -> dict:
        out = {
            "rho": self.rho,
            "one_minus_rho": 1.0 - self.rho,
            "sigma": self.sigma,
            "iterations": self.iterations,
            "residual": self.residual,
            "step": self.step,
            "converged": self.converged,
            "grid": {"s_min": self.f.grid.s_min, "s_max": self.f.grid.s_max, "n": self.f.grid.n},
        }
        if op is not None:
            lo, hi = rho_bounds(op, self.sigma)
            out["bounds"] = {"lower": lo, "upper": hi}
            out["fixed_point_residual"] = fixed_point_residual(op, self.f)
        return out

    def to_json(self, path, op: TransitionOperator | None = None, extra: dict | None = None) -> None:
        data = self.summary(op)
        if extra:
            data.update(extra)
        with open(path, "w") as fh:
            json.dump(data, fh, indent=2, sort_keys=True)
            fh.write("\n")


def sigma_threshold(op: TransitionOperator) -> float:
    """Smallest admissible truncation size: max(b / (1 - theta), 1)."""
    return max(op.b / (1.0 - op.theta), 1.0)


def solver_grid(op: TransitionOperator, sigma: float, n: int, guard: int = 4) -> Grid1D:
    """Grid on [~b_theta, sigma] containing b_theta as a node, with a few guard nodes below it."""
    return Grid1D.anchored(op.b_theta, sigma, n, guard=guard)


def _initial(grid: Grid1D, b_theta: float, shape: str) -> np.ndarray:
    s = grid.nodes
    on = s >= b_theta - 1e-9 * grid.h
    if shape == "indicator":
        v = on.astype(float)
    elif shape == "triangle":
        mid = 0.5 * (b_theta + grid.s_max)
        half = 0.5 * (grid.s_max - b_theta)
        v = np.where(on, 1.0 - 0.9 * np.abs(s - mid) / half, 0.0)
    else:
        raise ValueError(f"unknown initial shape {shape!r}")
    return v


def power_iterate(
    op: TransitionOperator,
    sigma: float,
    n: int = 4096,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    initial: str | np.ndarray = "indicator",
    grid: Grid1D | None = None,
) -> EigenResult:
    """Power method ``f <- Tf / |Tf|_1`` on the truncated domain.

    Stops when successive normalised iterates differ by less than ``tol``
    in L1 or when ``|Tf - rho f|_1 < tol``. Raises :class:`ConvergenceError`
    (carrying the last iterate) after ``max_iter`` steps.
    """
    thr = sigma_threshold(op)
    if not sigma > thr:
        raise DomainError(f"sigma = {sigma} must exceed max(b/(1-theta), 1) = {thr}")
    grid = grid or solver_grid(op, sigma, n)
    w = grid.weights
    K = op.matrix(grid)

    v = _initial(grid, op.b_theta, initial) if isinstance(initial, str) else np.asarray(initial, float).copy()
    if v.shape != (grid.n,) or np.any(v < 0) or not np.any(v > 0):
        raise ValueError("initial iterate must be nonnegative, nonzero and sized to the grid")
    v /= w @ v

    history = []
    rho = math.nan
    step = residual = math.inf
    for it in range(1, max_iter + 1):
        Tv = K @ v
        rho = float(w @ Tv)
        if rho <= 0:
            raise ConvergenceError("iterate collapsed to zero", math.inf)
        v_new = Tv / rho
        step = float(w @ np.abs(v_new - v))
        residual = rho * step  # |Tv - rho v|_1
        history.append(step)
        v = v_new
        if step < tol or residual < tol:
            f = GridFunction(grid, v)
            return EigenResult(rho, f, float(sigma), it, _residual(K, v, w), step, True, tuple(history))
    f = GridFunction(grid, v)
    res = EigenResult(rho, f, float(sigma), max_iter, _residual(K, v, w), step, False, tuple(history))
    raise ConvergenceError(f"power iteration did not converge in {max_iter} iterations", res.residual, res)


def _residual(K, v, w) -> float:
    Tv = K @ v
    rho = float(w @ Tv)
    return float(w @ np.abs(Tv - rho * v))


def fixed_point_residual(op: TransitionOperator, f: GridFunction) -> float:
    """|Tf - f|_1 on the grid of ``f``."""
    return (op.apply(f) - f).l1()


def rho_bounds(op: TransitionOperator, sigma: float) -> tuple[float, float]:
    """Lower and upper bounds for the truncated eigenvalue in terms of Psi."""
    if not sigma > op.b_theta:
        raise DomainError("sigma must exceed b_theta")
    psi = op.survivor.psi
    lower = 1.0 - float(psi((1.0 / op.eta - 1.0) * sigma))
    upper = 1.0 - float(psi(sigma / op.theta - op.b_theta))
    return lower, upper


def _psi_panel_integral(op: TransitionOperator, c: float, f: GridFunction) -> float:
    """int f(a) Psi(c - a) da over the grid for the piecewise-linear f.

    Panel integrals of Psi are exact; those of Psi_1 (a C^1 function) use
    8-point Gauss-Legendre.
    """
    g = f.grid
    a = g.nodes
    pair = op.survivor
    u = c - a
    psi1 = pair.psi_integral(u)
    xg, wg = np.polynomial.legendre.leggauss(8)
    lo, hi = u[1:], u[:-1]  # u decreases with a
    mid = 0.5 * (hi + lo)
    half = 0.5 * (hi - lo)
    uu = mid[:, None] + half[:, None] * xg[None, :]
    p2 = half * (pair.psi_integral(uu) @ wg)  # int_{lo}^{hi} Psi_1
    D1 = psi1[:-1] - psi1[1:]                 # int_{lo}^{hi} Psi
    h = g.h
    # f_k carries (u - lo)/h and f_{k+1} carries (hi - u)/h; int u Psi = [u Psi_1] - int Psi_1
    int_u_psi = psi1[:-1] * hi - psi1[1:] * lo - p2
    wk = (int_u_psi - lo * D1) / h
    wk1 = (hi * D1 - int_u_psi) / h
    v = f.values
    return float(wk @ v[:-1] + wk1 @ v[1:])


def rho_identity_residual(op: TransitionOperator, result: EigenResult) -> float:
    """Gap in the mass balance rho * int f = int f - sum_z w z int Psi(sigma/z - a) f(a) da.

    Both sides come from the same ``f``: the left through ``rho``, the right
    through the survivor mass escaping beyond ``sigma``.
    """
    f = result.f
    mass = f.integrate()
    if mass == 0:
        return 0.0
    zq, wq = op.quadrature()
    escape = sum(w * z * _psi_panel_integral(op, result.sigma / z, f) for z, w in zip(zq, wq))
    return abs(result.rho * mass - (mass - escape))


@dataclass(frozen=True)
class SweepRow:
    sigma: float
    rho: float
    one_minus_rho: float
    psi_lower: float
    diff_to_last: float | None
    iterations: int


def sigma_sweep(
    op: TransitionOperator,
    sigmas,
    h: float | None = None,
    n: int | None = None,
    tol: float = 1e-10,
    max_iter: int = 10_000,
) -> list[SweepRow]:
    """Solve for each sigma and compare every f_sigma with the one at the largest sigma.

    Grids share the spacing ``h`` (default: that of 2048 nodes on the
    largest sigma) unless a fixed node count ``n`` is given.
    """
    sigmas = [float(s) for s in sigmas]
    if not sigmas:
        return []
    if any(b < a for a, b in zip(sigmas, sigmas[1:])):
        raise ValueError("sigmas must be nondecreasing")
    if h is None and n is None:
        h = (sigmas[-1] - op.b_theta) / 2047
    results = {}
    for s in sigmas:
        if s in results:
            continue
        if n is not None:
            results[s] = power_iterate(op, s, n=n, tol=tol, max_iter=max_iter)
        else:
            m = max(int(round((s - op.b_theta) / h)) + 5, 16)
            results[s] = power_iterate(op, s, n=m, tol=tol, max_iter=max_iter)
    last = results[sigmas[-1]]
    rows = []
    for s in sigmas:
        r = results[s]
        diff = None
        if len(set(sigmas)) > 1:
            # compare on the common domain, reading f_last at f_sigma's nodes
            g = r.f.grid
            diff = float(g.weights @ np.abs(r.f.values - last.f.interpolate(g.nodes)))
        psi_lo = float(op.survivor.psi((1.0 / op.eta - 1.0) * s))
        rows.append(SweepRow(s, r.rho, 1.0 - r.rho, psi_lo, diff, r.iterations))
    return rows


def sweep_to_csv(rows: list[SweepRow], path) -> None:
    with open(path, "w") as fh:
        fh.write("sigma,rho,one_minus_rho,psi_lower,diff_to_last,iterations\n")
        for r in rows:
            diff = "" if r.diff_to_last is None else "%.17g" % r.diff_to_last
            fh.write("%.17g,%.17g,%.17g,%.17g,%s,%d\n"
                     % (r.sigma, r.rho, r.one_minus_rho, r.psi_lower, diff, r.iterations))
