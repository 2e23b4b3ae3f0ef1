"""General relative entropy, its dissipation and the birth measures nu_x.

For a stationary profile ``N`` and a perturbation ``n`` on the same grid::

    H[n] = int int x N H(n / N) da dx
    D[n] = int x**2 N(0, x) * (mean of H(r) under nu_x - H(mean of r under nu_x)) dx

with ``r = n / N`` read at (a, x/z) and ``nu_x`` the birth measure at size x.
``nu_x`` is renormalised before the Jensen gap is taken, so ``D >= 0`` holds
exactly (up to rounding) for convex ``H``; its raw mass is reported apart.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _backend
from .errors import DomainError
from .operator import TransitionOperator, phi_weights
from .reconstruct import Density2D, _unscaled

RATIO_FLOOR = 1e-12


@dataclass(frozen=True)
class HFunction:
    """Scalar convex function with a name, vectorised over numpy arrays."""

    name: str
    fn: Callable[[np.ndarray], np.ndarray] = field(compare=False)
    convex: bool = True

    def __call__(self, x):
        return self.fn(np.asarray(x, dtype=float))


def h_identity() -> HFunction:
    return HFunction("identity", lambda x: x)


def h_abs() -> HFunction:
    return HFunction("abs", lambda x: np.abs(1.0 - x))


def h_quadratic() -> HFunction:
    return HFunction("quadratic", lambda x: (1.0 - x) ** 2)


def h_tabulated(xs, hs, name: str = "tabulated") -> HFunction:
    """Piecewise-linear H through the points (xs, hs), extended linearly.

    Rejected unless every node passes the discrete midpoint-convexity check.
    """
    xs = np.asarray(xs, dtype=float)
    hs = np.asarray(hs, dtype=float)
    if xs.ndim != 1 or xs.shape != hs.shape or xs.size < 2:
        raise ValueError("tabulated H needs matching 1-D arrays with >= 2 points")
    if np.any(np.diff(xs) <= 0):
        raise ValueError("tabulated H abscissae must be strictly increasing")
    slopes = np.diff(hs) / np.diff(xs)
    if np.any(np.diff(slopes) < -1e-12 * (1.0 + np.abs(slopes[1:]))):
        raise DomainError("tabulated H fails the midpoint convexity check")

    def fn(x):
        inner = np.interp(x, xs, hs)
        left = hs[0] + slopes[0] * (x - xs[0])
        right = hs[-1] + slopes[-1] * (x - xs[-1])
        return np.where(x < xs[0], left, np.where(x > xs[-1], right, inner))

    return HFunction(name, fn)


H_LIBRARY = {"identity": h_identity, "abs": h_abs, "quadratic": h_quadratic}


def get_h(name: str) -> HFunction:
    try:
        return H_LIBRARY[name]()
    except KeyError:
        raise ValueError(f"unknown H {name!r}; choose from {sorted(H_LIBRARY)} or use h_tabulated") from None


@dataclass(frozen=True)
class EntropyConfig:
    """Entropy setup: convex ``h``, stationary profile and the operator that defines nu_x.

    ``domination`` is the constant C in ``|n| <= C N``; ratios above it raise
    a warning; the check skips cells where N is below ``domination_floor``
    times its maximum. ``cutoff`` optionally restricts the x-integral of D
    to a window.
    """

    h: HFunction
    stationary: Density2D
    op: TransitionOperator
    domination: float | None = None
    cutoff: tuple[float, float] | None = None
    floor: float = RATIO_FLOOR
    domination_floor: float = 1e-2

    def _support(self) -> np.ndarray:
        N = self.stationary.values
        return N > self.floor * N.max()


@dataclass(frozen=True)
class EntropyReport:
    value: float
    max_ratio: float
    domination_ok: bool


def _check_grid(cfg: EntropyConfig, n: Density2D):
    N = cfg.stationary
    if (n.coordinate_system, n.a_grid, n.second_grid) != (N.coordinate_system, N.a_grid, N.second_grid):
        raise ValueError("n and N must live on the same grid")


def _ratio(cfg: EntropyConfig, n: Density2D) -> tuple[np.ndarray, np.ndarray]:
    on = cfg._support()
    N = cfg.stationary.values
    r = np.zeros_like(N)
    np.divide(n.values, N, out=r, where=on)
    return r, on


def entropy_report(cfg: EntropyConfig, n: Density2D) -> EntropyReport:
    _check_grid(cfg, n)
    r, on = _ratio(cfg, n)
    N = cfg.stationary
    integrand = np.where(on, N.size_values() * N.values * cfg.h(r), 0.0)
    value = N.integrate(integrand)
    core = N.values > cfg.domination_floor * N.values.max()
    max_ratio = float(np.abs(r[core]).max()) if core.any() else 0.0
    ok = cfg.domination is None or max_ratio <= cfg.domination * (1.0 + 1e-9)
    if not ok:
        warnings.warn(f"|n/N| reaches {max_ratio:.4g} > domination constant {cfg.domination:.4g}",
                      RuntimeWarning, stacklevel=3)
    return EntropyReport(value, max_ratio, ok)


def entropy(cfg: EntropyConfig, n: Density2D) -> float:
    """H[n]: x N H(n/N) integrated where N is above the relative floor."""
    return entropy_report(cfg, n).value


def _x_nodes(cfg: EntropyConfig) -> tuple[np.ndarray, np.ndarray]:
    """Sizes for the outer integral (the second grid) with trapezoid weights."""
    g = cfg.stationary.second_grid
    x = g.nodes
    w = g.weights.copy()
    if cfg.cutoff is not None:
        lo, hi = cfg.cutoff
        w = np.where((x >= lo) & (x <= hi), w, 0.0)
    return x, w


def _nu_sums(cfg: EntropyConfig, x: np.ndarray, fields: list[np.ndarray]) -> list[np.ndarray]:
    """For each field G, sum over (a, z) of w/z**2 * omega_a * G(a, x/z) at every x."""
    N = cfg.stationary
    op = cfg.op
    omega = phi_weights(op.survivor, N.a_grid)
    zq, wq = op.quadrature()
    y = (x[None, :] / zq[:, None]).ravel()
    g = N.second_grid
    shift = N.a_grid.nodes if N.coordinate_system == "as" else np.zeros(N.a_grid.n)
    out = []
    for G in fields:
        F = np.empty(y.size)
        _backend.mother_flux(np.ascontiguousarray(G), omega, g.s_min, g.h, shift, y, F, backend=op.backend)
        out.append((wq / zq**2) @ F.reshape(zq.size, x.size))
    return out


def _boundary_row(cfg: EntropyConfig, x: np.ndarray) -> np.ndarray:
    """N(0, x) read from the a = 0 row."""
    N = cfg.stationary
    return np.interp(x, N.second_grid.nodes, N.values[0], left=0.0, right=0.0)


def nu_x_mass(cfg: EntropyConfig, x) -> np.ndarray | float:
    """Total mass of nu_x; NaN where N(0, x) vanishes (measure undefined)."""
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    pair = cfg.op.survivor
    U = _unscaled(cfg.stationary, pair)
    (num,) = _nu_sums(cfg, xs, [U])
    den = _boundary_row(cfg, xs)
    floor = cfg.floor * cfg.stationary.values[0].max()
    out = np.where(den > floor, num / np.where(den > floor, den, 1.0), np.nan)
    return float(out[0]) if np.ndim(x) == 0 else out


@dataclass(frozen=True)
class DissipationReport:
    value: float
    gap: np.ndarray = field(repr=False)
    nu_mass: np.ndarray = field(repr=False)
    x: np.ndarray = field(repr=False)
    mass_error: float = 0.0


def dissipation_report(cfg: EntropyConfig, n: Density2D, mass_tol: float = 1e-2,
                       check_mass: bool = False, mass_floor: float = 1e-2) -> DissipationReport:
    """Jensen-gap integral plus per-size diagnostics.

    ``mass_error`` is the worst deviation of the nu_x mass from 1 over sizes
    where N(0, x) exceeds ``mass_floor`` times its maximum. Within a few
    cells of the left edge of the support N(0, x) vanishes to high order and
    that ratio is dominated by interpolation error, so raising on it
    (``check_mass=True``) is opt-in.
    """
    _check_grid(cfg, n)
    pair = cfg.op.survivor
    r, on = _ratio(cfg, n)
    U = np.where(on, _unscaled(cfg.stationary, pair), 0.0)
    V = U * r
    G = U * cfg.h(r)
    x, wx = _x_nodes(cfg)
    SU, SV, SG = _nu_sums(cfg, x, [U, V, G])
    N0 = _boundary_row(cfg, x)
    live = (SU > 0) & (N0 > cfg.floor * cfg.stationary.values[0].max())
    safe = np.where(live, SU, 1.0)
    gap = np.where(live, SG / safe - cfg.h(SV / safe), 0.0)
    nu = np.where(live, SU / np.where(live, N0, 1.0), np.nan)
    # only sizes whose mothers (x / theta) stay on the grid carry a full measure
    inside = x / cfg.op.theta <= cfg.stationary.second_grid.s_max
    checked = live & inside & (N0 > mass_floor * N0.max()) & (wx > 0)
    err = np.abs(nu - 1.0)
    mass_error = float(err[checked].max()) if checked.any() else 0.0
    if check_mass:
        bad = checked & (err > mass_tol)
        if bad.any():
            i = int(np.argmax(np.where(bad, np.abs(nu - 1.0), -1.0)))
            raise DomainError(f"nu_x has mass {nu[i]:.6g} at x = {x[i]:.6g}; stationary profile and "
                              f"birth condition disagree beyond {mass_tol:g}")
    value = float(wx @ (x * x * N0 * gap))
    return DissipationReport(value, gap, nu, x, mass_error)


def dissipation(cfg: EntropyConfig, n: Density2D) -> float:
    """D[n]: size-weighted Jensen gap of H under the normalised nu_x."""
    return dissipation_report(cfg, n).value
