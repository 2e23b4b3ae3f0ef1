"""Time-dependent population in (increment, birth size) coordinates.

With linear growth the birth size ``s = x - a`` is constant along a
lineage, so each s-line is a 1-D transport problem in ``a`` with speed
``a + s``, and lines only talk to each other through the birth condition
at ``a = 0``. The scheme stores ``v = x**2 m / Psi(a)`` with ``x = a + s``:

* the foot of the characteristic through ``a`` is ``(a + s) e^{-dt} - s``;
* along it ``v`` grows by exactly ``e^{dt}``: the division loss is the
  change of ``Psi`` and the dilution is the change of ``x**2``, so no
  quadrature in time is needed;
* ``v`` is constant in ``a`` for the stationary profile, which keeps the
  linear interpolation error away from the leading order;
* the a = 0 row is refilled from the mother-size flux, using the same
  product-integration weights of ``Phi`` as the stationary solver.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

import numpy as np
from scipy.optimize import curve_fit

from . import _backend
from .errors import ConfigError, DomainError
from .grid import FLOAT_FMT, Grid1D
from .operator import TransitionOperator, phi_weights
from .reconstruct import Density2D

DOMINATION_FLOOR = 1e-2
TRAJECTORY_COLUMNS = ("t", "weighted_mass", "H", "D", "dist_to_N", "domination_ratio")


@dataclass(frozen=True)
class PopulationState:
    """Snapshot ``m(t, a, s) = n(t, a, a + s)`` plus the mass removed by clipping so far."""

    t: float
    m: Density2D
    clipped_mass: float = 0.0
    steps: int = 0

    def __post_init__(self):
        if self.m.coordinate_system != "as":
            raise ValueError("population states live in (a, s) coordinates")

    def weighted_mass(self) -> float:
        return self.m.weighted_mass()

    def renormalized(self) -> Density2D:
        """The profile times e^{-t}."""
        return self.m * math.exp(-self.t)

    def domination_ratio(self, stationary: Density2D, floor: float = DOMINATION_FLOOR) -> float:
        """max of e^{-t} m / N where N exceeds ``floor`` times its maximum.

        The default skips the thin edge of the support, where the birth row
        of the scheme and the stationary solver differ by a fixed
        discretisation offset that is large relative to N itself.
        """
        N = stationary.values
        on = N > floor * N.max()
        if not on.any():
            return math.nan
        return float(np.max(self.renormalized().values[on] / N[on]))


@dataclass(frozen=True, eq=False)
class TransportScheme:
    """Semi-Lagrangian stepper bound to one operator, one (a, s) grid and one dt.

    ``births="explicit"`` fills the new a = 0 row from the flux of the state
    at the start of the step (first order in dt); ``"implicit"`` uses the
    freshly advected rows instead, which removes the O(dt) lag.
    """

    op: TransitionOperator
    a_grid: Grid1D
    s_grid: Grid1D
    dt: float
    backend: str | None = None
    births: str = "explicit"
    _psi: np.ndarray = field(init=False, repr=False)
    _omega: np.ndarray = field(init=False, repr=False)
    _y: np.ndarray = field(init=False, repr=False)
    _direct: bool = field(init=False, repr=False)

    def __post_init__(self):
        if self.a_grid.s_min != 0.0:
            raise ConfigError("the increment grid must start at a = 0")
        if self.s_grid.s_min < 0:
            raise ConfigError("birth sizes must be nonnegative")
        if self.births not in ("explicit", "implicit"):
            raise ConfigError("births must be 'explicit' or 'implicit'")
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        reach = (self.a_grid.s_max + self.s_grid.s_max) * math.expm1(self.dt)
        if reach > self.a_grid.h * (1.0 + 1e-12):
            raise ConfigError(
                f"dt = {self.dt:g} moves the fastest characteristic by {reach:.4g} > a-spacing "
                f"{self.a_grid.h:.4g}; lower dt or coarsen the a-grid")
        pair = self.op.survivor
        object.__setattr__(self, "_psi", pair.psi(self.a_grid.nodes))
        object.__setattr__(self, "_omega", phi_weights(pair, self.a_grid))
        zq, wq = self.op.quadrature()
        direct = zq.size <= 4
        if direct:
            y = (self.s_grid.nodes[None, :] / zq[:, None]).ravel()
        else:
            lo = self.s_grid.s_min / self.op.eta
            hi = self.s_grid.s_max / self.op.theta
            n = int(math.ceil((hi - lo) / (self.op.theta * self.s_grid.h))) + 1
            y = np.linspace(lo, hi, max(n, 2))
        object.__setattr__(self, "_y", y)
        object.__setattr__(self, "_direct", direct)

    # state <-> internal unknown -----------------------------------------
    def _scale(self) -> np.ndarray:
        x = self.a_grid.nodes[:, None] + self.s_grid.nodes[None, :]
        return x * x / np.where(self._psi > 1e-300, self._psi, np.inf)[:, None]

    def to_u(self, m: np.ndarray) -> np.ndarray:
        return np.ascontiguousarray(m * self._scale())

    def to_m(self, u: np.ndarray) -> np.ndarray:
        x = self.a_grid.nodes[:, None] + self.s_grid.nodes[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            m = u * self._psi[:, None] / (x * x)
        return np.where(x > 0, m, 0.0)

    def birth_row(self, u: np.ndarray) -> np.ndarray:
        """v(0, s) = s**2 m(0, s) from the division flux of every other row."""
        F = np.empty(self._y.size)
        sg = self.s_grid
        _backend.mother_flux(u, self._omega, sg.s_min, sg.h, self.a_grid.nodes, self._y, F,
                             backend=self.backend)
        zq, wq = self.op.quadrature()
        if self._direct:
            return wq @ F.reshape(zq.size, sg.n)
        s = sg.nodes
        return sum(w * np.interp(s / z, self._y, F) for z, w in zip(zq, wq))

    def advance(self, u: np.ndarray) -> tuple[np.ndarray, float]:
        """One step on the internal unknown; returns (u_new, clipped mass in m units)."""
        u_new = np.empty_like(u)
        _backend.advect(u, u_new, 0.0, self.a_grid.h, self.s_grid.nodes, self.dt, math.exp(self.dt),
                        backend=self.backend)
        if self.births == "explicit":
            u_new[0] = self.birth_row(u)
        else:
            u_new[0] = u[0]
            u_new[0] = self.birth_row(u_new)
        clipped = 0.0
        if (u_new < 0).any():
            neg = np.minimum(u_new, 0.0)
            clipped = -float(self.a_grid.weights @ self.to_m(neg) @ self.s_grid.weights)
            np.maximum(u_new, 0.0, out=u_new)
        return u_new, clipped

    def density(self, values: np.ndarray, **meta) -> Density2D:
        return Density2D("as", self.a_grid, self.s_grid, values, 1.0, meta)

    def step(self, state: PopulationState) -> PopulationState:
        self._check_state(state)
        u, clipped = self.advance(self.to_u(state.m.values))
        return PopulationState(state.t + self.dt, self.density(self.to_m(u)),
                               state.clipped_mass + clipped, state.steps + 1)

    def _check_state(self, state: PopulationState):
        if (state.m.a_grid, state.m.second_grid) != (self.a_grid, self.s_grid):
            raise ValueError("state grid does not match the scheme")


def step(state: PopulationState, dt: float, op: TransitionOperator, backend: str | None = None) -> PopulationState:
    """Single transport step; builds a throwaway scheme (use TransportScheme in loops)."""
    scheme = TransportScheme(op, state.m.a_grid, state.m.second_grid, dt, backend)
    return scheme.step(state)


Observer = Callable[[PopulationState], dict]


@dataclass
class Trajectory:
    rows: list[dict] = field(default_factory=list)
    final: PopulationState | None = None

    def column(self, name: str) -> np.ndarray:
        return np.array([r.get(name, math.nan) for r in self.rows], dtype=float)

    def to_csv(self, path, columns: Iterable[str] = TRAJECTORY_COLUMNS) -> None:
        columns = list(columns)
        extra = sorted({k for r in self.rows for k in r} - set(columns))
        columns += extra
        with open(path, "w", newline="") as fh:
            fh.write(",".join(columns) + "\n")
            for r in self.rows:
                fh.write(",".join(FLOAT_FMT % r.get(c, math.nan) for c in columns) + "\n")

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            rows = [{k: float(v) for k, v in r.items()} for r in reader]
        return cls(rows)


def run(
    initial: PopulationState,
    t_end: float,
    scheme: TransportScheme,
    observers: Iterable[Observer] = (),
    every: int = 1,
    snapshot: Callable[[PopulationState], None] | None = None,
    snapshot_every: int = 0,
) -> Trajectory:
    """Step from ``initial`` to ``t_end``, calling observers every ``every`` steps."""
    scheme._check_state(initial)
    observers = list(observers)
    n_steps = int(round((t_end - initial.t) / scheme.dt))
    if n_steps < 0:
        raise DomainError("t_end lies before the initial time")

    def record(state):
        row = {"t": state.t, "weighted_mass": state.weighted_mass(), "clipped_mass": state.clipped_mass}
        for ob in observers:
            row.update(ob(state))
        traj.rows.append(row)

    traj = Trajectory()
    state = initial
    record(state)
    if snapshot is not None and snapshot_every:
        snapshot(state)
    u = scheme.to_u(initial.m.values)
    t0, clipped = initial.t, initial.clipped_mass
    for k in range(1, n_steps + 1):
        u, c = scheme.advance(u)
        clipped += c
        want_row = k % every == 0 or k == n_steps
        want_snap = snapshot is not None and snapshot_every and k % snapshot_every == 0
        if want_row or want_snap:
            state = PopulationState(t0 + k * scheme.dt, scheme.density(scheme.to_m(u)), clipped,
                                    initial.steps + k)
            if want_row:
                record(state)
            if want_snap:
                snapshot(state)
    if n_steps == 0:
        state = initial
    traj.final = state
    return traj


# observers ----------------------------------------------------------------


def distance_observer(stationary: Density2D) -> Observer:
    """L1(x da dx) distance between e^{-t} n and N, plus the domination ratio."""
    x = stationary.size_values()

    def ob(state: PopulationState) -> dict:
        diff = np.abs(state.renormalized().values - stationary.values)
        return {"dist_to_N": stationary.integrate(x * diff),
                "domination_ratio": state.domination_ratio(stationary)}

    return ob


def entropy_observer(cfg, with_dissipation: bool = True) -> Observer:
    """H and D of e^{-t} n for an :class:`~adderfrag.entropy.EntropyConfig`.

    The nu_x mass is not enforced here; its worst deviation from 1 over the
    checked sizes goes into the ``nu_mass_error`` column instead.
    """
    from .entropy import dissipation_report, entropy

    def ob(state: PopulationState) -> dict:
        n = state.renormalized()
        row = {"H": entropy(cfg, n)}
        if with_dissipation:
            rep = dissipation_report(cfg, n, check_mass=False)
            row["D"] = rep.value
            row["nu_mass_error"] = rep.mass_error
        return row

    return ob


def window_observer(x_lo: float, x_hi: float, name: str = "window") -> Observer:
    """e^{-t} times the x-weighted mass with size in [x_lo, x_hi]."""

    def ob(state: PopulationState) -> dict:
        m = state.m
        x = m.size_values()
        inside = (x >= x_lo) & (x <= x_hi)
        return {name: math.exp(-state.t) * m.integrate(np.where(inside, x * m.values, 0.0))}

    return ob


# initial conditions -------------------------------------------------------


def stationary_profile(op: TransitionOperator, a_grid: Grid1D, s_grid: Grid1D, tol: float = 1e-12) -> Density2D:
    """Stationary M on the transport grid from the truncated fixed point on ``s_grid``."""
    from .eigensolver import power_iterate
    from .reconstruct import build_M

    res = power_iterate(op, s_grid.s_max, grid=s_grid, tol=tol)
    M = build_M(res.f, op.survivor, a_grid)
    return replace(M, meta={**M.meta, "rho": res.rho})


def initial_state(kind: str, stationary: Density2D, amplitude: float = 0.5, center: float | None = None,
                  width: float | None = None) -> PopulationState:
    """Named initial data built on the stationary profile.

    ``stationary``  n0 = N
    ``perturbed``   n0 = N (1 + amplitude sin(2 pi (s - s_min) / (s_max - s_min)))
    ``bump``        n0 = N times a Gaussian in s, rescaled to the weighted mass of N
    ``zero``        n0 = 0
    """
    N = stationary
    s = N.second_grid.nodes[None, :]
    if kind == "stationary":
        vals = N.values
    elif kind == "perturbed":
        if not 0 <= amplitude < 1:
            raise ConfigError("perturbation amplitude must lie in [0, 1)")
        g = N.second_grid
        vals = N.values * (1.0 + amplitude * np.sin(2.0 * np.pi * (s - g.s_min) / g.length))
    elif kind == "bump":
        g = N.second_grid
        c = center if center is not None else g.s_min + 0.25 * g.length
        w = width if width is not None else 0.05 * g.length
        vals = N.values * np.exp(-0.5 * ((s - c) / w) ** 2)
        scale = N.weighted_mass() / N.with_values(vals).weighted_mass()
        vals = vals * scale
    elif kind == "zero":
        vals = np.zeros_like(N.values)
    else:
        raise ConfigError(f"unknown initial condition {kind!r}")
    return PopulationState(0.0, N.with_values(vals, normalization=1.0))


# spectral diagnostics -----------------------------------------------------


@dataclass(frozen=True)
class SpectralDiagnostics:
    oscillation_period: float
    expected_period: float
    damping: float
    amplitude: float
    detected: bool

    @property
    def relative_error(self) -> float:
        return abs(self.oscillation_period - self.expected_period) / self.expected_period


def estimate_period(t, signal, t_min: float = 0.0, expected: float = math.log(2.0)) -> SpectralDiagnostics:
    """Fit ``c0 + c1 e^{-k t} + A e^{-g t} cos(2 pi t / P + phase)`` to the signal after ``t_min``.

    The starting period comes from mean crossings of the detrended signal;
    the fit is restarted from several phases and the best residual wins.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(signal, dtype=float)
    keep = t >= t_min
    t, y = t[keep], y[keep]
    failed = SpectralDiagnostics(math.nan, expected, math.nan, 0.0, False)
    if t.size < 8:
        return failed
    d = y - np.polyval(np.polyfit(t, y, 3), t)
    sign = np.signbit(d)
    cross = np.nonzero(sign[1:] != sign[:-1])[0]
    if cross.size < 3:
        return failed
    tc = t[cross] - d[cross] * (t[cross + 1] - t[cross]) / (d[cross + 1] - d[cross])
    p0 = 2.0 * float(np.median(np.diff(tc)))
    t0 = t[0]

    def model(tt, c0, c1, k, A, g, P, ph):
        s = tt - t0
        return c0 + c1 * np.exp(-k * s) + A * np.exp(-g * s) * np.cos(2 * np.pi * s / P + ph)

    lower = [-np.inf, -np.inf, 0.0, 0.0, 0.0, 0.5 * p0, -np.inf]
    upper = [np.inf, np.inf, 50.0, np.inf, 20.0, 2.0 * p0, np.inf]
    best = None
    for ph in np.linspace(0.0, 2 * np.pi, 8, endpoint=False):
        guess = [y[-1], y[0] - y[-1], 1.0, float(np.abs(d).max()), 0.3, p0, ph]
        try:
            popt, _ = curve_fit(model, t, y, p0=guess, bounds=(lower, upper), maxfev=20000)
        except (RuntimeError, ValueError):
            continue
        err = float(np.sum((model(t, *popt) - y) ** 2))
        if best is None or err < best[0]:
            best = (err, popt)
    if best is None:
        return SpectralDiagnostics(p0, expected, math.nan, float(np.abs(d).max()), True)
    popt = best[1]
    if popt[3] <= 1e-9 * float(np.abs(y).max()):
        # crossings came from detrending residue, not from an oscillation
        return failed
    return SpectralDiagnostics(float(popt[5]), expected, float(popt[4]), float(popt[3]), True)
