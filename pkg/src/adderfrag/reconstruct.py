"""Two-dimensional stationary profiles built from the birth-size fixed point.

``M(a, s) = C * Psi(a) f(s) / (a + s)**2`` on an (increment, birth size)
grid and ``N(a, x) = M(a, x - a)`` on an (increment, size) grid. ``C``
makes the total integral 1.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .errors import DomainError
from .grid import FLOAT_FMT, Grid1D, GridFunction
from .model import DivisionRate, SurvivorPair
from .operator import TransitionOperator, phi_weights

COORDS = {"as": "s", "ax": "x"}


@dataclass(frozen=True)
class Density2D:
    """Values on a tensor grid: rows are increments ``a``, columns birth size ``s`` or size ``x``."""

    coordinate_system: str
    a_grid: Grid1D
    second_grid: Grid1D
    values: np.ndarray
    normalization: float = 1.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.coordinate_system not in COORDS:
            raise ValueError(f"coordinate system must be one of {sorted(COORDS)}")
        v = np.array(self.values, dtype=float)
        if v.shape != (self.a_grid.n, self.second_grid.n):
            raise ValueError(f"values shape {v.shape} does not match grids")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def second_name(self) -> str:
        return COORDS[self.coordinate_system]

    def size_values(self) -> np.ndarray:
        """Cell size x at every node."""
        a = self.a_grid.nodes[:, None]
        y = self.second_grid.nodes[None, :]
        return np.broadcast_to(a + y if self.coordinate_system == "as" else y, self.values.shape)

    def weights(self) -> np.ndarray:
        return np.outer(self.a_grid.weights, self.second_grid.weights)

    def integrate(self, values: np.ndarray | None = None) -> float:
        v = self.values if values is None else values
        return float(self.a_grid.weights @ v @ self.second_grid.weights)

    def weighted_mass(self) -> float:
        """Integral of x times the density."""
        return self.integrate(self.values * self.size_values())

    def with_values(self, values, **changes) -> "Density2D":
        return Density2D(self.coordinate_system, self.a_grid, self.second_grid, values,
                         changes.get("normalization", self.normalization), dict(self.meta))

    def __mul__(self, c: float) -> "Density2D":
        return self.with_values(self.values * float(c))

    __rmul__ = __mul__

    def row_at_size(self, y: np.ndarray, values: np.ndarray | None = None) -> np.ndarray:
        """Values at (a_k, size y) for every row k, zero outside the grid; shape (na, len(y))."""
        v = self.values if values is None else values
        g = self.second_grid
        y = np.atleast_1d(np.asarray(y, dtype=float))
        shift = self.a_grid.nodes[:, None] if self.coordinate_system == "as" else 0.0
        t = np.broadcast_to((y[None, :] - shift - g.s_min) / g.h, (self.a_grid.n, y.size))
        inside = (t >= 0) & (t <= g.n - 1)
        i = np.clip(np.floor(t).astype(np.int64), 0, g.n - 2)
        frac = np.clip(t - i, 0.0, 1.0)
        rows = np.broadcast_to(np.arange(self.a_grid.n)[:, None], t.shape)
        out = (1.0 - frac) * v[rows, i] + frac * v[rows, i + 1]
        return np.where(inside, out, 0.0)

    # serialization ------------------------------------------------------
    def header(self) -> dict:
        def g(grid):
            return {"min": grid.s_min, "max": grid.s_max, "n": grid.n}
        return {
            "coordinate_system": self.coordinate_system,
            "columns": ["a", self.second_name, "value"],
            "a_grid": g(self.a_grid),
            f"{self.second_name}_grid": g(self.second_grid),
            "normalization": self.normalization,
            **{k: v for k, v in self.meta.items()},
        }

    def to_csv(self, path) -> str:
        """Write long-form ``a,<s|x>,value`` CSV and a JSON header next to it; returns the header path."""
        path = os.fspath(path)
        a = self.a_grid.nodes
        y = self.second_grid.nodes
        with open(path, "w", newline="") as fh:
            fh.write(f"a,{self.second_name},value\n")
            for i in range(a.size):
                ai = FLOAT_FMT % a[i]
                fh.writelines(f"{ai},{FLOAT_FMT % y[j]},{FLOAT_FMT % self.values[i, j]}\n"
                              for j in range(y.size))
        head = os.path.splitext(path)[0] + ".json"
        with open(head, "w") as fh:
            json.dump(self.header(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return head

    @classmethod
    def from_csv(cls, path) -> "Density2D":
        path = os.fspath(path)
        with open(os.path.splitext(path)[0] + ".json") as fh:
            head = json.load(fh)
        cs = head["coordinate_system"]
        ag = Grid1D(head["a_grid"]["min"], head["a_grid"]["max"], head["a_grid"]["n"])
        sg_h = head[f"{COORDS[cs]}_grid"]
        sg = Grid1D(sg_h["min"], sg_h["max"], sg_h["n"])
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            vals = np.array([float(r[2]) for r in reader])
        known = {"coordinate_system", "columns", "a_grid", f"{COORDS[cs]}_grid", "normalization"}
        meta = {k: v for k, v in head.items() if k not in known}
        return cls(cs, ag, sg, vals.reshape(ag.n, sg.n), head["normalization"], meta)


# --------------------------------------------------------------------------


def default_a_grid(survivor: SurvivorPair, n: int = 2048, psi_floor: float = 1e-8,
                   a_cap: float = 100.0) -> Grid1D:
    """Grid on [0, A] with Psi(A) < psi_floor when reachable below ``a_cap``; b is a node when b > 0."""
    b = survivor.b
    lam = -math.log(psi_floor)
    A = float(survivor.inverse_cumulative_hazard(lam))
    A = min(max(A, 2.0 * b, 1.0), a_cap)
    if b > 0:
        h0 = A / (n - 1)
        per_b = max(1, int(round(b / h0)))
        h = b / per_b
        A = h * (n - 1)
    return Grid1D(0.0, A, n)


def build_M(f: GridFunction, survivor, a_grid: Grid1D | None = None, s_floor: float = 0.0) -> Density2D:
    """Normalised M(a, s) = C Psi(a) f(s) / (a + s)**2 on ``a_grid`` x grid of f.

    Columns with ``s < s_floor`` (and the node a = s = 0) are set to zero;
    the mass they would carry is not recovered.
    """
    pair = survivor if isinstance(survivor, SurvivorPair) else SurvivorPair.from_rate(survivor)
    if np.any(f.values < 0):
        raise DomainError("build_M needs a nonnegative f")
    a_grid = a_grid or default_a_grid(pair)
    a = a_grid.nodes[:, None]
    s = f.grid.nodes[None, :]
    x = a + s
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = pair.psi(a) * f.values[None, :] / (x * x)
    raw = np.where((x > 0) & (s >= s_floor), raw, 0.0)
    total = float(a_grid.weights @ raw @ f.grid.weights)
    if not total > 0:
        raise ZeroDivisionError("cannot normalise: f carries no mass on the grid")
    A = a_grid.s_max
    # mass beyond A: int_A^inf Psi/(a+s)^2 da <= Psi(A) / (A + s)
    tail = float(pair.psi(A)) * float(f.grid.weights @ (f.values / (A + f.grid.nodes)))
    meta = {"truncation_bound": tail / total, "a_max": A, "psi_at_a_max": float(pair.psi(A))}
    return Density2D("as", a_grid, f.grid, raw / total, 1.0 / total, meta)


def build_N(m: Density2D, x_grid: Grid1D | None = None, max_nodes: int = 4096) -> Density2D:
    """Shear M(a, s) onto (a, x) coordinates, N(a, x) = M(a, x - a), zero where x - a is off-grid."""
    if m.coordinate_system != "as":
        raise ValueError("build_N expects (a, s) coordinates")
    sg = m.second_grid
    if x_grid is None:
        x_hi = m.a_grid.s_max + sg.s_max
        n = int(round((x_hi - sg.s_min) / sg.h)) + 1
        if n > max_nodes:
            n = max_nodes
        x_grid = Grid1D(sg.s_min, x_hi, n)
    vals = m.row_at_size(x_grid.nodes)
    meta = dict(m.meta)
    return Density2D("ax", m.a_grid, x_grid, vals, m.normalization, meta)


def as_density(m: Density2D, s_grid: Grid1D) -> Density2D:
    """Resample an (a, x) density back to (a, s) coordinates on ``s_grid``."""
    if m.coordinate_system == "as":
        return m
    s = s_grid.nodes[None, :]
    a = m.a_grid.nodes[:, None]
    x = a + s
    g = m.second_grid
    t = (x - g.s_min) / g.h
    inside = (t >= 0) & (t <= g.n - 1)
    i = np.clip(np.floor(t).astype(np.int64), 0, g.n - 2)
    frac = np.clip(t - i, 0.0, 1.0)
    rows = np.broadcast_to(np.arange(m.a_grid.n)[:, None], t.shape)
    vals = np.where(inside, (1 - frac) * m.values[rows, i] + frac * m.values[rows, i + 1], 0.0)
    return Density2D("as", m.a_grid, s_grid, vals, m.normalization, dict(m.meta))


def _unscaled(m: Density2D, survivor: SurvivorPair) -> np.ndarray:
    """Values divided by Psi(a): smooth across the division-rate jump."""
    psi = survivor.psi(m.a_grid.nodes)
    safe = np.where(psi > 1e-300, psi, 1.0)
    return np.where(psi[:, None] > 1e-300, m.values / safe[:, None], 0.0)


def birth_flux(m: Density2D, op: TransitionOperator, sizes: np.ndarray, values: np.ndarray | None = None) -> np.ndarray:
    """Right-hand side of the birth condition at the given sizes.

    ``sum_z w(z) / z**2 * int B(a) m(a, x/z) da`` with the a-integral done by
    product integration of Phi against m / Psi.
    """
    pair = op.survivor
    vals = m.values if values is None else values
    U = _unscaled(m.with_values(vals), pair)
    omega = phi_weights(pair, m.a_grid)
    zq, wq = op.quadrature()
    sizes = np.asarray(sizes, dtype=float)
    y = (sizes[None, :] / zq[:, None]).ravel()
    F = np.empty(y.size)
    g = m.second_grid
    shift = m.a_grid.nodes if m.coordinate_system == "as" else np.zeros(m.a_grid.n)
    _backend.mother_flux(np.ascontiguousarray(U), omega, g.s_min, g.h, shift, y, F, backend=op.backend)
    F = F.reshape(zq.size, sizes.size)
    return (wq / zq**2) @ F


def boundary_residual(m: Density2D, op: TransitionOperator) -> float:
    """L1 gap, over the second coordinate, between the a = 0 row and the birth flux."""
    y = m.second_grid.nodes
    lhs = m.values[0]
    rhs = birth_flux(m, op, y)
    return float(m.second_grid.weights @ np.abs(lhs - rhs))


def transport_residual(m: Density2D, rate, form: str = "primitive", exclude: float = 2.0) -> float:
    """Finite-difference residual of the stationary transport equation in a, in L1.

    ``primitive``: d/da((a+s) M) + (1 + (a+s) B) M.
    ``conservative``: d/da((a+s)**2 M) + (a+s)**2 B M (growth factor removed).
    Nodes within ``exclude * h`` of the jump of B are left out.
    """
    r = rate.rate if isinstance(rate, SurvivorPair) else rate
    if not isinstance(r, DivisionRate):
        raise TypeError("rate must be a DivisionRate or SurvivorPair")
    if m.coordinate_system != "as":
        raise ValueError("transport_residual works along s-lines; convert with as_density")
    a = m.a_grid.nodes
    h = m.a_grid.h
    x = a[:, None] + m.second_grid.nodes[None, :]
    B = r(a)[:, None]
    M = m.values
    if form == "primitive":
        R = np.gradient(x * M, h, axis=0) + (1.0 + x * B) * M
    elif form == "conservative":
        R = np.gradient(x * x * M, h, axis=0) + x * x * B * M
    else:
        raise ValueError(f"unknown form {form!r}")
    keep = np.abs(a - r.b) > exclude * h
    if r.form == "tabulated":
        for t in r.table_a:
            keep &= np.abs(a - t) > exclude * h
    wa = m.a_grid.weights * keep
    return float(wa @ np.abs(R) @ m.second_grid.weights)
