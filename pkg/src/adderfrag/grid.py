"""Uniform 1-D grids, trapezoid quadrature and piecewise-linear grid functions."""
from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DomainError

FLOAT_FMT = "%.17g"


@dataclass(frozen=True)
class Grid1D:
    """Uniform partition of ``[s_min, s_max]`` with ``n`` nodes."""

    s_min: float
    s_max: float
    n: int

    def __post_init__(self):
        object.__setattr__(self, "s_min", float(self.s_min))
        object.__setattr__(self, "s_max", float(self.s_max))
        object.__setattr__(self, "n", int(self.n))
        if self.n < 2:
            raise ValueError("a grid needs at least two nodes")
        if not self.s_max > self.s_min:
            raise ValueError(f"empty interval [{self.s_min}, {self.s_max}]")

    @classmethod
    def anchored(cls, anchor: float, s_max: float, n: int, guard: int = 4) -> "Grid1D":
        """Grid ending at ``s_max`` with ``anchor`` as a node and up to ``guard`` nodes below it.

        Guard nodes are dropped when they would cross 0.
        """
        if not s_max > anchor >= 0:
            raise ValueError("need 0 <= anchor < s_max")
        guard = max(int(guard), 0)
        h = (s_max - anchor) / (n - 1 - guard)
        guard = min(guard, int(np.floor(anchor / h + 1e-9)))
        h = (s_max - anchor) / (n - 1 - guard)
        return cls(anchor - guard * h, s_max, n)

    @property
    def h(self) -> float:
        return (self.s_max - self.s_min) / (self.n - 1)

    @property
    def length(self) -> float:
        return self.s_max - self.s_min

    @cached_property
    def nodes(self) -> np.ndarray:
        x = self.s_min + self.h * np.arange(self.n)
        x[-1] = self.s_max
        x.setflags(write=False)
        return x

    @cached_property
    def weights(self) -> np.ndarray:
        w = np.full(self.n, self.h)
        w[0] = w[-1] = 0.5 * self.h
        w.setflags(write=False)
        return w

    def index_of(self, s: float, tol: float = 1e-9) -> int | None:
        """Index of the node equal to ``s`` (relative tolerance ``tol`` of h), else None."""
        k = int(round((s - self.s_min) / self.h))
        if 0 <= k < self.n and abs(self.nodes[k] - s) <= tol * self.h:
            return k
        return None

    def refine(self) -> "Grid1D":
        """Halve the spacing, keeping every node: n -> 2n - 1."""
        return Grid1D(self.s_min, self.s_max, 2 * self.n - 1)


def trapz(values: np.ndarray, h: float, axis: int = -1) -> np.ndarray:
    """Composite trapezoid with uniform spacing along ``axis``."""
    v = np.moveaxis(np.asarray(values, dtype=float), axis, -1)
    return h * (v.sum(axis=-1) - 0.5 * (v[..., 0] + v[..., -1]))


@dataclass(frozen=True)
class GridFunction:
    """Nodal values on a :class:`Grid1D`, read as the piecewise-linear interpolant."""

    grid: Grid1D
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.n,):
            raise ValueError(f"expected {self.grid.n} values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid function values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_callable(cls, grid: Grid1D, fn) -> "GridFunction":
        return cls(grid, np.asarray(fn(grid.nodes), dtype=float) * np.ones(grid.n))

    @classmethod
    def indicator(cls, grid: Grid1D, lo: float, hi: float) -> "GridFunction":
        x = grid.nodes
        eps = 1e-9 * grid.h
        return cls(grid, ((x >= lo - eps) & (x <= hi + eps)).astype(float))

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.nodes

    def _same_grid(self, other: "GridFunction") -> None:
        if other.grid != self.grid:
            raise ValueError("grid functions live on different grids")

    def __add__(self, other: "GridFunction") -> "GridFunction":
        self._same_grid(other)
        return GridFunction(self.grid, self.values + other.values)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        self._same_grid(other)
        return GridFunction(self.grid, self.values - other.values)

    def __mul__(self, c: float) -> "GridFunction":
        return GridFunction(self.grid, self.values * float(c))

    __rmul__ = __mul__

    def integrate(self) -> float:
        return float(self.grid.weights @ self.values)

    def l1(self) -> float:
        return float(self.grid.weights @ np.abs(self.values))

    def normalized(self) -> "GridFunction":
        m = self.integrate()
        if m == 0:
            raise ZeroDivisionError("cannot normalise a function with zero integral")
        return self * (1.0 / m)

    def weighted_norm(self, k: float = 0.0, l: float = 0.0) -> float:
        """Trapezoid value of the integral of |f| (s**k + s**l)."""
        if k < 0:
            raise DomainError("k must be >= 0")
        if l > 0:
            raise DomainError("l must be <= 0")
        s = self.grid.nodes
        if l < 0 and self.grid.s_min <= 0:
            raise DomainError("s**l is singular at 0; the grid must start above 0 when l < 0")
        weight = s**k + s**l
        return float(self.grid.weights @ (np.abs(self.values) * weight))

    def moment(self, k: float) -> float:
        """Integral of s**k f(s)."""
        return float(self.grid.weights @ (self.values * self.grid.nodes**k))

    def interpolate(self, s) -> np.ndarray | float:
        """Linear interpolation inside the grid and zero outside."""
        s_arr = np.asarray(s, dtype=float)
        g = self.grid
        out = np.interp(s_arr, g.nodes, self.values, left=0.0, right=0.0)
        # np.interp clamps exactly at the ends; restore the endpoint values
        out = np.where(s_arr == g.s_min, self.values[0], out)
        return float(out) if out.ndim == 0 else out

    def mass_below(self, s: float) -> float:
        """Integral of the interpolant over [s_min, s] (exact)."""
        return float(self.cdf(np.asarray(s)) * 1.0)

    # exact piecewise-linear law ------------------------------------------
    def _panel_masses(self) -> np.ndarray:
        v = self.values
        return 0.5 * self.grid.h * (v[:-1] + v[1:])

    def cdf(self, s) -> np.ndarray:
        """Unnormalised integral from s_min to s of the interpolant (exact, piecewise quadratic)."""
        g = self.grid
        s = np.clip(np.asarray(s, dtype=float), g.s_min, g.s_max)
        cum = np.concatenate([[0.0], np.cumsum(self._panel_masses())])
        k = np.clip(((s - g.s_min) / g.h).astype(int), 0, g.n - 2)
        t = s - g.nodes[k]
        v0 = self.values[k]
        slope = (self.values[k + 1] - v0) / g.h
        return cum[k] + v0 * t + 0.5 * slope * t * t

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Exact draws from the normalised interpolant (requires nonnegative values)."""
        if np.any(self.values < 0):
            raise DomainError("sampling needs a nonnegative function")
        g = self.grid
        masses = self._panel_masses()
        total = masses.sum()
        if total <= 0:
            raise DomainError("sampling needs positive mass")
        cum = np.cumsum(masses) / total
        u = rng.random(size)
        k = np.minimum(np.searchsorted(cum, u, side="right"), g.n - 2)
        prev = np.where(k > 0, cum[np.maximum(k - 1, 0)], 0.0)
        # residual mass to place inside panel k (unnormalised)
        r = (u - prev) * total
        r = np.clip(r, 0.0, masses[k])
        v0 = self.values[k]
        slope = (self.values[k + 1] - v0) / g.h
        # solve v0 t + slope t^2 / 2 = r for t in [0, h], stably
        disc = np.sqrt(np.maximum(v0 * v0 + 2.0 * slope * r, 0.0))
        denom = v0 + disc
        t = np.where(denom > 0, 2.0 * r / np.where(denom > 0, denom, 1.0), 0.0)
        return g.nodes[k] + np.clip(t, 0.0, g.h)

    # serialization ------------------------------------------------------
    def to_csv(self, path_or_buf=None) -> str | None:
        buf = io.StringIO()
        buf.write("s,value\n")
        for s, v in zip(self.grid.nodes, self.values):
            buf.write(f"{FLOAT_FMT % s},{FLOAT_FMT % v}\n")
        text = buf.getvalue()
        if path_or_buf is None:
            return text
        if isinstance(path_or_buf, (str, os.PathLike)):
            with open(path_or_buf, "w", newline="") as fh:
                fh.write(text)
        else:
            path_or_buf.write(text)
        return None

    @classmethod
    def from_csv(cls, path) -> "GridFunction":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or [c.strip() for c in rows[0]] != ["s", "value"]:
            raise ValueError(f"{path}: expected header 's,value'")
        data = np.array([[float(a), float(b)] for a, b in rows[1:]])
        s, v = data[:, 0], data[:, 1]
        grid = Grid1D(s[0], s[-1], s.size)
        if not np.allclose(grid.nodes, s, rtol=0, atol=1e-9 * grid.h):
            raise ValueError(f"{path}: nodes are not uniformly spaced")
        return cls(grid, v)
