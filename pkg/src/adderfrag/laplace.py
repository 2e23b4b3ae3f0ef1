"""Laplace-domain check of the fixed point.

If ``Tf = f`` then for every ``y >= 0``::

    L[f](y) = int L[f](z y) L[Phi](z y) z dmu(z)

The transform is read with the trapezoid rule on the grid of ``f`` so both
sides see the same discretisation; ``L[Phi]`` comes from adaptive
quadrature of the closed-form division density.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate

from .errors import DomainError
from .grid import FLOAT_FMT, GridFunction
from .model import SurvivorPair
from .operator import TransitionOperator

DEFAULT_Y = (0.0,) + tuple(2.0**j for j in range(-4, 5))


def laplace(f: GridFunction, y) -> np.ndarray | float:
    """Trapezoid value of ``int exp(-y s) f(s) ds`` over the grid of ``f``."""
    ys = np.asarray(y, dtype=float)
    if np.any(ys < 0) or np.any(~np.isfinite(ys)):
        raise DomainError("Laplace variable must be finite and >= 0")
    s = f.grid.nodes
    kern = np.exp(-np.multiply.outer(np.atleast_1d(ys), s))
    out = kern @ (f.grid.weights * f.values)
    return float(out[0]) if ys.ndim == 0 else out


def laplace_phi(survivor: SurvivorPair, y: float) -> float:
    """``int_b^inf exp(-y a) Phi(a) da``; equals 1 at y = 0."""
    if y < 0:
        raise DomainError("Laplace variable must be >= 0")
    return _laplace_phi_cached(survivor, float(y))


@lru_cache(maxsize=512)
def _laplace_phi_cached(survivor: SurvivorPair, y: float) -> float:
    if y == 0.0:
        return 1.0
    b = survivor.b
    val, _ = integrate.quad(lambda a: math.exp(-y * a) * float(survivor.phi(a)), b, math.inf,
                            limit=400, epsabs=1e-13, epsrel=1e-11)
    return val


@dataclass(frozen=True)
class LaplaceProfile:
    """Transform values ``L[f]`` on a y-grid with the fixed-point residual per point."""

    y: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    residual: np.ndarray = field(repr=False)
    tail: np.ndarray = field(repr=False)

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residual))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["y", "L[f]", "residual", "tail"])
            for row in zip(self.y, self.values, self.residual, self.tail):
                w.writerow([FLOAT_FMT % v for v in row])


def laplace_profile(f: GridFunction, op: TransitionOperator, y_grid=None) -> LaplaceProfile:
    """Both sides of the transformed fixed-point equation on ``y_grid``.

    ``tail`` is ``exp(-y s_max)`` times the mass that ``T`` pushes beyond the
    grid; it bounds what the truncated right-hand side misses.
    """
    ys = np.asarray(DEFAULT_Y if y_grid is None else y_grid, dtype=float)
    if ys.ndim != 1 or ys.size == 0:
        raise ValueError("y_grid must be a nonempty 1-D sequence")
    zq, wq = op.quadrature()
    lhs = laplace(f, ys)
    rhs = np.zeros_like(lhs)
    for z, w in zip(zq, wq):
        zy = z * ys
        lphi = np.array([laplace_phi(op.survivor, v) for v in zy])
        rhs += w * z * laplace(f, zy) * lphi
    lost = max(0.0, float(wq @ zq) * f.integrate() - op.apply(f).integrate())
    tail = np.exp(-ys * f.grid.s_max) * lost
    return LaplaceProfile(ys, lhs, np.abs(lhs - rhs), tail)


def fixed_point_residual_laplace(f: GridFunction, op: TransitionOperator, y_grid=None) -> float:
    """``max_y |L[f](y) - int L[f](z y) L[Phi](z y) z dmu(z)|``."""
    return laplace_profile(f, op, y_grid).max_residual
