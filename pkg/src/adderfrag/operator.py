"""Transition operator on birth sizes.

``T f(s) = sum over z of w(z) * int_0^{s/z} Phi(s/z - a) f(a) da``

``f`` is read as its piecewise-linear interpolant, zero outside its grid.
``Phi = -Psi'``, so every panel integral is closed form in ``Psi`` and its
antiderivative. That is exact for the jump of ``Phi`` at ``b`` and for
the kink of ``f``, and it conserves mass up to rounding. Evaluating on a
grid ``[s_min, Sigma]`` with ``f`` supported there realises the truncated
operator without a separate code path.
"""
from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .errors import DomainError
from .grid import Grid1D, GridFunction
from .model import FragmentationKernel, SurvivorPair, check_hypotheses

_CACHE_SIZE = 2
_DENSE_LIMIT = 40_000_000  # matrix entries kept in memory (320 MB)


@dataclass(frozen=True, eq=False)
class TransitionOperator:
    """Discrete transition operator with a small cache of assembled matrices.

    The matrix for a given (input grid, output grid) pair is built once by
    the active backend and reused, so repeated applications (power
    iteration) cost one matrix-vector product each.
    """

    kernel: FragmentationKernel
    survivor: SurvivorPair
    n_gauss: int = 32
    backend: str | None = None
    _cache: OrderedDict = field(default_factory=OrderedDict, init=False, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)

    @classmethod
    def build(cls, kernel, rate, n_gauss: int = 32, backend: str | None = None,
              check: bool = True) -> "TransitionOperator":
        pair = rate if isinstance(rate, SurvivorPair) else SurvivorPair.from_rate(rate)
        if check:
            check_hypotheses(kernel, pair).raise_if_failed()
        return cls(kernel, pair, n_gauss, backend)

    @property
    def theta(self) -> float:
        return self.kernel.theta

    @property
    def eta(self) -> float:
        return self.kernel.eta

    @property
    def b(self) -> float:
        return self.survivor.b

    @property
    def b_theta(self) -> float:
        return self.theta * self.b / (1.0 - self.theta)

    def quadrature(self) -> tuple[np.ndarray, np.ndarray]:
        return self.kernel.quadrature(self.n_gauss)

    def matrix(self, in_grid: Grid1D, out_grid: Grid1D | None = None) -> np.ndarray:
        out_grid = out_grid or in_grid
        if in_grid.s_min < 0:
            raise DomainError("input grid must satisfy s_min >= 0")
        key = (in_grid, out_grid)
        with self._lock:
            K = self._cache.get(key)
            if K is not None:
                self._cache.move_to_end(key)
                return K
        zq, wq = self.quadrature()
        K = _backend.assemble(self.survivor, out_grid.nodes, in_grid.s_min, in_grid.h,
                              in_grid.n, zq, wq, backend=self.backend)
        K.setflags(write=False)
        with self._lock:
            self._cache[key] = K
            while len(self._cache) > _CACHE_SIZE:
                self._cache.popitem(last=False)
        return K

    def apply_values(self, values: np.ndarray, in_grid: Grid1D, out_grid: Grid1D | None = None) -> np.ndarray:
        out_grid = out_grid or in_grid
        if in_grid.n * out_grid.n <= _DENSE_LIMIT:
            return self.matrix(in_grid, out_grid) @ values
        # too large to keep: assemble and apply block by block
        zq, wq = self.quadrature()
        rows = max(1, _DENSE_LIMIT // (8 * in_grid.n))
        out = np.empty(out_grid.n)
        nodes = out_grid.nodes
        for lo in range(0, out_grid.n, rows):
            block = _backend.assemble(self.survivor, nodes[lo:lo + rows], in_grid.s_min, in_grid.h,
                                      in_grid.n, zq, wq, backend=self.backend)
            out[lo:lo + rows] = block @ values
        return out

    def apply(self, f: GridFunction, out_grid: Grid1D | None = None) -> GridFunction:
        out_grid = out_grid or f.grid
        return GridFunction(out_grid, self.apply_values(f.values, f.grid, out_grid))


def apply(op: TransitionOperator, f: GridFunction, out_grid: Grid1D | None = None) -> GridFunction:
    """Tf sampled on ``out_grid`` (default: the grid of ``f``)."""
    return op.apply(f, out_grid)


def weighted_gain(op: TransitionOperator, f: GridFunction, l: float) -> float:
    """Ratio of s**l-weighted norms of Tf and f; bounded by theta**l."""
    if np.any(f.values < 0):
        raise DomainError("weighted gain is defined for nonnegative f")
    denom = f.weighted_norm(0.0, l)
    if denom == 0:
        raise ZeroDivisionError("f is identically zero")
    return op.apply(f).weighted_norm(0.0, l) / denom


def phi_weights(survivor: SurvivorPair, grid: Grid1D) -> np.ndarray:
    """Weights ``omega`` with ``sum omega_k g(a_k) = int Phi(a) g(a) da`` for piecewise-linear g."""
    a = grid.nodes
    psi = survivor.psi(a)
    D = np.diff(survivor.psi_integral(a)) / grid.h
    left = np.maximum(psi[:-1] - D, 0.0)
    right = np.maximum(D - psi[1:], 0.0)
    w = np.zeros(grid.n)
    w[:-1] += left
    w[1:] += right
    return w
