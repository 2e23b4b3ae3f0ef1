"""Biological kernels of the adder model with linear growth.

A cell born at size ``s`` grows exponentially; its size increment ``a``
grows at the same speed, so ``s = x - a`` is constant along a lineage.
Division is triggered by the increment through the rate ``B(a)`` and the
mother splits self-similarly according to the measure ``mu`` on (0, 1).

Everything here is immutable and vectorised over numpy arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, special

from .errors import DomainError, HypothesisError

MASS_TOL_ATOMIC = 1e-10
MASS_TOL_DENSITY = 1e-8

FORM_CODES = {"hyperbolic": 0, "constant": 1, "power": 2, "tabulated": 3}


# --------------------------------------------------------------------------
# fragmentation kernel
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FragmentationKernel:
    """Self-similar fragmentation measure ``mu``: atoms plus an optional density.

    ``atoms`` holds ``(z_i, w_i)`` pairs (``w_i`` daughters at relative size
    ``z_i``); ``density`` is a nonnegative callable on ``density_support``.
    Construction does not enforce the model hypotheses; use
    :func:`check_hypotheses` for that.
    """

    atoms: tuple[tuple[float, float], ...] = ()
    density: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False)
    density_support: tuple[float, float] | None = None
    name: str = ""

    def __post_init__(self):
        atoms = tuple((float(z), float(w)) for z, w in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        if not atoms and self.density is None:
            raise ValueError("kernel needs at least one atom or a density")
        for z, w in atoms:
            if not (0.0 < z < 1.0 or z == 1.0):
                raise ValueError(f"atom location {z} outside (0, 1]")
            if w <= 0:
                raise ValueError(f"atom weight {w} must be positive")
        if self.density is not None:
            if self.density_support is None:
                raise ValueError("density requires density_support=(lo, hi)")
            lo, hi = map(float, self.density_support)
            if not 0.0 <= lo < hi <= 1.0:
                raise ValueError(f"bad density support {self.density_support}")
            object.__setattr__(self, "density_support", (lo, hi))

    # constructors -------------------------------------------------------
    @classmethod
    def equal_mitosis(cls) -> "FragmentationKernel":
        return cls(atoms=((0.5, 2.0),), name="equal-mitosis")

    @classmethod
    def from_atoms(cls, atoms: Sequence[tuple[float, float]], name: str = "") -> "FragmentationKernel":
        return cls(atoms=tuple(atoms), name=name or "atomic")

    @classmethod
    def uniform(cls, theta: float, eta: float) -> "FragmentationKernel":
        """Uniform density on [theta, eta] scaled so that the mean daughter mass is conserved."""
        height = 2.0 / (eta**2 - theta**2)
        return cls(
            density=_Constant(height),
            density_support=(theta, eta),
            name=f"uniform[{theta:g},{eta:g}]",
        )

    # support ------------------------------------------------------------
    @property
    def theta(self) -> float:
        lows = [z for z, _ in self.atoms]
        if self.density is not None:
            lows.append(self.density_support[0])
        return min(lows)

    @property
    def eta(self) -> float:
        highs = [z for z, _ in self.atoms]
        if self.density is not None:
            highs.append(self.density_support[1])
        return max(highs)

    @property
    def is_atomic(self) -> bool:
        return self.density is None

    # moments ------------------------------------------------------------
    def _density_moment(self, power: int) -> float:
        if self.density is None:
            return 0.0
        lo, hi = self.density_support
        val, _ = integrate.quad(
            lambda z: z**power * float(self.density(np.asarray(z))), lo, hi,
            epsabs=1e-14, epsrel=1e-13, limit=200,
        )
        return val

    def total_mass(self) -> float:
        """mu([0, 1]), the mean number of daughters."""
        return sum(w for _, w in self.atoms) + self._density_moment(0)

    def first_moment(self) -> float:
        """Integral of z d mu(z); equals 1 under mass conservation."""
        return sum(z * w for z, w in self.atoms) + self._density_moment(1)

    def quadrature(self, n_gauss: int = 32) -> tuple[np.ndarray, np.ndarray]:
        """Effective atoms ``(z, w)``: exact atoms plus Gauss-Legendre nodes on the density."""
        zs = [z for z, _ in self.atoms]
        ws = [w for _, w in self.atoms]
        if self.density is not None:
            lo, hi = self.density_support
            x, wx = np.polynomial.legendre.leggauss(n_gauss)
            zq = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
            wq = 0.5 * (hi - lo) * wx * np.asarray(self.density(zq), dtype=float)
            zs.extend(zq.tolist())
            ws.extend(wq.tolist())
        return np.asarray(zs, dtype=float), np.asarray(ws, dtype=float)


@dataclass(frozen=True)
class _Constant:
    value: float

    def __call__(self, z):
        return np.full_like(np.asarray(z, dtype=float), self.value)


# --------------------------------------------------------------------------
# division rate and survivor function
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DivisionRate:
    """Division rate ``B(a)``, zero below the support edge ``b``.

    Forms
    -----
    hyperbolic  ``c / (1 + a)`` for ``a >= b``
    constant    ``c`` for ``a >= b``
    power       ``c * a**p`` for ``a >= b`` (``p > -1``)
    tabulated   nodes ``table_a`` (first node is ``b``) and values ``table_b``;
                integrated with the trapezoid rule, so the hazard actually used
                is the panel mean, constant on each panel, and the last value
                beyond the table.
    """

    form: str
    b: float = 0.0
    c: float = 1.0
    p: float = 0.0
    table_a: tuple[float, ...] = ()
    table_b: tuple[float, ...] = ()

    def __post_init__(self):
        if self.form not in FORM_CODES:
            raise ValueError(f"unknown rate form {self.form!r}; expected one of {sorted(FORM_CODES)}")
        if self.b < 0:
            raise ValueError("support edge b must be >= 0")
        if self.form == "power" and self.p <= -1:
            raise ValueError("power-law exponent must satisfy p > -1")
        if self.form == "tabulated":
            ta = np.asarray(self.table_a, dtype=float)
            tb = np.asarray(self.table_b, dtype=float)
            if ta.size < 2 or ta.shape != tb.shape:
                raise ValueError("tabulated rate needs matching table_a/table_b with >= 2 nodes")
            if np.any(np.diff(ta) <= 0):
                raise ValueError("table_a must be strictly increasing")
            if np.any(tb < 0):
                raise ValueError("tabulated rate values must be nonnegative")
            # keep only a >= b, inserting b itself as the first node
            keep = ta > self.b
            b_val = float(np.interp(self.b, ta, tb))
            ta = np.concatenate([[self.b], ta[keep]])
            tb = np.concatenate([[b_val], tb[keep]])
            object.__setattr__(self, "table_a", tuple(ta.tolist()))
            object.__setattr__(self, "table_b", tuple(tb.tolist()))
        elif self.c <= 0:
            raise ValueError("rate constant c must be positive")

    @classmethod
    def hyperbolic(cls, c: float, b: float) -> "DivisionRate":
        return cls("hyperbolic", b=b, c=c)

    @classmethod
    def constant(cls, c: float, b: float) -> "DivisionRate":
        return cls("constant", b=b, c=c)

    @classmethod
    def power(cls, c: float, p: float, b: float) -> "DivisionRate":
        return cls("power", b=b, c=c, p=p)

    @classmethod
    def tabulated(cls, a: Sequence[float], values: Sequence[float], b: float) -> "DivisionRate":
        return cls("tabulated", b=b, table_a=tuple(a), table_b=tuple(values))

    @property
    def closed_form(self) -> bool:
        return self.form != "tabulated"

    def __call__(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        on = a >= self.b
        if self.form == "hyperbolic":
            val = self.c / (1.0 + a)
        elif self.form == "constant":
            val = np.full_like(a, self.c)
        elif self.form == "power":
            with np.errstate(divide="ignore"):
                val = self.c * np.power(np.where(on, a, 1.0), self.p)
        else:
            t = self._tables()
            idx = np.clip(np.searchsorted(t.nodes, a, side="right") - 1, 0, t.nodes.size - 1)
            val = t.slopes[idx]
        return np.where(on, val, 0.0)

    # the survivor tables are cheap; recompute on demand for the frozen object
    def _tables(self) -> "_Tables":
        cached = self.__dict__.get("_tab")
        if cached is None:
            cached = _Tables.build(np.asarray(self.table_a), np.asarray(self.table_b))
            object.__setattr__(self, "_tab", cached)
        return cached


@dataclass(frozen=True)
class _Tables:
    nodes: np.ndarray     # t_0 = b < t_1 < ... < t_m
    slopes: np.ndarray    # hazard on panel i (i = m: beyond the table)
    lam: np.ndarray       # cumulative hazard at nodes
    psi: np.ndarray       # survivor at nodes
    psi1: np.ndarray      # integral of survivor from 0 at nodes

    @classmethod
    def build(cls, ta: np.ndarray, tb: np.ndarray) -> "_Tables":
        dt = np.diff(ta)
        slopes = np.concatenate([0.5 * (tb[:-1] + tb[1:]), tb[-1:]])
        lam = np.concatenate([[0.0], np.cumsum(slopes[:-1] * dt)])
        psi = np.exp(-lam)
        panel = psi[:-1] * _expint(slopes[:-1], dt)
        psi1 = ta[0] + np.concatenate([[0.0], np.cumsum(panel)])
        return cls(ta, slopes, lam, psi, psi1)


def _expint(beta, d):
    """Integral over [0, d] of exp(-beta * t), stable as beta -> 0."""
    beta = np.asarray(beta, dtype=float)
    d = np.asarray(d, dtype=float)
    safe = np.where(beta > 0, beta, 1.0)
    return np.where(beta > 0, -np.expm1(-beta * d) / safe, d)


@dataclass(frozen=True)
class SurvivorPair:
    """Survivor function ``Psi = exp(-int_0^a B)`` and division density ``Phi = B Psi``.

    Also exposes ``psi_integral`` (the antiderivative of ``Psi`` from 0),
    which the product-integration quadratures need, and the inverse of the
    cumulative hazard used for sampling division increments.
    """

    rate: DivisionRate
    k0: float
    closed_form: bool

    @classmethod
    def from_rate(cls, rate: DivisionRate) -> "SurvivorPair":
        if rate.form == "hyperbolic":
            k0 = rate.c
        else:
            k0 = estimate_k0(rate)
        return cls(rate=rate, k0=float(k0), closed_form=rate.closed_form)

    @property
    def b(self) -> float:
        return self.rate.b

    # evaluation without domain checks; arguments <= 0 give Psi = 1, Psi_1 = u
    def cumulative_hazard(self, u) -> np.ndarray:
        r = self.rate
        u = np.asarray(u, dtype=float)
        v = np.maximum(u, r.b)
        if r.form == "hyperbolic":
            lam = r.c * np.log1p((v - r.b) / (1.0 + r.b))
        elif r.form == "constant":
            lam = r.c * (v - r.b)
        elif r.form == "power":
            q = r.p + 1.0
            lam = (r.c / q) * (np.power(v, q) - r.b**q)
        else:
            t = r._tables()
            i = np.clip(np.searchsorted(t.nodes, v, side="right") - 1, 0, t.nodes.size - 1)
            lam = t.lam[i] + t.slopes[i] * (v - t.nodes[i])
        return lam

    def psi(self, u) -> np.ndarray:
        return np.exp(-self.cumulative_hazard(u))

    def phi(self, u) -> np.ndarray:
        return self.rate(u) * self.psi(u)

    def psi_integral(self, u) -> np.ndarray:
        r = self.rate
        u = np.asarray(u, dtype=float)
        v = np.maximum(u, r.b)
        if r.form == "hyperbolic":
            L = np.log1p((v - r.b) / (1.0 + r.b))
            if abs(r.c - 1.0) < 1e-12:
                g = L
            else:
                g = -np.expm1(-(r.c - 1.0) * L) / (r.c - 1.0)
            tail = r.b + (1.0 + r.b) * g
        elif r.form == "constant":
            tail = r.b + _expint(r.c, v - r.b)
        elif r.form == "power":
            q = r.p + 1.0
            kappa = r.c / q
            s = 1.0 / q
            xb = kappa * r.b**q
            pref = math.exp(xb) * kappa ** (-s) * s * special.gamma(s)
            tail = r.b + pref * (special.gammaincc(s, xb) - special.gammaincc(s, kappa * np.power(v, q)))
        else:
            t = r._tables()
            i = np.clip(np.searchsorted(t.nodes, v, side="right") - 1, 0, t.nodes.size - 1)
            tail = t.psi1[i] + t.psi[i] * _expint(t.slopes[i], v - t.nodes[i])
        return np.where(u <= r.b, u, tail)

    def inverse_cumulative_hazard(self, lam) -> np.ndarray:
        """Increment ``a > b`` with ``cumulative_hazard(a) = lam`` for ``lam > 0``."""
        r = self.rate
        lam = np.asarray(lam, dtype=float)
        if r.form == "hyperbolic":
            return (1.0 + r.b) * np.exp(lam / r.c) - 1.0
        if r.form == "constant":
            return r.b + lam / r.c
        if r.form == "power":
            q = r.p + 1.0
            return np.power(r.b**q + lam * q / r.c, 1.0 / q)
        t = r._tables()
        i = np.clip(np.searchsorted(t.lam, lam, side="right") - 1, 0, t.nodes.size - 1)
        # skip zero-hazard panels (lam flat there)
        slope = t.slopes[i]
        return np.where(slope > 0, t.nodes[i] + (lam - t.lam[i]) / np.where(slope > 0, slope, 1.0), t.nodes[i])

    def kernel_tables(self):
        """Flat description consumed by the compiled kernels."""
        r = self.rate
        code = FORM_CODES[r.form]
        if r.form == "power":
            q = r.p + 1.0
            kappa = r.c / q
            s = 1.0 / q
            xb = kappa * r.b**q
            pref = math.exp(xb) * kappa ** (-s) * s * special.gamma(s)
            params = np.array([r.c, r.p, r.b, q, kappa, pref, special.gammaincc(s, xb)])
        else:
            params = np.array([r.c, 0.0, r.b])
        if r.form == "tabulated":
            t = r._tables()
            tabs = (t.nodes, t.slopes, t.lam, t.psi, t.psi1)
        else:
            z = np.zeros(1)
            tabs = (z, z, z, z, z)
        return (code, np.ascontiguousarray(params, dtype=float)) + tuple(
            np.ascontiguousarray(x, dtype=float) for x in tabs
        )


# --------------------------------------------------------------------------
# public operations
# --------------------------------------------------------------------------


def _as_pair(rate) -> SurvivorPair:
    return rate if isinstance(rate, SurvivorPair) else SurvivorPair.from_rate(rate)


def _check_nonneg(a):
    a = np.asarray(a, dtype=float)
    if np.any(a < 0) or np.any(np.isnan(a)):
        raise DomainError("size increment must be >= 0")
    return a


def survivor(rate, a):
    """Psi(a), the probability of not having divided after growing by ``a``."""
    a = _check_nonneg(a)
    out = _as_pair(rate).psi(a)
    return float(out) if out.ndim == 0 else out


def phi(rate, a):
    """Division-increment density Phi(a) = B(a) Psi(a)."""
    a = _check_nonneg(a)
    out = _as_pair(rate).phi(a)
    return float(out) if out.ndim == 0 else out


def b_theta(kernel: FragmentationKernel, rate) -> float:
    """Smallest reachable birth size theta * b / (1 - theta)."""
    theta = kernel.theta
    if theta >= 1.0:
        raise DomainError("theta must be < 1")
    b = rate.b
    return theta * b / (1.0 - theta)


def estimate_k0(rate, a_max: float = 1e4, n: int = 200) -> float:
    """Tail decay exponent of Psi from a log-log least-squares fit over the last decade."""
    pair = rate if isinstance(rate, SurvivorPair) else None
    r = pair.rate if pair else rate
    a = np.geomspace(max(a_max / 10.0, 10.0 * max(r.b, 1e-12)), a_max, n)
    log_psi = -SurvivorPair(r, 0.0, r.closed_form).cumulative_hazard(a)
    slope = np.polyfit(np.log(a), log_psi, 1)[0]
    return float(-slope)


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str


@dataclass(frozen=True)
class HypothesisReport:
    checks: tuple[Check, ...]
    theta: float
    eta: float
    b: float
    k0_estimate: float

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def summary(self) -> str:
        return "\n".join(f"[{'pass' if c.passed else 'FAIL'}] {c.name}: {c.detail}" for c in self.checks)

    def raise_if_failed(self):
        if not self.ok:
            raise HypothesisError(self)


def check_hypotheses(kernel: FragmentationKernel, rate) -> HypothesisReport:
    """Validate mass conservation, compact support, supp B = [b, inf) and tail decay.

    Never raises; inspect ``report.ok`` or call ``report.raise_if_failed()``.
    """
    r = rate.rate if isinstance(rate, SurvivorPair) else rate
    checks = []

    m1 = kernel.first_moment()
    tol = MASS_TOL_ATOMIC if kernel.is_atomic else MASS_TOL_DENSITY
    checks.append(Check(
        "mass conservation",
        abs(m1 - 1.0) <= tol,
        f"integral of z dmu = {m1:.12g} (required 1 within {tol:g})",
    ))

    theta, eta = kernel.theta, kernel.eta
    checks.append(Check(
        "compact support in (0,1)",
        0.0 < theta <= eta < 1.0,
        f"supp mu within [{theta:g}, {eta:g}]",
    ))

    mass = kernel.total_mass()
    checks.append(Check(
        "finite positive total mass",
        math.isfinite(mass) and mass > 0,
        f"mu([0,1]) = {mass:.12g}",
    ))

    probe_lo = np.linspace(0.0, r.b, 50, endpoint=False) if r.b > 0 else np.zeros(0)
    probe_hi = r.b + np.geomspace(1e-9, 1e4, 200)
    vals_hi = r(probe_hi)
    support_ok = (
        bool(np.all(r(probe_lo) == 0.0))
        and bool(np.all(vals_hi >= 0))
        and bool(np.all(np.isfinite(vals_hi)))
        and bool(np.any(r(r.b + np.geomspace(1e-9, 1e-3, 20)) > 0))
    )
    checks.append(Check(
        "supp B = [b, inf)",
        support_ok,
        f"B vanishes below b = {r.b:g} and is nonnegative, positive right after b",
    ))

    k0 = estimate_k0(r)
    checks.append(Check(
        "survivor decay",
        k0 > 0 and math.isfinite(k0) or k0 == math.inf,
        f"estimated decay exponent k0 = {k0:.4g}",
    ))

    return HypothesisReport(tuple(checks), theta, eta, r.b, k0)
