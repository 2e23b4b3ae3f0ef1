"""Markov chain on birth sizes whose invariant law is the normalised fixed point.

One generation maps a birth size ``s`` to ``z (s + D)``: the increment ``D``
has density ``Phi`` and the daughter fraction ``z`` is drawn from
``z dmu(z)``, a probability measure when mass is conserved. If ``s ~ f``
then the new size has density ``Tf``, which is what makes the chain an
oracle for the deterministic solver.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import DomainError
from .grid import FLOAT_FMT, Grid1D, GridFunction
from .model import FragmentationKernel, SurvivorPair
from .operator import TransitionOperator

_Z_NODES = 4097


@dataclass(frozen=True, eq=False)
class ChainSampler:
    """Sampler for the birth-size chain with its own seeded generator state."""

    kernel: FragmentationKernel
    survivor: SurvivorPair
    seed: int | None = None
    burn_in: int = 1000
    n_samples: int = 100_000
    _atom_z: np.ndarray = field(init=False, repr=False)
    _atom_p: np.ndarray = field(init=False, repr=False)
    _density: GridFunction | None = field(init=False, repr=False)
    _p_density: float = field(init=False, repr=False)

    def __post_init__(self):
        if self.burn_in < 0 or self.n_samples < 0:
            raise ValueError("burn_in and n_samples must be nonnegative")
        zs = np.array([z for z, _ in self.kernel.atoms], dtype=float)
        ps = np.array([z * w for z, w in self.kernel.atoms], dtype=float)
        dens = None
        p_dens = 0.0
        if self.kernel.density is not None:
            lo, hi = self.kernel.density_support
            g = Grid1D(lo, hi, _Z_NODES)
            vals = g.nodes * np.asarray(self.kernel.density(g.nodes), dtype=float)
            if np.any(vals < 0) or not np.all(np.isfinite(vals)):
                raise DomainError("fragmentation density must be finite and nonnegative")
            dens = GridFunction(g, vals)
            p_dens = dens.integrate()
        total = ps.sum() + p_dens
        if not math.isfinite(total) or abs(total - 1.0) > 1e-6:
            raise DomainError(f"z dmu(z) has mass {total:.8g}, not 1: mass conservation fails")
        object.__setattr__(self, "_atom_z", zs)
        object.__setattr__(self, "_atom_p", ps / total)
        object.__setattr__(self, "_density", dens)
        object.__setattr__(self, "_p_density", p_dens / total)

    @classmethod
    def from_operator(cls, op: TransitionOperator, **kw) -> "ChainSampler":
        return cls(op.kernel, op.survivor, **kw)

    def draw_z(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Daughter fractions from the size-biased law ``z dmu(z)``."""
        if self._density is None:
            if self._atom_z.size == 1:
                return np.full(size, self._atom_z[0])
            return rng.choice(self._atom_z, size=size, p=self._atom_p)
        out = self._density.sample(rng, size)
        if self._atom_z.size:
            pick = rng.random(size) >= self._p_density
            if pick.any():
                p = self._atom_p / self._atom_p.sum()
                out[pick] = rng.choice(self._atom_z, size=int(pick.sum()), p=p)
        return out

    def draw_increment(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Division increments with density Phi, by inverting the survivor function."""
        u = rng.random(size)
        # 1 - u is uniform on (0, 1]; -log of it is an Exp(1) hazard level
        return self.survivor.inverse_cumulative_hazard(-np.log1p(-u))

    def step(self, rng: np.random.Generator, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return self.draw_z(rng, s.size) * (s + self.draw_increment(rng, s.size))


def sample_chain(sampler: ChainSampler, s0: float) -> np.ndarray:
    """Run one chain from ``s0`` and return the post-burn-in birth sizes."""
    if not s0 > 0:
        raise DomainError("initial birth size must be positive")
    rng = np.random.default_rng(sampler.seed)
    n = sampler.burn_in + sampler.n_samples
    z = sampler.draw_z(rng, n)
    d = sampler.draw_increment(rng, n)
    out = np.empty(n)
    s = float(s0)
    for i in range(n):
        s = z[i] * (s + d[i])
        out[i] = s
    return out[sampler.burn_in:]


def _cdf(f: GridFunction):
    total = f.integrate()
    if total <= 0 or np.any(f.values < 0):
        raise DomainError("reference f must be nonnegative with positive mass")
    return lambda s: f.cdf(s) / total


def ks_distance(samples, f: GridFunction) -> float:
    """Kolmogorov-Smirnov statistic of the samples against the normalised f."""
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise DomainError("no samples")
    return float(stats.kstest(x, _cdf(f)).statistic)


@dataclass(frozen=True)
class OneStepTest:
    statistic: float
    pvalue: float
    bins: int
    n: int


def one_step_test(sampler: ChainSampler, op: TransitionOperator, f: GridFunction, n: int = 100_000,
                  bins: int = 50) -> OneStepTest:
    """Chi-square test of one chain step from ``s ~ f`` against ``Tf``.

    Bins are equiprobable under ``Tf``; the mass ``T`` sends past the grid
    forms one extra bin.
    """
    rng = np.random.default_rng(sampler.seed)
    s = f.normalized().sample(rng, n)
    out = sampler.step(rng, s)
    Tf = op.apply(f.normalized())
    cdf = Tf.cdf
    total = float(cdf(Tf.grid.s_max))
    # edges at equal Tf-mass, found by inverting the piecewise quadratic CDF on a fine grid
    fine = np.linspace(Tf.grid.s_min, Tf.grid.s_max, 64 * Tf.grid.n)
    cf = cdf(fine)
    targets = np.linspace(0.0, total, bins + 1)[1:-1]
    edges = np.interp(targets, cf, fine)
    probs = np.diff(np.concatenate([[0.0], cdf(edges), [total]]))
    probs = np.append(probs, max(0.0, 1.0 - total))
    idx = np.searchsorted(edges, out, side="right")
    idx = np.where(out > Tf.grid.s_max, bins, idx)
    observed = np.bincount(idx, minlength=bins + 1).astype(float)
    keep = probs * n > 5.0
    extra = observed[~keep].sum()
    exp_counts = probs[keep] * n
    obs = observed[keep]
    if extra or (~keep).any():
        # fold thin bins into one so the chi-square approximation holds
        obs = np.append(obs, extra)
        exp_counts = np.append(exp_counts, probs[~keep].sum() * n)
        if exp_counts[-1] <= 0:
            obs, exp_counts = obs[:-1], exp_counts[:-1]
    exp_counts *= obs.sum() / exp_counts.sum()
    res = stats.chisquare(obs, exp_counts)
    return OneStepTest(float(res.statistic), float(res.pvalue), int(obs.size), n)


def samples_to_csv(samples, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("s\n")
        for v in np.asarray(samples, dtype=float):
            fh.write(FLOAT_FMT % v + "\n")


def samples_from_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["s"]:
        raise ValueError(f"{path}: expected header 's'")
    return np.array([float(r[0]) for r in rows[1:]])


def ks_report(samples, f: GridFunction, sampler: ChainSampler, path=None, extra: dict | None = None) -> dict:
    x = np.asarray(samples, dtype=float)
    rep = {
        "ks": ks_distance(x, f),
        "n_samples": int(x.size),
        "burn_in": sampler.burn_in,
        "seed": sampler.seed,
        "min_sample": float(x.min()),
        "mean_sample": float(x.mean()),
    }
    if extra:
        rep.update(extra)
    if path is not None:
        with open(path, "w") as fh:
            json.dump(rep, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return rep
