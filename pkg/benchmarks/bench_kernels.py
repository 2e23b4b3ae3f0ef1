"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 3] [--json out.json]

Each kernel runs on both backends with identical inputs; the table lists
the best wall time and the largest absolute difference between outputs.
"""
from __future__ import annotations

import argparse
import json
import math
import time

import numpy as np

from adderfrag import _backend
from adderfrag.grid import Grid1D
from adderfrag.model import DivisionRate, FragmentationKernel, SurvivorPair
from adderfrag.operator import phi_weights


def _best(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def cases():
    hyperbolic = SurvivorPair.from_rate(DivisionRate.hyperbolic(2.0, 1.0))
    power = SurvivorPair.from_rate(DivisionRate.power(1.0, 2.0, 0.5))
    zq, wq = FragmentationKernel.equal_mitosis().quadrature()
    zu, wu = FragmentationKernel.uniform(0.3, 0.7).quadrature(32)

    for label, pair, z, w, n in [
        ("assemble hyperbolic, mitosis, n=2048", hyperbolic, zq, wq, 2048),
        ("assemble hyperbolic, mitosis, n=4096", hyperbolic, zq, wq, 4096),
        ("assemble power, uniform(32 nodes), n=512", power, zu, wu, 512),
    ]:
        g = Grid1D(0.95, 50.0, n)

        def run(backend, pair=pair, g=g, z=z, w=w):
            return _backend.assemble(pair, g.nodes, g.s_min, g.h, g.n, z, w, backend=backend)

        yield label, run

    rng = np.random.default_rng(0)
    a = Grid1D(0.0, 8.0, 512)
    s = Grid1D(0.5, 5.0, 512)
    u = np.ascontiguousarray(rng.random((a.n, s.n)))

    def advect(backend):
        out = np.zeros_like(u)
        for _ in range(20):
            _backend.advect(u, out, 0.0, a.h, s.nodes, 1e-3, math.exp(1e-3), backend=backend)
        return out

    yield "advect 512x512, 20 steps", advect

    pair = SurvivorPair.from_rate(DivisionRate.constant(2.0, 0.5))
    omega = phi_weights(pair, a)
    y = s.nodes / 0.5

    def flux(backend):
        F = np.empty(y.size)
        for _ in range(20):
            _backend.mother_flux(u, omega, s.s_min, s.h, a.nodes, y, F, backend=backend)
        return F

    yield "mother_flux 512x512, 20 sweeps", flux


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--json", help="write the results here")
    args = p.parse_args(argv)
    backends = _backend.available()
    if "compiled" not in backends:
        print("compiled kernels not built; only the numpy fallback is timed")
    rows = []
    print(f"{'kernel':44s} " + " ".join(f"{b:>10s}" for b in backends) + "   speedup   max|diff|")
    for label, fn in cases():
        times, outs = {}, {}
        for b in backends:
            times[b], outs[b] = _best(lambda: fn(b), args.repeat)
        diff = float(np.max(np.abs(outs["compiled"] - outs["python"]))) if len(outs) == 2 else math.nan
        speed = times["python"] / times["compiled"] if len(times) == 2 else math.nan
        rows.append({"kernel": label, **{f"{b}_s": t for b, t in times.items()}, "speedup": speed, "max_diff": diff})
        print(f"{label:44s} " + " ".join(f"{times[b]:10.4f}" for b in backends) + f"   {speed:7.1f}   {diff:.2e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
