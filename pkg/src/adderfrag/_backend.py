"""Kernel backend chosen at import: the compiled extension when built, numpy otherwise.

Set ``ADDERFRAG_BACKEND=python`` to force the numpy path.
"""
from __future__ import annotations

import os

import numpy as np

from . import _fallback

NAME = "python"
_compiled = None

if os.environ.get("ADDERFRAG_BACKEND", "").lower() != "python":
    try:
        from . import _kernels as _compiled  # type: ignore[attr-defined]
        NAME = "compiled"
    except ImportError:
        _compiled = None


def available() -> tuple[str, ...]:
    return ("compiled", "python") if _compiled is not None else ("python",)


def _pick(backend: str | None):
    name = backend or NAME
    if name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built; reinstall the package with Cython")
        return _compiled
    if name == "python":
        return None
    raise ValueError(f"unknown backend {backend!r}")


def assemble(pair, out_nodes, in_s0, in_h, n_in, zq, wq, backend=None):
    mod = _pick(backend)
    out_nodes = np.ascontiguousarray(out_nodes, dtype=float)
    zq = np.ascontiguousarray(zq, dtype=float)
    wq = np.ascontiguousarray(wq, dtype=float)
    if mod is None:
        return _fallback.assemble(pair, out_nodes, in_s0, in_h, n_in, zq, wq)
    return mod.assemble(out_nodes, float(in_s0), float(in_h), int(n_in), zq, wq, *pair.kernel_tables())


def advect(u_old, u_new, a0, ha, s_nodes, dt, factor, backend=None):
    mod = _pick(backend)
    impl = _fallback.advect if mod is None else mod.advect
    impl(u_old, u_new, float(a0), float(ha), np.ascontiguousarray(s_nodes, dtype=float), float(dt),
         float(factor))


def mother_flux(u, omega, s0, hs, a_nodes, y_nodes, F, backend=None):
    mod = _pick(backend)
    impl = _fallback.mother_flux if mod is None else mod.mother_flux
    impl(u, np.ascontiguousarray(omega, dtype=float), float(s0), float(hs),
         np.ascontiguousarray(a_nodes, dtype=float), np.ascontiguousarray(y_nodes, dtype=float), F)
