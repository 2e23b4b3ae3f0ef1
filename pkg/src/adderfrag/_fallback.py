"""Pure numpy versions of the compiled kernels (same signatures as ``_backend``)."""
from __future__ import annotations

import numpy as np

_ROW_CHUNK_ELEMS = 2_000_000


def assemble(pair, out_nodes, in_s0, in_h, n_in, zq, wq):
    out_nodes = np.asarray(out_nodes, dtype=float)
    a = in_s0 + in_h * np.arange(n_in)
    b = pair.b
    K = np.zeros((out_nodes.size, n_in))
    rows = max(1, _ROW_CHUNK_ELEMS // n_in)
    for z, w in zip(zq, wq):
        for lo in range(0, out_nodes.size, rows):
            c = out_nodes[lo:lo + rows] / z
            U = c[:, None] - a[None, :]
            psi = pair.psi(U)
            psi1 = pair.psi_integral(U)
            D = (psi1[:, :-1] - psi1[:, 1:]) / in_h
            live = U[:, :-1] > b
            A = np.where(live, np.maximum(D - psi[:, :-1], 0.0), 0.0)
            B = np.where(live, np.maximum(psi[:, 1:] - D, 0.0), 0.0)
            K[lo:lo + rows, :-1] += w * A
            K[lo:lo + rows, 1:] += w * B
    return K


def advect(u_old, u_new, a0, ha, s_nodes, dt, factor):
    na, ns = u_old.shape
    e = np.exp(-dt)
    a = a0 + ha * np.arange(1, na)
    s = np.asarray(s_nodes)[None, :]
    t = (((a[:, None] + s) * e - s) - a0) / ha
    cols = np.broadcast_to(np.arange(ns), t.shape)
    k = np.clip(np.floor(t).astype(np.int64), 0, na - 2)
    frac = np.clip(t - k, 0.0, 1.0)
    val = (1.0 - frac) * u_old[k, cols] + frac * u_old[k + 1, cols]
    val = np.where(t <= 0, u_old[0, cols], val)
    u_new[1:, :] = factor * val


def mother_flux(u, omega, s0, hs, a_nodes, y_nodes, F):
    na, ns = u.shape
    live = np.nonzero(omega)[0]
    if live.size == 0:
        F[:] = 0.0
        return
    y = np.asarray(y_nodes)
    t = (y[:, None] - np.asarray(a_nodes)[None, live] - s0) / hs
    inside = (t >= 0.0) & (t <= ns - 1)
    i = np.clip(np.floor(t).astype(np.int64), 0, ns - 2)
    frac = np.clip(t - i, 0.0, 1.0)
    rows = np.broadcast_to(live[None, :], t.shape)
    val = (1.0 - frac) * u[rows, i] + frac * u[rows, i + 1]
    F[:] = np.where(inside, val, 0.0) @ omega[live]
