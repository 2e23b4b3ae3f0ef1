# cython: language_level=3
"""Compiled hot loops: operator assembly and the transport sweeps.

Mirrors ``adderfrag._fallback`` one to one; both are selected through
``adderfrag._backend``.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, expm1, log1p, pow, floor
from scipy.special.cython_special cimport gammaincc

cnp.import_array()


cdef struct Rate:
    int form
    double c
    double p
    double b
    double q
    double kappa
    double pref
    double gb
    const double* nodes
    const double* slopes
    const double* lam
    const double* psi
    const double* psi1
    Py_ssize_t m


cdef inline Py_ssize_t _panel(const Rate* r, double v) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = r.m - 1, mid
    if v >= r.nodes[hi]:
        return hi
    while hi - lo > 1:
        mid = (lo + hi) >> 1
        if r.nodes[mid] <= v:
            lo = mid
        else:
            hi = mid
    return lo


cdef inline double _expint(double beta, double d) noexcept nogil:
    if beta > 0:
        return -expm1(-beta * d) / beta
    return d


cdef inline void _psi_pair(const Rate* r, double u, double* psi, double* psi1) noexcept nogil:
    """Psi(u) and its antiderivative from 0 (Psi = 1, Psi_1 = u for u <= b)."""
    cdef double L, d, g
    cdef Py_ssize_t i
    if u <= r.b:
        psi[0] = 1.0
        psi1[0] = u
        return
    if r.form == 0:
        L = log1p((u - r.b) / (1.0 + r.b))
        psi[0] = exp(-r.c * L)
        if r.c - 1.0 < 1e-12 and 1.0 - r.c < 1e-12:
            g = L
        else:
            g = -expm1(-(r.c - 1.0) * L) / (r.c - 1.0)
        psi1[0] = r.b + (1.0 + r.b) * g
    elif r.form == 1:
        d = u - r.b
        psi[0] = exp(-r.c * d)
        psi1[0] = r.b + _expint(r.c, d)
    elif r.form == 2:
        d = r.kappa * pow(u, r.q)
        psi[0] = exp(-(d - r.kappa * pow(r.b, r.q)))
        psi1[0] = r.b + r.pref * (r.gb - gammaincc(1.0 / r.q, d))
    else:
        i = _panel(r, u)
        d = u - r.nodes[i]
        psi[0] = r.psi[i] * exp(-r.slopes[i] * d)
        psi1[0] = r.psi1[i] + r.psi[i] * _expint(r.slopes[i], d)


cdef Rate _make_rate(int form, const double[::1] params, const double[::1] nodes,
                     const double[::1] slopes, const double[::1] lam,
                     const double[::1] psi, const double[::1] psi1):
    cdef Rate r
    r.form = form
    r.c = params[0]
    r.p = params[1]
    r.b = params[2]
    if form == 2:
        r.q = params[3]
        r.kappa = params[4]
        r.pref = params[5]
        r.gb = params[6]
    r.nodes = &nodes[0]
    r.slopes = &slopes[0]
    r.lam = &lam[0]
    r.psi = &psi[0]
    r.psi1 = &psi1[0]
    r.m = nodes.shape[0]
    return r


def psi_pair(double[::1] u, int form, const double[::1] params, const double[::1] nodes,
             const double[::1] slopes, const double[::1] lam, const double[::1] psi,
             const double[::1] psi1):
    """Vectorised Psi and Psi_1 (used to cross-check the numpy formulas)."""
    cdef Rate r = _make_rate(form, params, nodes, slopes, lam, psi, psi1)
    cdef Py_ssize_t i, n = u.shape[0]
    out = np.empty((2, n))
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n):
            _psi_pair(&r, u[i], &o[0, i], &o[1, i])
    return out


def assemble(const double[::1] out_nodes, double in_s0, double in_h, Py_ssize_t n_in,
             const double[::1] zq, const double[::1] wq,
             int form, const double[::1] params, const double[::1] nodes,
             const double[::1] slopes, const double[::1] lam, const double[::1] psi,
             const double[::1] psi1):
    """Dense matrix of the transition operator by product integration of Phi."""
    cdef Rate r = _make_rate(form, params, nodes, slopes, lam, psi, psi1)
    cdef Py_ssize_t n_out = out_nodes.shape[0], nq = zq.shape[0]
    K = np.zeros((n_out, n_in))
    cdef double[:, ::1] Kv = K
    cdef Py_ssize_t j, q, k
    cdef double c, w, uk, uk1, pk, p1k, pk1, p1k1, D, A, B
    cdef double inv_h = 1.0 / in_h
    with nogil:
        for j in range(n_out):
            for q in range(nq):
                c = out_nodes[j] / zq[q]
                w = wq[q]
                uk = c - in_s0
                if uk <= r.b:
                    continue
                _psi_pair(&r, uk, &pk, &p1k)
                for k in range(n_in - 1):
                    if uk <= r.b:
                        break
                    uk1 = c - (in_s0 + (k + 1) * in_h)
                    _psi_pair(&r, uk1, &pk1, &p1k1)
                    D = (p1k - p1k1) * inv_h
                    A = D - pk
                    B = pk1 - D
                    if A > 0:
                        Kv[j, k] += w * A
                    if B > 0:
                        Kv[j, k + 1] += w * B
                    uk = uk1
                    pk = pk1
                    p1k = p1k1
    return K


def advect(const double[:, ::1] u_old, double[:, ::1] u_new, double a0, double ha,
           const double[::1] s_nodes, double dt, double factor):
    """Exact characteristic trace-back in a, linear interpolation, times ``factor``.

    Row 0 (a = 0) is left untouched; the caller fills it with the birth flux.
    """
    cdef Py_ssize_t na = u_old.shape[0], ns = u_old.shape[1], i, j, k
    cdef double e = exp(-dt), f = factor, inv_h = 1.0 / ha, s, ap, t
    with nogil:
        for i in range(1, na):
            for j in range(ns):
                s = s_nodes[j]
                ap = (a0 + i * ha + s) * e - s
                t = (ap - a0) * inv_h
                if t <= 0:
                    u_new[i, j] = f * u_old[0, j]
                    continue
                k = <Py_ssize_t> floor(t)
                if k >= na - 1:
                    u_new[i, j] = f * u_old[na - 1, j]
                    continue
                t -= k
                u_new[i, j] = f * ((1.0 - t) * u_old[k, j] + t * u_old[k + 1, j])


def mother_flux(const double[:, ::1] u, const double[::1] omega, double s0, double hs,
                const double[::1] a_nodes, const double[::1] y_nodes, double[::1] F):
    """F(y) = sum_k omega_k u(a_k, y - a_k), zero outside the s-range."""
    cdef Py_ssize_t na = u.shape[0], ns = u.shape[1], ny = y_nodes.shape[0]
    cdef Py_ssize_t m, k, i
    cdef double t, w, inv_h = 1.0 / hs
    with nogil:
        for m in range(ny):
            F[m] = 0.0
        # row-major sweep: each row of u is read contiguously
        for k in range(na):
            w = omega[k]
            if w == 0.0:
                continue
            for m in range(ny):
                t = (y_nodes[m] - a_nodes[k] - s0) * inv_h
                if t < 0.0 or t > ns - 1:
                    continue
                i = <Py_ssize_t> floor(t)
                if i >= ns - 1:
                    F[m] += w * u[k, ns - 1]
                    continue
                t -= i
                F[m] += w * ((1.0 - t) * u[k, i] + t * u[k, i + 1])
