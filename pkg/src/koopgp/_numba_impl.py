"""Numba implementations of the hot kernels.

Imported lazily and only when the numba backend is active; every function
here has a pure-numpy twin in :mod:`koopgp._engine` or
:mod:`koopgp.dynamics`.
"""

import numpy as np
from numba import njit, prange


@njit(cache=True)
def rk4_linear2d(x0, dt, steps, n_sub):
    b = x0.shape[0]
    out = np.empty((steps + 1, b, 2))
    out[0] = x0
    h = dt / n_sub
    for i in range(b):
        x1 = x0[i, 0]
        x2 = x0[i, 1]
        for k in range(steps):
            for _ in range(n_sub):
                k1a = -6.0 * x2
                k1b = 6.0 * x1
                a = x1 + 0.5 * h * k1a
                bb = x2 + 0.5 * h * k1b
                k2a = -6.0 * bb
                k2b = 6.0 * a
                a = x1 + 0.5 * h * k2a
                bb = x2 + 0.5 * h * k2b
                k3a = -6.0 * bb
                k3b = 6.0 * a
                a = x1 + h * k3a
                bb = x2 + h * k3b
                k4a = -6.0 * bb
                k4b = 6.0 * a
                x1 = x1 + (h / 6.0) * (k1a + 2.0 * k2a + 2.0 * k3a + k4a)
                x2 = x2 + (h / 6.0) * (k1b + 2.0 * k2b + 2.0 * k3b + k4b)
            out[k + 1, i, 0] = x1
            out[k + 1, i, 1] = x2
    return out


@njit(cache=True)
def rk4_predator_prey(x0, dt, steps, n_sub, r1, g1, r2, g2, c, s1, s2):
    b = x0.shape[0]
    out = np.empty((steps + 1, b, 2))
    out[0] = x0
    h = dt / n_sub
    for i in range(b):
        x1 = x0[i, 0]
        x2 = x0[i, 1]
        for k in range(steps):
            for _ in range(n_sub):
                k1a = r1 * x1 + s1 * c * g1 * x1 * x2
                k1b = -r2 * x2 + s2 * c * g2 * x1 * x2
                a = x1 + 0.5 * h * k1a
                bb = x2 + 0.5 * h * k1b
                k2a = r1 * a + s1 * c * g1 * a * bb
                k2b = -r2 * bb + s2 * c * g2 * a * bb
                a = x1 + 0.5 * h * k2a
                bb = x2 + 0.5 * h * k2b
                k3a = r1 * a + s1 * c * g1 * a * bb
                k3b = -r2 * bb + s2 * c * g2 * a * bb
                a = x1 + h * k3a
                bb = x2 + h * k3b
                k4a = r1 * a + s1 * c * g1 * a * bb
                k4b = -r2 * bb + s2 * c * g2 * a * bb
                x1 = x1 + (h / 6.0) * (k1a + 2.0 * k2a + 2.0 * k3a + k4a)
                x2 = x2 + (h / 6.0) * (k1b + 2.0 * k2b + 2.0 * k3b + k4b)
            out[k + 1, i, 0] = x1
            out[k + 1, i, 1] = x2
    return out


@njit(cache=True, parallel=True)
def psi_pairs(xa, xb, inv_l2, sv, wprod):
    """Doubly weighted base-kernel contraction per window pair.

    out[d, A, B] = sum_{g,h} wprod[d, g, h] * k_se(xa[A, g], xb[B, h])
    """
    pa, g, n = xa.shape
    pb = xb.shape[0]
    dg = wprod.shape[0]
    out = np.empty((dg, pa, pb), dtype=np.complex128)
    for ab in prange(pa * pb):
        a = ab // pb
        b = ab % pb
        eloc = np.empty((g, g))
        for gg in range(g):
            for hh in range(g):
                s = 0.0
                for e in range(n):
                    d = xa[a, gg, e] - xb[b, hh, e]
                    s += d * d * inv_l2[e]
                eloc[gg, hh] = sv * np.exp(-0.5 * s)
        for dd in range(dg):
            acc = 0.0 + 0.0j
            for gg in range(g):
                for hh in range(g):
                    acc += wprod[dd, gg, hh] * eloc[gg, hh]
            out[dd, a, b] = acc
    return out


@njit(cache=True, parallel=True)
def adjoint_reductions(xa, xb, inv_l2, sv, cw, wprod, need_xa, need_xb):
    """Lengthscale and window-state gradients from the collapsed adjoint.

    The state-level adjoint M[Ag,Bh] = sum_d Re(cw[d,A,B] wprod[d,g,h]) is
    formed blockwise against a recomputed SE block, so the (PA*G, PB*G)
    matrices never materialize.
    """
    pa, g, n = xa.shape
    pb = xb.shape[0]
    dg = wprod.shape[0]
    d_ls_part = np.zeros((pa, n))
    d_xa = np.zeros((pa, g, n))
    d_xb_part = np.zeros((pa, pb, g, n))
    for a in prange(pa):
        mloc = np.empty((g, g))
        for b in range(pb):
            for gg in range(g):
                for hh in range(g):
                    acc = 0.0
                    for dd in range(dg):
                        acc += (cw[dd, a, b] * wprod[dd, gg, hh]).real
                    mloc[gg, hh] = acc
            for gg in range(g):
                for hh in range(g):
                    s = 0.0
                    for e in range(n):
                        d = xa[a, gg, e] - xb[b, hh, e]
                        s += d * d * inv_l2[e]
                    me = mloc[gg, hh] * sv * np.exp(-0.5 * s)
                    for e in range(n):
                        diff = xa[a, gg, e] - xb[b, hh, e]
                        d_ls_part[a, e] += me * diff * diff * inv_l2[e]
                        if need_xa:
                            d_xa[a, gg, e] -= inv_l2[e] * me * diff
                        if need_xb:
                            d_xb_part[a, b, hh, e] += inv_l2[e] * me * diff
    d_log_ls = d_ls_part.sum(axis=0)
    d_xb = d_xb_part.sum(axis=0) if need_xb else np.zeros((pb, g, n))
    return d_log_ls, d_xa, d_xb


@njit(cache=True, parallel=True)
def psi_triple_pairs(xa, xb, inv_l2, sv, wprods):
    """Three weighted contractions sharing one base-kernel evaluation.

    wprods is (3, Dg, G, G); also returns the SE block matrix (PA*G, PB*G)
    for the gradient reductions downstream.
    """
    pa, g, n = xa.shape
    pb = xb.shape[0]
    dg = wprods.shape[1]
    out = np.empty((3, dg, pa, pb), dtype=np.complex128)
    e_mat = np.empty((pa * g, pb * g))
    for ab in prange(pa * pb):
        a = ab // pb
        b = ab % pb
        eloc = np.empty((g, g))
        for gg in range(g):
            for hh in range(g):
                s = 0.0
                for e in range(n):
                    d = xa[a, gg, e] - xb[b, hh, e]
                    s += d * d * inv_l2[e]
                k = sv * np.exp(-0.5 * s)
                eloc[gg, hh] = k
                e_mat[a * g + gg, b * g + hh] = k
        for w in range(3):
            for dd in range(dg):
                acc = 0.0 + 0.0j
                for gg in range(g):
                    for hh in range(g):
                        acc += wprods[w, dd, gg, hh] * eloc[gg, hh]
                out[w, dd, a, b] = acc
    return out, e_mat
