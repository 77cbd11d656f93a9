"""Vectorized kernel evaluation and hand-rolled adjoints.

Inputs are packed columnwise: distinct past windows are stored once and
every (forecast time, window) pair references one by index.  The spectral
kernels factor through per-window-pair quantities

    psi[d, A, B] = sum_{g,h} w[d,g] * conj(w[d,h]) * k_se(x_A(tau_g), x_B(tau_h))

which are assembled once per window pair and then expanded with the
temporal features, so Gram assembly costs O(P^2 G^2 D + N^2 D) instead of
O(N^2 G^2 D).  The adjoint functions push a d(objective)/d(Gram) matrix
back to gradients in lengthscales, spectral box parameters and window
states; they are exercised against finite differences in the tests.

Naive per-pair evaluation lives in :mod:`koopgp.kernels` and is the
correctness oracle for everything here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backend import use_numba
from .spectral import generator_view

EXP_CLAMP = 30.0  # |real exponent| bound in e^{lambda t} and e^{-lambda tau}


# ---------------------------------------------------------------------------
# packed inputs
# ---------------------------------------------------------------------------


@dataclass
class PackedInputs:
    """Columnwise kernel inputs over one shared window grid."""

    grid: np.ndarray          # (G,)
    windows: np.ndarray       # (P, G, n)
    win_idx: np.ndarray       # (N,)
    times: np.ndarray         # (N,)
    group_times: np.ndarray | None = None  # (H,) when window-major uniform

    @property
    def n_inputs(self) -> int:
        return len(self.times)

    @property
    def n_windows(self) -> int:
        return self.windows.shape[0]

    def states(self) -> np.ndarray:
        """Per-input anchor states (last grid point)."""
        return self.windows[self.win_idx, -1, :]


def detect_grouping(win_idx, times, p):
    n = len(times)
    if p == 0 or n % p:
        return None
    h = n // p
    if not np.array_equal(win_idx, np.repeat(np.arange(p), h)):
        return None
    t = times.reshape(p, h)
    if not np.all(t == t[0]):
        return None
    return t[0].copy()


def pack_training_set(ts) -> PackedInputs:
    return PackedInputs(
        ts.window_grid,
        ts.windows,
        ts.pair_window,
        ts.times,
        detect_grouping(ts.pair_window, ts.times, ts.n_windows),
    )


def pack_pairs(pairs, grid) -> PackedInputs:
    """Pack a list of (time, past Trajectory); no window dedup."""
    grid = np.asarray(grid, dtype=float)
    windows, times = [], []
    for t, past in pairs:
        if past.states.shape[0] != len(grid) or not np.allclose(
            past.times, grid, rtol=0.0, atol=1e-9
        ):
            raise ValueError("past window grid does not match the kernel window grid")
        windows.append(past.states)
        times.append(float(t))
    win = np.stack(windows)
    idx = np.arange(len(pairs), dtype=np.int64)
    times = np.asarray(times)
    return PackedInputs(grid, win, idx, times, detect_grouping(idx, times, len(pairs)))


def collapse_pack(pack: PackedInputs) -> PackedInputs:
    """Keep only the anchor state; used by the SD and contextual kernels."""
    return PackedInputs(
        np.zeros(1),
        pack.windows[:, -1:, :],
        pack.win_idx,
        pack.times,
        pack.group_times,
    )


# ---------------------------------------------------------------------------
# kernel state: everything derived from a KernelConfig
# ---------------------------------------------------------------------------


@dataclass
class KernelState:
    kind: str
    inv_l2: np.ndarray        # (n,) 1/lengthscale^2
    sv: float
    grid: np.ndarray          # (G,)
    d_total: int = 0
    gen_lam: np.ndarray | None = None   # (Dg,)
    mult: np.ndarray | None = None      # (Dg,)
    partials: np.ndarray | None = None  # (Dg, 4)
    w: np.ndarray | None = None         # (Dg, G) quadrature weights
    v: np.ndarray | None = None         # (Dg, G) = grid * w
    inv_lt2: float | None = None        # contextual time factor


def trapezoid_coefficients(grid: np.ndarray) -> np.ndarray:
    """Probability-normalized trapezoid weights (sum to 1)."""
    g = len(grid)
    if g == 1:
        return np.ones(1)
    c = np.empty(g)
    c[0] = (grid[1] - grid[0]) / 2.0
    c[-1] = (grid[-1] - grid[-2]) / 2.0
    c[1:-1] = (grid[2:] - grid[:-2]) / 2.0
    return c / c.sum()


def weights_for(lam: np.ndarray, grid: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    """w[d, g] = exp(-lam_d * tau_g) * c_g with the real exponent clamped."""
    ex = -lam[:, None] * grid[None, :]
    re = np.clip(ex.real, -EXP_CLAMP, EXP_CLAMP)
    return np.exp(re + 1j * ex.imag) * coeffs[None, :]


def build_state(cfg) -> KernelState:
    inv_l2 = 1.0 / np.asarray(cfg.lengthscales, dtype=float) ** 2
    if cfg.kind == "contextual":
        return KernelState(
            "contextual",
            inv_l2,
            cfg.signal_var,
            np.asarray(cfg.window_grid, dtype=float),
            inv_lt2=1.0 / cfg.context_time_lengthscale**2,
        )
    lam, mult, partials = generator_view(cfg.spectrum)
    grid = np.asarray(cfg.window_grid, dtype=float)
    coeffs = trapezoid_coefficients(grid)
    w = weights_for(lam, grid, coeffs)
    return KernelState(
        cfg.kind,
        inv_l2,
        cfg.signal_var,
        grid,
        d_total=cfg.spectrum.size,
        gen_lam=lam,
        mult=mult,
        partials=partials,
        w=w,
        v=grid[None, :] * w,
    )


def temporal_matrix(state: KernelState, times: np.ndarray) -> np.ndarray:
    """U[i, d] = exp(lambda_d * t_i), real exponent clamped."""
    ex = state.gen_lam[None, :] * times[:, None]
    re = np.clip(ex.real, -EXP_CLAMP, EXP_CLAMP)
    return np.exp(re + 1j * ex.imag)


# ---------------------------------------------------------------------------
# base SE kernel blocks
# ---------------------------------------------------------------------------


def se_block(a: np.ndarray, b: np.ndarray, inv_l2: np.ndarray, sv: float) -> np.ndarray:
    """SE kernel between row sets a (ma, n) and b (mb, n)."""
    sa = a * np.sqrt(inv_l2)
    sb = b * np.sqrt(inv_l2)
    sq = (sa * sa).sum(axis=1)[:, None] + (sb * sb).sum(axis=1)[None, :] - 2.0 * (sa @ sb.T)
    np.maximum(sq, 0.0, out=sq)
    return sv * np.exp(-0.5 * sq)


def se_self_blocks(windows: np.ndarray, inv_l2: np.ndarray, sv: float) -> np.ndarray:
    """(P, G, G) SE blocks of each window against itself."""
    d = windows[:, :, None, :] - windows[:, None, :, :]
    sq = np.einsum("pghe,e->pgh", d * d, inv_l2)
    return sv * np.exp(-0.5 * sq)


# ---------------------------------------------------------------------------
# psi assembly
# ---------------------------------------------------------------------------


def psi(xa, xb, inv_l2, sv, wl, wr):
    """(Dg, PA, PB) with psi[d,A,B] = sum_gh wl[d,g] conj(wr[d,h]) E[Ag,Bh]."""
    if use_numba():
        from . import _numba_impl

        wprod = wl[:, :, None] * np.conj(wr)[:, None, :]
        return _numba_impl.psi_pairs(
            np.ascontiguousarray(xa), np.ascontiguousarray(xb),
            np.ascontiguousarray(inv_l2), float(sv), np.ascontiguousarray(wprod),
        )
    return _psi_numpy(xa, xb, inv_l2, sv, wl, wr)


def _psi_numpy(xa, xb, inv_l2, sv, wl, wr):
    pa, g, n = xa.shape
    pb = xb.shape[0]
    dg = wl.shape[0]
    out = np.empty((dg, pa, pb), dtype=complex)
    flat_b = xb.reshape(pb * g, n)
    wrc_t = np.conj(wr).T  # (G, Dg)
    block = max(1, int(8.0e6 / max(1, pb * g)))
    for a0 in range(0, pa, block):
        a1 = min(pa, a0 + block)
        e = se_block(xa[a0:a1].reshape(-1, n), flat_b, inv_l2, sv)  # (pa_c*G, PB*G)
        m1 = (e.reshape(-1, g) @ wrc_t).reshape(a1 - a0, g, pb, dg)
        out[:, a0:a1, :] = np.einsum("dg,agbd->dab", wl, m1, optimize=True)
    return out


def _contract_weights(e, pa, pb, g, wl, wr):
    m1 = (e.reshape(-1, g) @ np.conj(wr).T).reshape(pa, g, pb, wl.shape[0])
    return np.einsum("dg,agbd->dab", wl, m1, optimize=True)


def psi_triple(state: KernelState, pack_a: PackedInputs, pack_b: PackedInputs):
    """(psi, phi_p, phi_q, e_mat): the three weighted window contractions of
    the gradient path plus the shared SE block matrix."""
    xa, xb = pack_a.windows, pack_b.windows
    w, v = state.w, state.v
    if use_numba():
        from . import _numba_impl

        wprods = np.stack(
            [
                w[:, :, None] * np.conj(w)[:, None, :],
                v[:, :, None] * np.conj(w)[:, None, :],
                w[:, :, None] * np.conj(v)[:, None, :],
            ]
        )
        out, e_mat = _numba_impl.psi_triple_pairs(
            np.ascontiguousarray(xa), np.ascontiguousarray(xb),
            np.ascontiguousarray(state.inv_l2), float(state.sv),
            np.ascontiguousarray(wprods),
        )
        return out[0], out[1], out[2], e_mat
    pa, g, n = xa.shape
    pb = xb.shape[0]
    e = se_block(xa.reshape(-1, n), xb.reshape(-1, n), state.inv_l2, state.sv)
    return (
        _contract_weights(e, pa, pb, g, w, w),
        _contract_weights(e, pa, pb, g, v, w),
        _contract_weights(e, pa, pb, g, w, v),
        e,
    )


# ---------------------------------------------------------------------------
# Gram assembly (spectral kernels)
# ---------------------------------------------------------------------------


def gram_kesd(state: KernelState, pack_a: PackedInputs, pack_b: PackedInputs | None = None):
    same = pack_b is None
    pb = pack_a if same else pack_b
    if pack_a.group_times is not None and pb.group_times is not None:
        k = _gram_grouped(state, pack_a, pb)
    else:
        k = _gram_general(state, pack_a, pb)
    if same:
        k = 0.5 * (k + k.T)
    return k


def gram_from_psi(state, pack_a, pack_b, psi_0, symmetrize=False):
    """Assemble the Gram from a precomputed psi tensor."""
    grouped = pack_a.group_times is not None and pack_b.group_times is not None
    scale = state.mult / state.d_total
    if grouped:
        ta, tb = pack_a.group_times, pack_b.group_times
        ha, hb = len(ta), len(tb)
        ua = temporal_matrix(state, ta)
        ub = temporal_matrix(state, tb)
        t2 = ((ua * scale)[:, None, :] * np.conj(ub)[None, :, :]).reshape(ha * hb, -1)
        pa, pb = pack_a.n_windows, pack_b.n_windows
        z = t2 @ psi_0.reshape(psi_0.shape[0], -1)
        k = z.real.reshape(ha, hb, pa, pb).transpose(2, 0, 3, 1).reshape(pa * ha, pb * hb)
    else:
        ua = temporal_matrix(state, pack_a.times)
        ub = temporal_matrix(state, pack_b.times)
        na, nb = pack_a.n_inputs, pack_b.n_inputs
        k = np.zeros((na, nb))
        for d in range(len(state.gen_lam)):
            pd = psi_0[d][np.ix_(pack_a.win_idx, pack_b.win_idx)]
            k += scale[d] * (ua[:, d][:, None] * np.conj(ub[:, d])[None, :] * pd).real
    if symmetrize:
        k = 0.5 * (k + k.T)
    return k


def _gram_grouped(state, pack_a, pack_b):
    ta, tb = pack_a.group_times, pack_b.group_times
    ha, hb = len(ta), len(tb)
    pa, pb = pack_a.n_windows, pack_b.n_windows
    ua = temporal_matrix(state, ta)
    ub = temporal_matrix(state, tb)
    scale = state.mult / state.d_total
    t2 = ((ua * scale)[:, None, :] * np.conj(ub)[None, :, :]).reshape(ha * hb, -1)
    out = np.empty((pa * ha, pb * hb))
    block = max(1, int(4.0e6 / max(1, pb * hb * ha)))
    for a0 in range(0, pa, block):
        a1 = min(pa, a0 + block)
        psi_c = psi(pack_a.windows[a0:a1], pack_b.windows, state.inv_l2, state.sv,
                    state.w, state.w)
        z = t2 @ psi_c.reshape(psi_c.shape[0], -1)  # (ha*hb, pa_c*pb)
        kc = z.real.reshape(ha, hb, a1 - a0, pb).transpose(2, 0, 3, 1)
        out[a0 * ha : a1 * ha] = kc.reshape((a1 - a0) * ha, pb * hb)
    return out


def _gram_general(state, pack_a, pack_b):
    ua = temporal_matrix(state, pack_a.times)
    ub = temporal_matrix(state, pack_b.times)
    psi_all = psi(pack_a.windows, pack_b.windows, state.inv_l2, state.sv, state.w, state.w)
    na, nb = pack_a.n_inputs, pack_b.n_inputs
    out = np.zeros((na, nb))
    scale = state.mult / state.d_total
    block = max(1, int(4.0e6 / max(1, nb)))
    for i0 in range(0, na, block):
        i1 = min(na, i0 + block)
        rows = np.zeros((i1 - i0, nb))
        ia = pack_a.win_idx[i0:i1]
        for d in range(len(state.gen_lam)):
            pd = psi_all[d][np.ix_(ia, pack_b.win_idx)]
            rows += scale[d] * (
                ua[i0:i1, d][:, None] * np.conj(ub[:, d])[None, :] * pd
            ).real
        out[i0:i1] = rows
    return out


def diag_kesd(state: KernelState, pack: PackedInputs) -> np.ndarray:
    e_self = se_self_blocks(pack.windows, state.inv_l2, state.sv)
    psi_self = np.einsum("dg,pgh,dh->dp", state.w, e_self, np.conj(state.w), optimize=True)
    u = temporal_matrix(state, pack.times)
    w2 = (np.abs(u) ** 2) * (state.mult / state.d_total)[None, :]
    return np.einsum("id,di->i", w2, psi_self.real[:, pack.win_idx])


# ---------------------------------------------------------------------------
# adjoints (spectral kernels)
# ---------------------------------------------------------------------------


@dataclass
class KernelGrads:
    d_log_ls: np.ndarray                 # (n,)
    d_s: np.ndarray | None = None        # (Dg,) per-generator real-part grad
    d_omega: np.ndarray | None = None    # (Dg,)
    d_xa: np.ndarray | None = None       # (PA, G, n)
    d_xb: np.ndarray | None = None       # (PB, G, n)
    d_log_lt: float = 0.0                # contextual only
    d_ta: np.ndarray | None = None       # contextual inducing times
    d_tb: np.ndarray | None = None


def _collapse_grouped(gbar, pa, ha, pb, hb, ua, ub):
    g2 = gbar.reshape(pa, ha, pb, hb).transpose(0, 2, 1, 3).reshape(pa * pb, ha * hb)
    t2 = (ua[:, None, :] * np.conj(ub)[None, :, :]).reshape(ha * hb, -1)
    return (g2 @ t2).reshape(pa, pb, -1).transpose(2, 0, 1)


def _collapse_general(gbar, idx_a, idx_b, pa, pb, ua, ub):
    dg = ua.shape[1]
    out = np.empty((dg, pa, pb), dtype=complex)
    for d in range(dg):
        x = gbar * np.outer(ua[:, d], np.conj(ub[:, d]))
        rows = np.zeros((pa, x.shape[1]), dtype=complex)
        np.add.at(rows, idx_a, x)
        cols = np.zeros((pb, pa), dtype=complex)
        np.add.at(cols, idx_b, rows.T)
        out[d] = cols.T
    return out


def _collapse(state, gbar, pack_a, pack_b):
    """C[d,A,B] = sum_ij gbar_ij ua[i,d] conj(ub[j,d]) aggregated to windows.

    Returns (c, c_ta, c_tb) where the latter two fold in a factor t_i
    (left slot) resp. t_j (right slot); they feed the temporal part of the
    spectral-parameter gradients.
    """
    grouped = pack_a.group_times is not None and pack_b.group_times is not None
    pa, pb = pack_a.n_windows, pack_b.n_windows
    if grouped:
        ta, tb = pack_a.group_times, pack_b.group_times
        ua, ub = temporal_matrix(state, ta), temporal_matrix(state, tb)
        ha, hb = len(ta), len(tb)
        dg = ua.shape[1]
        # one pass: stack the three temporal weightings into 3*Dg columns
        g2 = gbar.reshape(pa, ha, pb, hb).transpose(0, 2, 1, 3).reshape(pa * pb, ha * hb)
        ubc = np.conj(ub)
        t2 = np.concatenate(
            [
                (ua[:, None, :] * ubc[None, :, :]).reshape(ha * hb, dg),
                ((ta[:, None] * ua)[:, None, :] * ubc[None, :, :]).reshape(ha * hb, dg),
                (ua[:, None, :] * (tb[:, None] * ubc)[None, :, :]).reshape(ha * hb, dg),
            ],
            axis=1,
        )
        c_all = (g2 @ t2).reshape(pa, pb, 3, dg).transpose(2, 3, 0, 1)
        c, c_ta, c_tb = c_all[0], c_all[1], c_all[2]
    else:
        ua = temporal_matrix(state, pack_a.times)
        ub = temporal_matrix(state, pack_b.times)
        ia, ib = pack_a.win_idx, pack_b.win_idx
        c = _collapse_general(gbar, ia, ib, pa, pb, ua, ub)
        c_ta = _collapse_general(gbar, ia, ib, pa, pb, pack_a.times[:, None] * ua, ub)
        c_tb = _collapse_general(gbar, ia, ib, pa, pb, ua, pack_b.times[:, None] * ub)
    return c, c_ta, c_tb


def _state_adjoint_reductions(m_e, flat_a, flat_b, inv_l2, need_xa, need_xb):
    """Lengthscale and window-state grads from the state-level adjoint.

    m_e is the elementwise product of the state adjoint and the SE block;
    squared-distance sums reduce to GEMV forms, so the (PA*G, PB*G, n)
    difference tensor is never materialized.
    """
    rs = m_e.sum(axis=1)
    cs = m_e.sum(axis=0)
    n = flat_a.shape[1]
    d_log_ls = np.empty(n)
    d_xa = np.empty_like(flat_a) if need_xa else None
    d_xb = np.empty_like(flat_b) if need_xb else None
    for e in range(n):
        a_e, b_e = flat_a[:, e], flat_b[:, e]
        meb = m_e @ b_e
        d_log_ls[e] = (rs @ (a_e * a_e) + cs @ (b_e * b_e) - 2.0 * (a_e @ meb)) * inv_l2[e]
        if need_xa:
            d_xa[:, e] = -inv_l2[e] * (a_e * rs - meb)
        if need_xb:
            d_xb[:, e] = -inv_l2[e] * (b_e * cs - m_e.T @ a_e)
    return d_log_ls, d_xa, d_xb


def adjoint_kesd(
    state: KernelState,
    pack_a: PackedInputs,
    pack_b: PackedInputs,
    gbar: np.ndarray,
    need_xa: bool = False,
    need_xb: bool = False,
    cache=None,
) -> KernelGrads:
    """Push d(objective)/d(Gram) back to kernel parameters.

    Lengthscale and spectral gradients cover the full dependence of each
    Gram entry (both argument slots); window-state gradients are per slot,
    so a caller differentiating K(X, X) must sum d_xa and d_xb.  ``cache``
    optionally carries a precomputed psi_triple result.
    """
    c, c_ta, c_tb = _collapse(state, gbar, pack_a, pack_b)
    xa, xb = pack_a.windows, pack_b.windows
    psi_0, phi_p, phi_q, e = cache if cache is not None else psi_triple(state, pack_a, pack_b)
    scale = state.mult / state.d_total

    s_t = ((c_ta + c_tb) * psi_0).sum(axis=(1, 2))
    s_dw = (c * (phi_p + phi_q)).sum(axis=(1, 2))
    d_s = scale * (s_t - s_dw).real

    w_t = ((c_ta - c_tb) * psi_0).sum(axis=(1, 2))
    w_dw = (c * (phi_p - phi_q)).sum(axis=(1, 2))
    d_omega = scale * (1j * w_t - 1j * w_dw).real

    # state-level adjoint M[Ag,Bh] = sum_d scale_d Re(c[d,A,B] w[d,g] conj(w[d,h]))
    cw = c * scale[:, None, None]
    pa, g, n = xa.shape
    pb = xb.shape[0]
    if use_numba():
        from . import _numba_impl

        wprod = state.w[:, :, None] * np.conj(state.w)[:, None, :]
        d_log_ls, d_xa, d_xb = _numba_impl.adjoint_reductions(
            np.ascontiguousarray(xa), np.ascontiguousarray(xb),
            np.ascontiguousarray(state.inv_l2), float(state.sv),
            np.ascontiguousarray(cw), np.ascontiguousarray(wprod),
            need_xa, need_xb,
        )
        return KernelGrads(
            d_log_ls, d_s, d_omega,
            d_xa if need_xa else None,
            d_xb if need_xb else None,
        )
    m = np.einsum("dab,dg,dh->agbh", cw, state.w, np.conj(state.w), optimize=True).real
    m = m.reshape(pa * g, pb * g)
    flat_a = xa.reshape(pa * g, n)
    flat_b = xb.reshape(pb * g, n)
    d_log_ls, d_xa, d_xb = _state_adjoint_reductions(
        m * e, flat_a, flat_b, state.inv_l2, need_xa, need_xb
    )
    return KernelGrads(
        d_log_ls,
        d_s,
        d_omega,
        d_xa.reshape(pa, g, n) if need_xa else None,
        d_xb.reshape(pb, g, n) if need_xb else None,
    )


def diag_adjoint_kesd(state: KernelState, pack: PackedInputs, dk: np.ndarray) -> KernelGrads:
    """Gradients of sum_i dk_i * k(z_i, z_i); no window-state grads."""
    u = temporal_matrix(state, pack.times)
    abs_u2 = np.abs(u) ** 2
    p = pack.n_windows
    dg = len(state.gen_lam)
    c = np.zeros((p, dg))
    np.add.at(c, pack.win_idx, dk[:, None] * abs_u2)
    c_t = np.zeros((p, dg))
    np.add.at(c_t, pack.win_idx, (dk * 2.0 * pack.times)[:, None] * abs_u2)
    c, c_t = c.T, c_t.T  # (Dg, P)

    e_self = se_self_blocks(pack.windows, state.inv_l2, state.sv)
    psi_self = np.einsum("dg,pgh,dh->dp", state.w, e_self, np.conj(state.w), optimize=True)
    phi_p = np.einsum("dg,pgh,dh->dp", state.v, e_self, np.conj(state.w), optimize=True)
    phi_q = np.einsum("dg,pgh,dh->dp", state.w, e_self, np.conj(state.v), optimize=True)
    scale = state.mult / state.d_total

    d_s = scale * ((c_t * psi_self).sum(axis=1) - (c * (phi_p + phi_q)).sum(axis=1)).real
    d_omega = scale * (-1j * (c * (phi_p - phi_q)).sum(axis=1)).real

    cw = c * scale[:, None]
    m_self = np.einsum("dp,dg,dh->pgh", cw, state.w, np.conj(state.w), optimize=True).real
    m_e = m_self * e_self
    n = pack.windows.shape[2]
    d_log_ls = np.empty(n)
    for e in range(n):
        diff = pack.windows[:, :, None, e] - pack.windows[:, None, :, e]
        d_log_ls[e] = (m_e * diff * diff).sum() * state.inv_l2[e]
    return KernelGrads(d_log_ls, d_s, d_omega)


# ---------------------------------------------------------------------------
# contextual kernel
# ---------------------------------------------------------------------------


def _ctx_expand(pack: PackedInputs):
    return pack.windows[pack.win_idx, -1, :], pack.times


def gram_ctx(state: KernelState, pack_a: PackedInputs, pack_b: PackedInputs | None = None):
    same = pack_b is None
    pb = pack_a if same else pack_b
    xa, ta = _ctx_expand(pack_a)
    xb, tb = _ctx_expand(pb)
    kx = se_block(xa, xb, state.inv_l2, state.sv)
    kt = se_block(ta[:, None], tb[:, None], np.array([state.inv_lt2]), 1.0)
    k = kx * kt
    if same:
        k = 0.5 * (k + k.T)
    return k


def diag_ctx(state: KernelState, pack: PackedInputs) -> np.ndarray:
    return np.full(pack.n_inputs, state.sv)


def adjoint_ctx(
    state: KernelState,
    pack_a: PackedInputs,
    pack_b: PackedInputs,
    gbar: np.ndarray,
    need_xa: bool = False,
    need_xb: bool = False,
) -> KernelGrads:
    xa, ta = _ctx_expand(pack_a)
    xb, tb = _ctx_expand(pack_b)
    kx = se_block(xa, xb, state.inv_l2, state.sv)
    kt = se_block(ta[:, None], tb[:, None], np.array([state.inv_lt2]), 1.0)
    gk = gbar * kx * kt
    rs = gk.sum(axis=1)
    cs = gk.sum(axis=0)

    n = xa.shape[1]
    d_log_ls = np.empty(n)
    d_xa_in = np.empty_like(xa) if need_xa else None
    d_xb_in = np.empty_like(xb) if need_xb else None
    for e in range(n):
        a_e, b_e = xa[:, e], xb[:, e]
        gkb = gk @ b_e
        d_log_ls[e] = (rs @ (a_e * a_e) + cs @ (b_e * b_e) - 2.0 * (a_e @ gkb)) * state.inv_l2[e]
        if need_xa:
            d_xa_in[:, e] = -state.inv_l2[e] * (a_e * rs - gkb)
        if need_xb:
            d_xb_in[:, e] = -state.inv_l2[e] * (b_e * cs - gk.T @ a_e)
    gkt = gk @ tb
    d_log_lt = (rs @ (ta * ta) + cs @ (tb * tb) - 2.0 * (ta @ gkt)) * state.inv_lt2
    d_ta = -state.inv_lt2 * (ta * rs - gkt) if need_xa else None
    d_tb = -state.inv_lt2 * (tb * cs - gk.T @ ta) if need_xb else None

    def scatter(vals, pack):
        out = np.zeros_like(pack.windows[:, -1, :])
        np.add.at(out, pack.win_idx, vals)
        return out[:, None, :]

    return KernelGrads(
        d_log_ls,
        d_xa=scatter(d_xa_in, pack_a) if need_xa else None,
        d_xb=scatter(d_xb_in, pack_b) if need_xb else None,
        d_log_lt=float(d_log_lt),
        d_ta=_scatter_1d(d_ta, pack_a) if need_xa else None,
        d_tb=_scatter_1d(d_tb, pack_b) if need_xb else None,
    )


def _scatter_1d(vals, pack):
    out = np.zeros(pack.n_windows)
    np.add.at(out, pack.win_idx, vals)
    return out


# ---------------------------------------------------------------------------
# dispatch by kernel kind
# ---------------------------------------------------------------------------


def gram(state, pack_a, pack_b=None):
    if state.kind == "contextual":
        return gram_ctx(state, pack_a, pack_b)
    return gram_kesd(state, pack_a, pack_b)


def diag(state, pack):
    if state.kind == "contextual":
        return diag_ctx(state, pack)
    return diag_kesd(state, pack)


def adjoint(state, pack_a, pack_b, gbar, need_xa=False, need_xb=False, cache=None):
    if state.kind == "contextual":
        return adjoint_ctx(state, pack_a, pack_b, gbar, need_xa, need_xb)
    return adjoint_kesd(state, pack_a, pack_b, gbar, need_xa, need_xb, cache)


def diag_adjoint(state, pack, dk):
    if state.kind == "contextual":
        n = pack.windows.shape[2]
        return KernelGrads(np.zeros(n))
    return diag_adjoint_kesd(state, pack, dk)
