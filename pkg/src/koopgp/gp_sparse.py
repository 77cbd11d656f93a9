"""Sparse variational GP with inducing trajectories.

The M inducing inputs are training pairs sampled without replacement
(distinct past windows).  For the spectral kernels only the inducing
*trajectory states* are optimized: the paired forecast times stay frozen
constants, so no time-valued inducing parameter exists anywhere in the
state.  The contextual baseline conversely optimizes its (t, x0) inducing
points, time included.

The variational posterior is N(m, S) over the inducing observations with
S = L L^T kept positive semidefinite by construction.  Training minimizes
the negative evidence bound

    sum_i N/B [ 1/2 log(2 pi s2) + (y_i - k_i^T Kuu^-1 m)^2 / (2 s2)
                + ktilde_ii / (2 s2) + beta_i^T S beta_i / (2 s2) ]
    + KL(N(m, S) || N(0, Kuu)),        beta_i = Kuu^-1 k_i,

over minibatches, in three phases: variational parameters only, everything
jointly (inducing states and kernel hyperparameters included), then
variational parameters again on training plus validation.  Initialization
follows the exact posterior on the inducing points after a short
marginal-likelihood fit.  All data terms carry 1/s2; written with
sigma_on^2 as a multiplier the bound would not collapse to the exact
marginal likelihood at M = N.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from . import _engine
from .data import Standardizer, TrainingSet
from .kernels import KernelConfig, default_config, pack_inputs
from .gp_exact import (
    Forecast,
    fit_exact,
    fold_hyper_grads,
    jittered_cholesky,
    optimize_hyperparameters,
    pack_hyper,
    posterior_covariance,
    unpack_hyper,
)
from .seeding import rng_for

__all__ = ["SparseState", "init_sparse", "sparse_predict", "sparse_loss", "train_sparse"]

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class SparseState:
    cfg: KernelConfig
    standardizer: Standardizer
    inducing_windows: np.ndarray   # (M, G, n) optimizable states
    inducing_times: np.ndarray     # (M,) frozen for spectral kernels
    m: np.ndarray                  # (M,)
    chol_s: np.ndarray             # (M, M) lower factor of S

    @property
    def n_inducing(self) -> int:
        return len(self.m)

    @property
    def s(self) -> np.ndarray:
        return self.chol_s @ self.chol_s.T

    def inducing_pack(self) -> _engine.PackedInputs:
        m = self.n_inducing
        return _engine.PackedInputs(
            self.cfg.window_grid,
            self.inducing_windows,
            np.arange(m, dtype=np.int64),
            self.inducing_times,
            _engine.detect_grouping(np.arange(m), self.inducing_times, m),
        )

    def to_dict(self) -> dict:
        return {
            "cfg": self.cfg.to_dict(),
            "standardizer": self.standardizer.to_dict(),
            "inducing_windows": self.inducing_windows.tolist(),
            "inducing_times": self.inducing_times.tolist(),
            "m": self.m.tolist(),
            "chol_s": self.chol_s.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SparseState":
        return cls(
            KernelConfig.from_dict(d["cfg"]),
            Standardizer.from_dict(d["standardizer"]),
            np.array(d["inducing_windows"], dtype=float),
            np.array(d["inducing_times"], dtype=float),
            np.array(d["m"], dtype=float),
            np.array(d["chol_s"], dtype=float),
        )


def init_sparse(
    training: TrainingSet,
    n_inducing: int,
    seed: int,
    kind: str = "kesd",
    n_eigenvalues: int = 64,
    cfg0: KernelConfig | None = None,
    pre_budget: int = 100,
    learning_rate: float = 0.05,
) -> SparseState:
    """Exact-posterior initialization on sampled inducing pairs.

    Samples n_inducing training pairs with distinct past windows, fits an
    exact GP on them by marginal likelihood (pre_budget evaluations), and
    sets m and S to that model's posterior at the inducing inputs.
    """
    n = training.n_pairs
    if n_inducing > n:
        raise ValueError(f"n_inducing {n_inducing} > number of pairs {n}")
    if n_inducing > training.n_windows:
        raise ValueError(
            f"n_inducing {n_inducing} > distinct windows {training.n_windows}; "
            "duplicate inducing windows would make K_uu singular"
        )
    rng = rng_for(seed, "inducing")
    chosen_windows = rng.permutation(training.n_windows)[:n_inducing]
    pair_idx = []
    for w in chosen_windows:
        cands = np.flatnonzero(training.pair_window == w)
        pair_idx.append(int(cands[rng.integers(len(cands))]))
    sub = training.subset(np.array(pair_idx))

    if cfg0 is None:
        spec_seed = int(rng_for(seed, "spectrum").integers(2**31 - 1))
        cfg0 = default_config(training, kind, n_eigenvalues, seed=spec_seed)
    cfg = cfg0
    if pre_budget >= 2:
        cfg = optimize_hyperparameters(
            sub, cfg0, budget=pre_budget, learning_rate=learning_rate
        )
    model = fit_exact(sub, cfg)
    mean, cov = posterior_covariance(model, sub)
    chol_s, _ = jittered_cholesky(cov, rel_start=1e-10)

    qpack = pack_inputs(cfg, sub)
    windows = qpack.windows[qpack.win_idx]
    return SparseState(cfg, training.standardizer, windows, sub.times.copy(), mean, chol_s)


def sparse_predict(
    state: SparseState,
    queries,
    include_noise: bool = False,
    destandardize: bool = True,
) -> Forecast:
    """mu = k_u^T Kuu^-1 m, var = k - k_u^T Kuu^-1 [Kuu - S] Kuu^-1 k_u."""
    kstate = _engine.build_state(state.cfg)
    upack = state.inducing_pack()
    a = _engine.gram(kstate, upack)
    l_uu, _ = jittered_cholesky(a)
    qp = pack_inputs(state.cfg, queries)
    grid = state.cfg.window_grid
    if len(qp.grid) != len(grid) or not np.allclose(qp.grid, grid, atol=1e-9):
        raise ValueError("query window grid does not match the model grid")
    ku = _engine.gram(kstate, qp, upack)  # (Q, M)
    mean = ku @ cho_solve((l_uu, True), state.m)
    w1 = solve_triangular(l_uu, ku.T, lower=True)
    ainv_ku = cho_solve((l_uu, True), ku.T)
    w2 = state.chol_s.T @ ainv_ku
    var = _engine.diag(kstate, qp) - np.einsum("ij,ij->j", w1, w1) + np.einsum(
        "ij,ij->j", w2, w2
    )
    var = np.maximum(var, 0.0)
    if include_noise:
        var = var + state.cfg.noise_var
    if destandardize:
        std = state.standardizer
        return Forecast(
            qp.times * std.time_scale,
            std.destandardize_targets(mean),
            std.destandardize_variance(var),
        )
    return Forecast(qp.times, mean, var)


def _loss_pieces(kstate, state, bpack, y, full_n, want_grads, need_z):
    """Bound value and (optionally) gradients for one batch."""
    upack = state.inducing_pack()
    cache_uu = cache_ub = None
    if kstate.kind == "contextual":
        a = _engine.gram(kstate, upack)
        c_mat = _engine.gram(kstate, upack, bpack)  # (M, B)
    else:
        if want_grads:
            cache_uu = _engine.psi_triple(kstate, upack, upack)
            cache_ub = _engine.psi_triple(kstate, upack, bpack)
            a = _engine.gram_from_psi(kstate, upack, upack, cache_uu[0], symmetrize=True)
            c_mat = _engine.gram_from_psi(kstate, upack, bpack, cache_ub[0])
        else:
            a = _engine.gram(kstate, upack)
            c_mat = _engine.gram(kstate, upack, bpack)
    l_uu, _ = jittered_cholesky(a)
    b = len(y)
    mm = state.n_inducing
    s2 = state.cfg.noise_var
    c0 = full_n / b
    c = c0 / s2

    kdiag = _engine.diag(kstate, bpack)
    a_inv = cho_solve((l_uu, True), np.eye(mm), check_finite=False)
    bm = a_inv @ c_mat                          # beta_i columns
    mt = a_inv @ state.m
    mu = c_mat.T @ mt
    r = y - mu
    ktilde = kdiag - np.einsum("ij,ij->j", c_mat, bm)
    s_mat = state.chol_s @ state.chol_s.T
    sb = s_mat @ bm
    s_quad = np.einsum("ij,ij->j", bm, sb)

    data_sum = float(r @ r + ktilde.sum() + s_quad.sum())
    data = 0.5 * c0 * b * math.log(2.0 * math.pi * s2) + 0.5 * c * data_sum

    linv_ls = solve_triangular(l_uu, state.chol_s, lower=True)
    tr_ainv_s = float((linv_ls**2).sum())
    logdet_a = 2.0 * float(np.sum(np.log(np.diag(l_uu))))
    logdet_s = 2.0 * float(np.sum(np.log(np.abs(np.diag(state.chol_s)))))
    kl = 0.5 * (tr_ainv_s + float(state.m @ mt) - mm + logdet_a - logdet_s)
    loss = data + kl
    if not want_grads:
        return loss, None

    g_m = -c * (bm @ r) + mt
    q = bm @ bm.T
    g_l = c * (q @ state.chol_s) + a_inv @ state.chol_s
    g_l[np.diag_indices(mm)] -= 1.0 / np.diag(state.chol_s)
    g_l = np.tril(g_l)
    g_log_noise = 0.5 * c0 * b - 0.5 * c * data_sum

    ainv_sb = a_inv @ sb
    gbar_c = -c * np.outer(mt, r) - c * bm + c * ainv_sb
    gbar_a = (
        c * np.outer(bm @ r, mt)
        + 0.5 * c * q
        - c * (ainv_sb @ bm.T)
        + 0.5 * (a_inv - a_inv @ s_mat @ a_inv - np.outer(mt, mt))
    )
    gbar_a = 0.5 * (gbar_a + gbar_a.T)

    kg_a = _engine.adjoint(
        kstate, upack, upack, gbar_a, need_xa=need_z, need_xb=need_z, cache=cache_uu
    )
    kg_c = _engine.adjoint(kstate, upack, bpack, gbar_c, need_xa=need_z, cache=cache_ub)
    kg_d = _engine.diag_adjoint(kstate, bpack, np.full(b, 0.5 * c))

    grads = {
        "m": g_m,
        "l": g_l,
        "log_noise": g_log_noise,
        "d_log_ls": kg_a.d_log_ls + kg_c.d_log_ls + kg_d.d_log_ls,
    }
    if kstate.kind == "contextual":
        grads["d_log_lt"] = kg_a.d_log_lt + kg_c.d_log_lt
        if need_z:
            grads["z"] = kg_a.d_xa + kg_a.d_xb + kg_c.d_xa
            grads["t_ind"] = kg_a.d_ta + kg_a.d_tb + kg_c.d_ta
    else:
        grads["d_s"] = kg_a.d_s + kg_c.d_s + kg_d.d_s
        grads["d_omega"] = kg_a.d_omega + kg_c.d_omega + kg_d.d_omega
        if need_z:
            grads["z"] = kg_a.d_xa + kg_a.d_xb + kg_c.d_xa
    return loss, grads


def sparse_loss(state: SparseState, batch: TrainingSet, full_size: int | None = None) -> float:
    """Negative evidence bound on a batch, scaled by full_size/len(batch)."""
    kstate = _engine.build_state(state.cfg)
    bpack = pack_inputs(state.cfg, batch)
    full_n = full_size if full_size is not None else batch.n_pairs
    loss, _ = _loss_pieces(kstate, state, bpack, batch.targets, full_n, False, False)
    return loss


def kl_divergence(state: SparseState) -> float:
    """KL(N(m, S) || N(0, K_uu)), the regularizer inside the bound."""
    kstate = _engine.build_state(state.cfg)
    a = _engine.gram(kstate, state.inducing_pack())
    l_uu, _ = jittered_cholesky(a)
    mm = state.n_inducing
    mt = cho_solve((l_uu, True), state.m)
    linv_ls = solve_triangular(l_uu, state.chol_s, lower=True)
    logdet_a = 2.0 * float(np.sum(np.log(np.diag(l_uu))))
    logdet_s = 2.0 * float(np.sum(np.log(np.abs(np.diag(state.chol_s)))))
    return 0.5 * (
        float((linv_ls**2).sum()) + float(state.m @ mt) - mm + logdet_a - logdet_s
    )


class _ParamVector:
    """Flatten/rebuild the trainable subset of a SparseState."""

    def __init__(self, state: SparseState, with_inducing: bool, with_hyper: bool):
        self.with_inducing = with_inducing
        self.with_hyper = with_hyper
        self.contextual = state.cfg.kind == "contextual"
        self.mm = state.n_inducing
        self.tril = np.tril_indices(self.mm)
        self.z_shape = state.inducing_windows.shape
        self.n_hyper = len(pack_hyper(state.cfg)) if with_hyper else 0

    def flatten(self, state: SparseState) -> np.ndarray:
        parts = [state.m, state.chol_s[self.tril]]
        if self.with_inducing:
            parts.append(state.inducing_windows.ravel())
            if self.contextual:
                parts.append(state.inducing_times)
        if self.with_hyper:
            parts.append(pack_hyper(state.cfg))
        return np.concatenate(parts)

    def rebuild(self, state: SparseState, theta: np.ndarray) -> SparseState:
        mm = self.mm
        m = theta[:mm]
        chol_s = np.zeros((mm, mm))
        k = mm + len(self.tril[0])
        chol_s[self.tril] = theta[mm:k]
        windows, times, cfg = state.inducing_windows, state.inducing_times, state.cfg
        if self.with_inducing:
            nz = int(np.prod(self.z_shape))
            windows = theta[k : k + nz].reshape(self.z_shape)
            k += nz
            if self.contextual:
                times = theta[k : k + mm]
                k += mm
        if self.with_hyper:
            cfg = unpack_hyper(theta[k : k + self.n_hyper], state.cfg)
        return SparseState(cfg, state.standardizer, windows, times, m, chol_s)

    def flatten_grads(self, state: SparseState, theta: np.ndarray, grads: dict) -> np.ndarray:
        parts = [grads["m"], grads["l"][self.tril]]
        if self.with_inducing:
            parts.append(grads["z"].ravel())
            if self.contextual:
                parts.append(grads["t_ind"])
        if self.with_hyper:
            kg = _engine.KernelGrads(
                grads["d_log_ls"],
                grads.get("d_s"),
                grads.get("d_omega"),
                d_log_lt=grads.get("d_log_lt", 0.0),
            )
            k = len(theta) - self.n_hyper
            parts.append(
                fold_hyper_grads(state.cfg, theta[k:], kg, grads["log_noise"])
            )
        return np.concatenate(parts)

    def lr_scale(self, n_theta: int, spectral_scale: float) -> np.ndarray:
        """Per-coordinate step multipliers; the spectral box coordinates get
        the same fast scaling as in the exact-GP optimizer."""
        scale = np.ones(n_theta)
        if self.with_hyper and not self.contextual:
            scale[n_theta - 4 :] = spectral_scale
        return scale


def _full_loss(state: SparseState, dataset: TrainingSet) -> float:
    return sparse_loss(state, dataset, full_size=dataset.n_pairs)


def _run_phase(
    state: SparseState,
    dataset: TrainingSet,
    steps: int,
    with_inducing: bool,
    with_hyper: bool,
    batch_size: int,
    learning_rate: float,
    rng: np.random.Generator,
    monitor,
    spectral_lr_scale: float = 5.0,
):
    spec = _ParamVector(state, with_inducing, with_hyper)
    theta = spec.flatten(state)
    prev_theta = theta.copy()
    m1 = np.zeros_like(theta)
    m2 = np.zeros_like(theta)
    scale = spec.lr_scale(len(theta), spectral_lr_scale)
    lr = learning_rate
    n = dataset.n_pairs
    b = min(batch_size, n)
    cur = state
    t = 0
    for step in range(steps):
        idx = rng.choice(n, b, replace=False) if b < n else np.arange(n)
        batch = dataset.subset(idx)
        try:
            kstate = _engine.build_state(cur.cfg)
            bpack = pack_inputs(cur.cfg, batch)
            loss, grads = _loss_pieces(
                kstate, cur, bpack, batch.targets, n, True, with_inducing
            )
            g = spec.flatten_grads(cur, theta, grads)
            ok = np.isfinite(loss) and np.all(np.isfinite(g))
        except (np.linalg.LinAlgError, ValueError):
            ok = False
        if not ok:
            # bad step: revert and shrink
            theta = prev_theta.copy()
            cur = spec.rebuild(cur, theta)
            lr *= 0.5
            continue
        t += 1
        m1 = 0.9 * m1 + 0.1 * g
        m2 = 0.999 * m2 + 0.001 * g * g
        step_vec = (m1 / (1 - 0.9**t)) / (np.sqrt(m2 / (1 - 0.999**t)) + 1e-8)
        prev_theta = theta.copy()
        theta = theta - (lr * scale) * step_vec
        cur = spec.rebuild(cur, theta)
        monitor(cur, step)
    return cur


def train_sparse(
    training: TrainingSet,
    validation: TrainingSet | None = None,
    n_inducing: int = 32,
    budgets: tuple[int, int, int] = (300, 500, 200),
    seed: int = 0,
    batch_size: int = 64,
    learning_rate: float = 0.02,
    kind: str = "kesd",
    n_eigenvalues: int = 64,
    cfg0: KernelConfig | None = None,
    pre_budget: int = 100,
    eval_every: int = 100,
    loss_log: list | None = None,
) -> SparseState:
    """Three-phase variational training.

    Phase 1 optimizes {m, L} only; phase 2 everything jointly (inducing
    states, kernel hyperparameters including the spectral box); phase 3
    re-optimizes {m, L} on training plus validation.  When no validation
    set is given, the last 10% of training pairs are split off.  The best
    state by full-data loss over all evaluation points (including the
    initial state) is returned.
    """
    if validation is None:
        n_val = max(1, int(0.1 * training.n_pairs))
        if training.n_pairs - n_val < 1:
            raise ValueError("training set too small to split validation")
        main = training.subset(np.arange(training.n_pairs - n_val))
        union = training
    else:
        main = training
        union = _concat(training, validation)

    state = init_sparse(
        main, n_inducing, seed, kind=kind, n_eigenvalues=n_eigenvalues,
        cfg0=cfg0, pre_budget=pre_budget,
    )
    best = [_full_loss(state, union), state]

    def monitor(cur, step):
        if eval_every and (step + 1) % eval_every == 0:
            val = _full_loss(cur, union)
            if loss_log is not None:
                loss_log.append(val)
            if val < best[0]:
                best[0], best[1] = val, cur

    phases = [
        (main, budgets[0], False, False),
        (main, budgets[1], True, True),
        (union, budgets[2], False, False),
    ]
    for i, (dataset, steps, w_ind, w_hyp) in enumerate(phases):
        rng = rng_for(seed, "phase", i)
        state = _run_phase(
            state, dataset, steps, w_ind, w_hyp, batch_size, learning_rate,
            rng, monitor,
        )
        val = _full_loss(state, union)
        if loss_log is not None:
            loss_log.append(val)
        if val < best[0]:
            best[0], best[1] = val, state
    return best[1]


def _concat(a: TrainingSet, b: TrainingSet) -> TrainingSet:
    if len(a.window_grid) != len(b.window_grid) or not np.allclose(
        a.window_grid, b.window_grid
    ):
        raise ValueError("cannot concatenate sets with different window grids")
    windows = np.concatenate([a.windows, b.windows])
    return TrainingSet(
        a.window_grid,
        windows,
        np.concatenate([a.pair_window, b.pair_window + a.n_windows]),
        np.concatenate([a.times, b.times]),
        np.concatenate([a.targets, b.targets]),
        a.standardizer,
    )
