"""Covariance functions over (forecast time, past window) inputs.

Three kinds ship:

* ``kesd`` — the trajectory-equivariant spectral kernel: per eigenvalue, an
  LTI temporal feature exp(lambda t) exp(conj(lambda) t') times the base SE
  kernel doubly symmetrized over the past window by trapezoid quadrature.
* ``sd`` — the same spectral sum with the window collapsed to its anchor
  state (singleton grid), so the symmetrization reduces to evaluation at
  time 0.
* ``contextual`` — the separable SE(t, t') * SE(x0, x0') baseline.

The spectral sum is averaged over the D eigenvalues so the prior variance
stays O(signal_var) as D grows, and its real part is returned; with a
conjugate-closed spectrum the imaginary part already vanishes to roundoff,
so Re[] is a safeguard rather than a correction.

:func:`covariance` is the deliberately naive reference evaluation (a
literal sum over all D eigenvalues); :func:`gram` runs the fast engine and
is tested against it.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import _engine
from .data import TrainingSet, Trajectory
from .spectral import SpectralPrior, Spectrum, default_prior, sample_spectrum

__all__ = [
    "KernelConfig",
    "QuadratureWeights",
    "se_base",
    "temporal_feature",
    "quadrature_weights",
    "symmetrized_cross",
    "covariance",
    "gram",
    "default_config",
]

KINDS = ("kesd", "sd", "contextual")


@dataclass(frozen=True)
class KernelConfig:
    """Hyperparameters of one covariance function.

    ``window_grid`` is the shared past grid on [tau_s, 0]; for the sd and
    contextual kinds it must be the singleton {0}.
    """

    kind: str
    lengthscales: np.ndarray
    signal_var: float = 1.0
    noise_var: float = 1.0
    window_grid: np.ndarray = None
    spectrum: Spectrum | None = None
    context_time_lengthscale: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if np.any(ls <= 0):
            raise ValueError("lengthscales must be strictly positive")
        object.__setattr__(self, "lengthscales", ls)
        if self.signal_var <= 0 or self.noise_var <= 0:
            raise ValueError("signal_var and noise_var must be strictly positive")
        grid = np.zeros(1) if self.window_grid is None else np.asarray(self.window_grid, float)
        if grid[-1] != 0.0 or np.any(np.diff(grid) <= 0):
            raise ValueError("window_grid must be sorted and end at 0")
        if self.kind in ("sd", "contextual") and len(grid) != 1:
            raise ValueError(f"{self.kind} kernel requires the singleton grid {{0}}")
        object.__setattr__(self, "window_grid", grid)
        if self.kind in ("kesd", "sd") and self.spectrum is None:
            raise ValueError(f"{self.kind} kernel requires a spectrum")
        if self.kind == "contextual":
            if self.context_time_lengthscale is None or self.context_time_lengthscale <= 0:
                raise ValueError("contextual kernel requires a positive time lengthscale")

    def replace(self, **kw) -> "KernelConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "lengthscales": self.lengthscales.tolist(),
            "signal_var": self.signal_var,
            "noise_var": self.noise_var,
            "window_grid": self.window_grid.tolist(),
            "spectrum": None if self.spectrum is None else self.spectrum.to_dict(),
            "context_time_lengthscale": self.context_time_lengthscale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KernelConfig":
        spec = d.get("spectrum")
        return cls(
            d["kind"],
            np.array(d["lengthscales"], dtype=float),
            d["signal_var"],
            d["noise_var"],
            np.array(d["window_grid"], dtype=float),
            None if spec is None else Spectrum.from_dict(spec),
            d.get("context_time_lengthscale"),
        )


@dataclass(frozen=True)
class QuadratureWeights:
    """Per-eigenvalue complex quadrature weights over the window grid."""

    weights: np.ndarray  # (D, G)
    grid: np.ndarray     # (G,)


def se_base(x, xp, lengthscales, signal_var: float = 1.0) -> float:
    """Squared-exponential base kernel with per-coordinate lengthscales."""
    x = np.asarray(x, dtype=float)
    xp = np.asarray(xp, dtype=float)
    if x.shape != xp.shape:
        raise ValueError("se_base: input dimensions disagree")
    d = (x - xp) / np.asarray(lengthscales, dtype=float)
    return float(signal_var * np.exp(-0.5 * np.sum(d * d)))


def temporal_feature(lam: complex, t: float, tp: float) -> complex:
    """exp(lam*t) * exp(conj(lam)*t'); real exponents clamped at +/-30."""
    ex = lam * t + np.conj(lam) * tp
    re = np.clip(ex.real, -_engine.EXP_CLAMP, _engine.EXP_CLAMP)
    return complex(np.exp(re + 1j * ex.imag))


def quadrature_weights(spectrum: Spectrum, grid) -> QuadratureWeights:
    """Discrete symmetrization weights w[j,g] = e^{-lambda_j tau_g} c_g.

    c are trapezoid coefficients normalized to sum to 1 (the uniform
    probability measure on the window); a singleton grid gives weight 1 for
    every eigenvalue, reducing the operator to evaluation at time 0.
    """
    grid = np.asarray(grid, dtype=float)
    if len(grid) < 1 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be sorted with at least one point")
    coeffs = _engine.trapezoid_coefficients(grid)
    w = _engine.weights_for(spectrum.eigenvalues, grid, coeffs)
    return QuadratureWeights(w, grid)


def symmetrized_cross(
    lam: complex,
    past_a: Trajectory,
    past_b: Trajectory,
    weights: QuadratureWeights,
    lengthscales,
    signal_var: float = 1.0,
) -> complex:
    """Doubly symmetrized base kernel sum_{g,h} w_g conj(w_h) k_se(a_g, b_h)."""
    grid = weights.grid
    for name, past in (("a", past_a), ("b", past_b)):
        if len(past.times) != len(grid) or not np.allclose(past.times, grid, atol=1e-9):
            raise ValueError(f"past_{name} grid does not match the quadrature grid")
    coeffs = _engine.trapezoid_coefficients(grid)
    w = _engine.weights_for(np.array([lam], dtype=complex), grid, coeffs)[0]
    total = 0.0 + 0.0j
    for g in range(len(grid)):
        for h in range(len(grid)):
            total += w[g] * np.conj(w[h]) * se_base(
                past_a.states[g], past_b.states[h], lengthscales, signal_var
            )
    return total


def covariance(cfg: KernelConfig, a, b) -> float:
    """Naive reference covariance between inputs (t, past) and (t', past').

    Sums literally over all D eigenvalues; the engine-backed :func:`gram`
    must agree with this to roundoff.
    """
    t_a, past_a = a
    t_b, past_b = b
    if cfg.kind == "contextual":
        kt = se_base([t_a], [t_b], [cfg.context_time_lengthscale], 1.0)
        kx = se_base(past_a.states[-1], past_b.states[-1], cfg.lengthscales, cfg.signal_var)
        return kt * kx
    w = quadrature_weights(cfg.spectrum, cfg.window_grid)
    acc = 0.0 + 0.0j
    for lam in cfg.spectrum.eigenvalues:
        acc += temporal_feature(lam, t_a, t_b) * symmetrized_cross(
            lam, past_a, past_b, w, cfg.lengthscales, cfg.signal_var
        )
    return float(acc.real) / cfg.spectrum.size


def pack_inputs(cfg: KernelConfig, inputs) -> _engine.PackedInputs:
    """Pack a TrainingSet or a list of (t, past) pairs for the engine."""
    if isinstance(inputs, TrainingSet):
        pack = _engine.pack_training_set(inputs)
        if cfg.kind in ("sd", "contextual"):
            if len(pack.grid) > 1:
                pack = _engine.collapse_pack(pack)
        elif len(pack.grid) != len(cfg.window_grid) or not np.allclose(
            pack.grid, cfg.window_grid, atol=1e-9
        ):
            raise ValueError("training window grid does not match cfg.window_grid")
        return pack
    full_grid = inputs[0][1].times
    if cfg.kind in ("sd", "contextual"):
        pack = _engine.pack_pairs(inputs, full_grid)
        return _engine.collapse_pack(pack) if len(full_grid) > 1 else pack
    return _engine.pack_pairs(inputs, cfg.window_grid)


def gram(cfg: KernelConfig, inputs, inputs2=None) -> np.ndarray:
    """Covariance matrix over input lists (or TrainingSets).

    When inputs2 is omitted the result is symmetrized as (M + M^T)/2.
    """
    state = _engine.build_state(cfg)
    pack_a = pack_inputs(cfg, inputs)
    pack_b = None if inputs2 is None else pack_inputs(cfg, inputs2)
    return _engine.gram(state, pack_a, pack_b)


def default_config(
    training: TrainingSet,
    kind: str = "kesd",
    n_eigenvalues: int = 64,
    seed: int = 0,
    prior: SpectralPrior | None = None,
    unit_prior_variance: bool = True,
) -> KernelConfig:
    """Supplement-style initialization from the training data.

    Lengthscales follow the sqrt(d)/2 * per-coordinate input std rule (the
    time coordinate counts as an input dimension for the contextual
    kernel); noise variance starts at 1; the spectral box starts at
    (1, 0, 15, 0) unless another prior is given.

    The signal variance is set once so the mean prior variance over the
    training inputs is 1 (matching the unit variance of the standardized
    targets), then stays fixed: the window symmetrization shrinks the raw
    variance by a mode-dependent factor, so a literal signal variance of 1
    would leave the prior far below the data scale.  For the contextual
    kernel the prior variance is the signal variance, so the calibration
    factor is exactly 1.
    """
    n = training.state_dim
    flat = training.windows.reshape(-1, n)
    std = np.where(flat.std(axis=0) > 0, flat.std(axis=0), 1.0)
    if kind == "contextual":
        d_in = n + 1
        t_std = training.times.std() or 1.0
        return KernelConfig(
            "contextual",
            np.sqrt(d_in) / 2.0 * std,
            1.0,
            1.0,
            np.zeros(1),
            None,
            float(np.sqrt(d_in) / 2.0 * t_std),
        )
    spectrum = sample_spectrum(prior or default_prior(), n_eigenvalues, seed)
    grid = training.window_grid if kind == "kesd" else np.zeros(1)
    cfg = KernelConfig(kind, np.sqrt(n) / 2.0 * std, 1.0, 1.0, grid, spectrum, None)
    if unit_prior_variance:
        mean_var = float(_engine.diag(_engine.build_state(cfg), pack_inputs(cfg, training)).mean())
        if mean_var > 0:
            cfg = cfg.replace(signal_var=1.0 / mean_var)
    return cfg
