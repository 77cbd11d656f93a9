"""Benchmark dynamical systems and a fixed-step RK4 integrator.

Two systems ship: the predator-prey ODE (default parameters r1=0.2,
gamma1=0.4, r2=0.25, gamma2=0.2, c=2) and a planar rotation with
eigenvalues +/-6i.  The printed literature form of the predator-prey
equations (all-positive coefficients, x1*x1 interaction) is non-oscillatory
and divergent, so the classical sign convention is the default; the literal
form stays available as ``predator_prey_printed`` for audit, and the
interaction signs are configurable.

Integration is classical RK4 with internal substepping so the effective
step never exceeds ``max_substep`` (0.01 time units by default):
reproducibility is preferred over adaptivity.  Observation noise is added
to recorded states after integrating noise-free dynamics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .backend import use_numba
from .data import Trajectory
from .seeding import derive_seed

__all__ = [
    "OdeSystem",
    "predator_prey_rhs",
    "predator_prey_printed_rhs",
    "linear2d_rhs",
    "predator_prey_system",
    "predator_prey_printed_system",
    "linear2d_system",
    "system_by_name",
    "simulate",
    "make_corpus",
]

PP_PARAMS = {"r1": 0.2, "gamma1": 0.4, "r2": 0.25, "gamma2": 0.2, "c": 2.0}


@dataclass(frozen=True)
class OdeSystem:
    name: str
    dim: int
    rhs: Callable[[np.ndarray], np.ndarray]
    params: dict = field(default_factory=dict)


def predator_prey_rhs(x, r1=0.2, gamma1=0.4, r2=0.25, gamma2=0.2, c=2.0,
                      sign1=-1.0, sign2=1.0):
    """Classical Lotka-Volterra convention; broadcasts over leading axes.

    dx1 = r1*x1 + sign1*c*gamma1*x1*x2, dx2 = -r2*x2 + sign2*c*gamma2*x1*x2.
    """
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    return np.stack(
        [r1 * x1 + sign1 * c * gamma1 * x1 * x2,
         -r2 * x2 + sign2 * c * gamma2 * x1 * x2],
        axis=-1,
    )


def predator_prey_printed_rhs(x, r1=0.2, gamma1=0.4, r2=0.25, gamma2=0.2, c=2.0):
    """Literal printed form (x1*x1 interaction, all signs positive)."""
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    return np.stack(
        [r1 * x1 + c * gamma1 * x1 * x1,
         r2 * x2 + c * gamma2 * x1 * x2],
        axis=-1,
    )


def linear2d_rhs(x):
    """Planar rotation dx1 = -6*x2, dx2 = 6*x1; eigenvalues +/-6i."""
    x = np.asarray(x, dtype=float)
    return np.stack([-6.0 * x[..., 1], 6.0 * x[..., 0]], axis=-1)


def predator_prey_system(**overrides) -> OdeSystem:
    params = dict(PP_PARAMS, **overrides)
    return OdeSystem("predator_prey", 2, lambda x: predator_prey_rhs(x, **params), params)


def predator_prey_printed_system(**overrides) -> OdeSystem:
    params = dict(PP_PARAMS, **overrides)
    params.pop("sign1", None)
    params.pop("sign2", None)
    return OdeSystem(
        "predator_prey_printed", 2, lambda x: predator_prey_printed_rhs(x, **params), params
    )


def linear2d_system() -> OdeSystem:
    return OdeSystem("linear2d", 2, linear2d_rhs, {})


_REGISTRY = {
    "predator_prey": predator_prey_system,
    "predator_prey_printed": predator_prey_printed_system,
    "linear2d": linear2d_system,
}


def system_by_name(name: str, **params) -> OdeSystem:
    if name not in _REGISTRY:
        raise ValueError(f"unknown system {name!r}; known: {sorted(_REGISTRY)}")
    return _REGISTRY[name](**params)


class BlowupError(RuntimeError):
    pass


def _rk4_batch_numpy(rhs, x0, dt, steps, n_sub):
    """All trajectories advanced in lockstep; elementwise, so the numbers
    match the per-trajectory loop exactly."""
    h = dt / n_sub
    out = np.empty((steps + 1,) + x0.shape, dtype=float)
    out[0] = x0
    x = x0.astype(float, copy=True)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            for _ in range(n_sub):
                k1 = rhs(x)
                k2 = rhs(x + 0.5 * h * k1)
                k3 = rhs(x + 0.5 * h * k2)
                k4 = rhs(x + h * k3)
                x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            out[k + 1] = x
            if not np.all(np.isfinite(x)):
                raise BlowupError(f"non-finite state at t={(k + 1) * dt}")
    return out


def simulate(system: OdeSystem, x0, dt: float, steps: int, max_substep: float = 0.01) -> Trajectory:
    """Integrate from x0 on the grid {0, dt, ..., steps*dt}."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if dt <= 0:
        raise ValueError("dt must be > 0")
    x0 = np.asarray(x0, dtype=float)
    states = _simulate_states(system, x0[None, :], dt, steps, max_substep)[:, 0]
    return Trajectory(np.arange(steps + 1) * dt, states)


def _simulate_states(system, x0_batch, dt, steps, max_substep):
    """Integrate a batch; returns (steps+1, batch, dim)."""
    n_sub = max(1, int(np.ceil(dt / max_substep - 1e-12)))
    x0_batch = np.ascontiguousarray(x0_batch, dtype=np.float64)
    if use_numba():
        from . import _numba_impl as nb

        out = None
        if system.name == "linear2d":
            out = nb.rk4_linear2d(x0_batch, dt, steps, n_sub)
        elif system.name == "predator_prey":
            p = system.params
            out = nb.rk4_predator_prey(
                x0_batch, dt, steps, n_sub,
                p["r1"], p["gamma1"], p["r2"], p["gamma2"], p["c"],
                p.get("sign1", -1.0), p.get("sign2", 1.0),
            )
        if out is not None:
            finite = np.isfinite(out).all(axis=(1, 2))
            if not finite.all():
                k = int(np.argmin(finite))
                raise BlowupError(f"non-finite state at t={k * dt}")
            return out
    return _rk4_batch_numpy(system.rhs, x0_batch, dt, steps, n_sub)


def make_corpus(
    system: OdeSystem,
    n_traj: int,
    x0_box,
    dt: float,
    steps: int,
    noise_std: float = 0.0,
    seed: int = 0,
    max_substep: float = 0.01,
) -> list[Trajectory]:
    """Simulate n_traj trajectories from x0 drawn uniformly in a box.

    Noise (if any) perturbs the recorded states only; dynamics are
    integrated noise-free.  Per-trajectory noise streams are derived from
    (seed, index), so any parallel split reproduces the serial corpus.
    """
    if n_traj == 0:
        return []
    box = np.asarray(x0_box, dtype=float)
    if box.shape != (system.dim, 2):
        raise ValueError(f"x0_box must be ({system.dim}, 2) low/high pairs")
    rng = np.random.default_rng(derive_seed(seed, "x0"))
    x0 = rng.uniform(box[:, 0], box[:, 1], size=(n_traj, system.dim))
    states = _simulate_states(system, x0, dt, steps, max_substep)
    times = np.arange(steps + 1) * dt
    out = []
    for i in range(n_traj):
        s = states[:, i]
        if noise_std > 0:
            noise_rng = np.random.default_rng(derive_seed(seed, "noise", i))
            s = s + noise_rng.normal(0.0, noise_std, size=s.shape)
        out.append(Trajectory(times, s))
    return out
