"""First-order minimizer with adaptive step moments (Adam).

The budget counts objective evaluations: budget=1 evaluates only the start
point and returns it.  The best iterate ever evaluated is returned, so the
result is never worse than the initial point.  A non-finite objective
reverts the step and shrinks the learning rate.
"""

from __future__ import annotations

import numpy as np


def adam_minimize(
    theta0: np.ndarray,
    value_and_grad,
    budget: int,
    learning_rate: float = 0.05,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    lr_scale=None,
    callback=None,
):
    """Minimize; returns (best_theta, best_value, history of values).

    ``lr_scale`` optionally multiplies the step size per coordinate (used
    to let slow box parameters travel further per evaluation).
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    theta = np.asarray(theta0, dtype=float).copy()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    scale = np.ones_like(theta) if lr_scale is None else np.asarray(lr_scale, dtype=float)
    lr = learning_rate
    best_theta = theta.copy()
    best_val = np.inf
    history = []
    prev_theta = theta.copy()
    t = 0
    for it in range(budget):
        val, grad = value_and_grad(theta)
        if not np.isfinite(val) or not np.all(np.isfinite(grad)):
            theta = prev_theta.copy()
            lr *= 0.5
            history.append(float("nan"))
            continue
        history.append(float(val))
        if val < best_val:
            best_val = float(val)
            best_theta = theta.copy()
        if callback is not None:
            callback(it, val, theta)
        if it == budget - 1:
            break
        t += 1
        m = beta1 * m + (1 - beta1) * grad
        v = beta2 * v + (1 - beta2) * grad * grad
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        prev_theta = theta.copy()
        theta = theta - (lr * scale) * m_hat / (np.sqrt(v_hat) + eps)
    return best_theta, best_val, history
