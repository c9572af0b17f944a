"""Independent reference computations used by the test suite and ``verify``.

Nothing here calls the code paths it is meant to check: gradients come
from central differences, variances from explicit Python loops.
"""

from __future__ import annotations

from typing import Callable

import numpy as np


def numerical_gradient(f: Callable[[], float], params: list[np.ndarray],
                       eps: float = 1e-5) -> list[np.ndarray]:
    """Central differences of ``f()`` wrt every entry of ``params`` (perturbed in place)."""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up = f()
            flat[j] = orig - eps
            down = f()
            flat[j] = orig
            gflat[j] = (up - down) / (2 * eps)
        grads.append(g)
    return grads


def relative_error(analytic, numeric) -> float:
    """Max abs difference scaled by the larger of the two max magnitudes."""
    a = np.concatenate([np.ravel(x) for x in analytic]) if isinstance(analytic, list) else np.ravel(analytic)
    n = np.concatenate([np.ravel(x) for x in numeric]) if isinstance(numeric, list) else np.ravel(numeric)
    scale = max(np.max(np.abs(a)), np.max(np.abs(n)), 1e-8)
    return float(np.max(np.abs(a - n)) / scale)


def naive_predictive_variance(stack: np.ndarray) -> np.ndarray:
    """Loop version: per-class mean, then mean squared deviation, summed over classes."""
    k, b, c = stack.shape
    out = np.zeros(b)
    for i in range(b):
        total = 0.0
        for cls in range(c):
            vals = [float(stack[j, i, cls]) for j in range(k)]
            mean = sum(vals) / k
            total += sum((v - mean) ** 2 for v in vals) / k
        out[i] = total
    return out


def ema_closed_form(w0: np.ndarray, student_history: list[np.ndarray], decay: float) -> np.ndarray:
    """``decay^t w0 + sum_j (1 - decay) decay^(t-1-j) s_j`` for student states ``s_0..s_{t-1}``."""
    t = len(student_history)
    out = decay ** t * np.asarray(w0, dtype=np.float64)
    for j, s in enumerate(student_history):
        out = out + (1 - decay) * decay ** (t - 1 - j) * s
    return out


def binomial_within(count: int, trials: int, p: float, n_sigma: float = 3.0) -> bool:
    """Is ``count`` within ``n_sigma`` binomial standard deviations of ``trials * p``?"""
    sd = np.sqrt(trials * p * (1 - p))
    return abs(count - trials * p) <= n_sigma * sd + 1e-12
