"""Monte-Carlo dropout uncertainty of the teacher's predictions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import MLP, Perturbation, ShapeError, forward, softmax


@dataclass
class UncertaintyReport:
    pv: np.ndarray      # (B,) predictive variance, >= 0
    ranks: np.ndarray   # (B,) 1 = most certain
    stack: np.ndarray   # (K, B, C) class probabilities of every pass


def mc_predict(teacher: MLP, inputs: np.ndarray, n_passes: int, rng: np.random.Generator,
               input_noise: float = 0.0) -> np.ndarray:
    """Run ``n_passes`` stochastic forward passes, each with fresh dropout masks and input noise."""
    if n_passes < 2:
        raise ValueError("variance undefined for fewer than 2 passes")
    pert = Perturbation(input_noise=input_noise, dropout=True, rng=rng)
    # one forward per pass (rather than a tiled batch) keeps passes bitwise
    # identical when there is no stochasticity
    return np.stack([softmax(forward(teacher, inputs, pert)[0]) for _ in range(n_passes)])


def predictive_variance(stack: np.ndarray) -> np.ndarray:
    """Sum over classes of the across-pass population variance.

    Deviations are taken from the first pass before averaging, so samples
    whose passes agree exactly get a variance of exactly zero.
    """
    stack = np.asarray(stack, dtype=np.float64)
    if stack.ndim != 3:
        raise ShapeError(f"stack must be (K, B, C), got {stack.shape}")
    d = stack - stack[0]
    d = d - d.mean(axis=0)
    return (d * d).mean(axis=0).sum(axis=1)


def rank_by_uncertainty(pv: np.ndarray) -> np.ndarray:
    """Ascending certainty ranks, 1-based; ties go to the lower batch index."""
    pv = np.asarray(pv, dtype=np.float64)
    if not np.all(np.isfinite(pv)):
        raise ValueError("predictive variance must be finite")
    order = np.argsort(pv, kind="stable")
    ranks = np.empty(pv.shape[0], dtype=np.int64)
    ranks[order] = np.arange(1, pv.shape[0] + 1)
    return ranks


def estimate_uncertainty(teacher: MLP, inputs: np.ndarray, n_passes: int,
                         rng: np.random.Generator, input_noise: float = 0.0) -> UncertaintyReport:
    stack = mc_predict(teacher, inputs, n_passes, rng, input_noise)
    pv = predictive_variance(stack)
    return UncertaintyReport(pv=pv, ranks=rank_by_uncertainty(pv), stack=stack)
