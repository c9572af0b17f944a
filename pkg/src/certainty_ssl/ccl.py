"""Certainty-driven consistency: filtering masks, temperature schedules, losses.

Masks use *keep* semantics throughout: ``True`` means the sample takes part
in the consistency loss. Epochs are counted from 1 during training; the
schedules are also defined at ``e = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nn import ShapeError, cross_entropy, softmax, temperature_softmax

FILTER_MODES = ("none", "hard", "probabilistic", "both")


@dataclass(frozen=True)
class FilterConfig:
    beta: float = 8.0
    rho: float = 0.4
    E: int = 210
    mode: str = "both"

    def __post_init__(self) -> None:
        if self.beta <= 0:
            raise ValueError("beta must be > 0")
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must be in (0,1)")
        if self.E < 1:
            raise ValueError("E must be >= 1")
        if self.mode not in FILTER_MODES:
            raise ValueError(f"filter mode must be one of {FILTER_MODES}")


@dataclass(frozen=True)
class TemperaturePhase:
    start_epoch: float
    t_base: float
    t_slope: float
    span: float  # epochs over which the full slope is applied


# T_max falls 20 -> 10 over the first 100 epochs, then 10 -> 1 three times slower.
DEFAULT_PHASES = (TemperaturePhase(0, 20.0, 10.0, 100.0), TemperaturePhase(100, 10.0, 9.0, 300.0))


@dataclass(frozen=True)
class TemperatureConfig:
    phases: tuple[TemperaturePhase, ...] = DEFAULT_PHASES
    t_min: float = 0.1
    enabled: bool = True

    def __post_init__(self) -> None:
        if not self.phases:
            raise ValueError("at least one temperature phase is required")
        starts = [p.start_epoch for p in self.phases]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("temperature phase start epochs must be strictly increasing")
        for p in self.phases:
            if p.t_base <= 0:
                raise ValueError("T_b must be > 0")
            if p.span <= 0:
                raise ValueError("S must be > 0")
        if self.t_min <= 0:
            raise ValueError("t_min must be > 0")


@dataclass(frozen=True)
class ConsistencyWeights:
    lambda_max: float = 10.0
    ramp_epochs: float = 30.0

    def __post_init__(self) -> None:
        if self.lambda_max < 0:
            raise ValueError("lambda_max must be >= 0")
        if self.ramp_epochs < 0:
            raise ValueError("ramp_epochs must be >= 0")


def ramp_up_weight(epoch: float, cfg: ConsistencyWeights) -> float:
    """Sigmoid-shaped ramp ``lambda_max * exp(-5 (1 - e/L)^2)``, exactly 0 at e = 0."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if epoch == 0:
        return 0.0
    if cfg.ramp_epochs == 0 or epoch >= cfg.ramp_epochs:
        return float(cfg.lambda_max)
    phase = 1.0 - epoch / cfg.ramp_epochs
    return float(cfg.lambda_max * math.exp(-5.0 * phase * phase))


def hard_filter_count(n: int, epoch: float, beta: float) -> int:
    return int(min(n, max(1, math.ceil(beta * epoch))))


def hard_filter_mask(ranks: np.ndarray, epoch: float, beta: float) -> np.ndarray:
    """Keep the ``ceil(beta * e)`` most certain samples (at least one, at most all)."""
    ranks = np.asarray(ranks)
    return ranks <= hard_filter_count(ranks.shape[0], epoch, beta)


def p_max_schedule(epoch: float, rho: float, E: float) -> float:
    # literal piecewise form: 1 - rho at e == E, then 0
    if epoch <= E:
        return 1.0 - rho * epoch / E
    return 0.0


def filter_out_probabilities(ranks: np.ndarray, p_max: float) -> np.ndarray:
    """Probability of dropping each sample, linear in rank from 0 up to ``p_max``."""
    ranks = np.asarray(ranks, dtype=np.float64)
    n = ranks.shape[0]
    if n == 1:
        return np.zeros(1)
    return p_max * (ranks - 1.0) / (n - 1)


def prob_filter_mask(ranks: np.ndarray, p_max: float, rng: np.random.Generator) -> np.ndarray:
    if not 0.0 <= p_max <= 1.0:
        raise ValueError("P_max must be in [0, 1]")
    m = filter_out_probabilities(ranks, p_max)
    # keep ~ Bernoulli(1 - m); a sample with m == 0 is always kept
    return rng.random(m.shape[0]) >= m


def combine_masks(hard: np.ndarray, prob: np.ndarray, mode: str) -> np.ndarray:
    hard = np.asarray(hard, dtype=bool)
    prob = np.asarray(prob, dtype=bool)
    if hard.shape != prob.shape:
        raise ShapeError(f"mask length mismatch {hard.shape} vs {prob.shape}")
    if mode == "both":
        return hard & prob
    if mode == "hard":
        return hard.copy()
    if mode == "probabilistic":
        return prob.copy()
    if mode == "none":
        return np.ones_like(hard)
    raise ValueError(f"unknown filter mode {mode!r}")


def t_max_schedule(epoch: float, cfg: TemperatureConfig) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    active = cfg.phases[0]
    for phase in cfg.phases:
        if phase.start_epoch <= epoch:
            active = phase
    progress = min(max((epoch - active.start_epoch) / active.span, 0.0), 1.0)
    return max(active.t_base - active.t_slope * progress, cfg.t_min)


def per_sample_temperatures(ranks: np.ndarray, t_max: float, t_min: float) -> np.ndarray:
    ranks = np.asarray(ranks, dtype=np.float64)
    return np.maximum(t_min, t_max * ranks / ranks.shape[0])


def consistency_loss(student_logits: np.ndarray, teacher_logits: np.ndarray,
                     temps: np.ndarray | float, keep: np.ndarray | None = None,
                     ) -> tuple[float, np.ndarray]:
    """Masked MSE between tempered teacher and student distributions.

    Both rows of sample ``i`` are softened with the same ``T_i``. The sum
    over kept samples is divided by the full batch size. Only the student
    receives a gradient.
    """
    zs = np.asarray(student_logits, dtype=np.float64)
    zt = np.asarray(teacher_logits, dtype=np.float64)
    if zs.shape != zt.shape:
        raise ShapeError(f"student logits {zs.shape} vs teacher logits {zt.shape}")
    n = zs.shape[0]
    t = np.broadcast_to(np.asarray(temps, dtype=np.float64), (n,))
    keep_w = np.ones(n) if keep is None else np.asarray(keep, dtype=np.float64)
    if keep_w.shape != (n,):
        raise ShapeError(f"keep mask length {keep_w.shape} != batch size {n}")
    ps = temperature_softmax(zs, t)
    pt = temperature_softmax(zt, t)
    d = ps - pt
    per_sample = (d * d).sum(axis=1)
    loss = float((keep_w * per_sample).sum() / n)
    # d/dz of softmax(z/T): (1/T) p * (g - <p, g>)
    g = 2.0 * d * (keep_w / n)[:, None]
    grad = ps * (g - (ps * g).sum(axis=1, keepdims=True)) / t[:, None]
    return loss, grad


@dataclass
class LossParts:
    total: float
    supervised: float
    consistency: float
    grad: np.ndarray
    n_labeled: int = 0


def supervised_loss(student_logits: np.ndarray, labels: np.ndarray,
                    labeled: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the labeled rows; unlabeled rows get zero gradient."""
    z = np.asarray(student_logits, dtype=np.float64)
    labeled = np.asarray(labeled, dtype=bool)
    grad = np.zeros_like(z)
    n_l = int(labeled.sum())
    if n_l == 0:
        return 0.0, grad
    losses, g = cross_entropy(softmax(z[labeled]), np.asarray(labels)[labeled])
    grad[labeled] = g / n_l
    return float(losses.sum() / n_l), grad


def total_loss(student_logits: np.ndarray, teacher_logits: np.ndarray | None,
               labels: np.ndarray, labeled: np.ndarray, temps: np.ndarray | float,
               keep: np.ndarray | None, weight: float) -> LossParts:
    """Supervised CE on the labeled part plus ``weight`` times the consistency term.

    ``teacher_logits=None`` (or ``weight == 0``) skips the consistency term.
    """
    sup, grad = supervised_loss(student_logits, labels, labeled)
    cons = 0.0
    if teacher_logits is not None and weight > 0:
        cons, cons_grad = consistency_loss(student_logits, teacher_logits, temps, keep)
        grad = grad + weight * cons_grad
    return LossParts(total=sup + weight * cons, supervised=sup, consistency=cons,
                     grad=grad, n_labeled=int(np.sum(labeled)))
