"""Minimal feed-forward network stack on numpy.

Tensors are plain 2-D ``float64`` numpy arrays (row-major, one sample per
row). Layers compute ``x @ W + b`` so a weight has shape ``(fan_in, fan_out)``.
Hidden layers use ReLU, the output layer is linear and returns logits.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Raised when array shapes do not compose."""


@dataclass
class MLP:
    """Weights, biases and per-layer dropout rates.

    ``dropout_rates[l]`` is applied to the *input* of layer ``l``, so a
    ``2 -> 64 -> 64 -> C`` network with dropout on both hidden layers has
    rates ``[0, p, p]``.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    dropout_rates: list[float]

    def __post_init__(self) -> None:
        if not (len(self.weights) == len(self.biases) == len(self.dropout_rates)):
            raise ShapeError("weights, biases and dropout_rates must have equal length")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeError(f"layer {l}: bias shape {b.shape} does not match weight {w.shape}")
            if l > 0 and self.weights[l - 1].shape[1] != w.shape[0]:
                raise ShapeError(
                    f"layer {l}: input dim {w.shape[0]} != layer {l - 1} output dim "
                    f"{self.weights[l - 1].shape[1]}"
                )
        for l, rate in enumerate(self.dropout_rates):
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"degenerate dropout rate {rate} at layer {l}; must be in [0, 1)")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in the order ``[W0, b0, W1, b1, ...]`` (views, not copies)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "MLP":
        return copy.deepcopy(self)

    def same_architecture(self, other: "MLP") -> bool:
        return self.sizes == other.sizes


def init_mlp(sizes: tuple[int, ...] | list[int], dropout: float | list[float],
             rng: np.random.Generator) -> MLP:
    """He-normal weights, zero biases.

    A scalar ``dropout`` is applied to every hidden layer's output; the raw
    input is never dropped.
    """
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) < 2:
        raise ShapeError("need at least an input and an output size")
    n_layers = len(sizes) - 1
    if np.isscalar(dropout):
        rates = [0.0] + [float(dropout)] * (n_layers - 1)
    else:
        rates = [float(r) for r in dropout]
    weights = [rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
               for fan_in, fan_out in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros(fan_out) for fan_out in sizes[1:]]
    return MLP(weights, biases, rates)


@dataclass
class Perturbation:
    """Stochastic perturbation of a forward pass.

    With ``dropout=False`` and ``input_noise=0`` the forward pass is
    deterministic and ``rng`` is never touched.
    """

    input_noise: float = 0.0
    dropout: bool = False
    rng: np.random.Generator | None = None

    def __post_init__(self) -> None:
        if self.input_noise < 0:
            raise ValueError("input_noise must be >= 0")
        if self.rng is None and (self.dropout or self.input_noise > 0):
            raise ValueError("a stochastic perturbation needs an rng")


DETERMINISTIC = Perturbation()


@dataclass
class ForwardCache:
    """What backward needs: layer inputs (after dropout), pre-activations, masks."""

    layer_inputs: list[np.ndarray] = field(default_factory=list)
    pre_activations: list[np.ndarray] = field(default_factory=list)
    masks: list[np.ndarray | None] = field(default_factory=list)
    perturbed_inputs: np.ndarray | None = None


def _check_finite(a: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(a)):
        raise FloatingPointError(f"non-finite values in {what}")


def forward(model: MLP, inputs: np.ndarray,
            pert: Perturbation = DETERMINISTIC) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"inputs must be 2-D, got shape {x.shape}")
    if x.shape[1] != model.weights[0].shape[0]:
        raise ShapeError(f"layer 0: input has {x.shape[1]} columns, expected {model.weights[0].shape[0]}")
    if pert.input_noise > 0:
        x = x + pert.input_noise * pert.rng.standard_normal(x.shape)
    cache = ForwardCache(perturbed_inputs=x)
    a = x
    last = model.n_layers - 1
    for l, (w, b, rate) in enumerate(zip(model.weights, model.biases, model.dropout_rates)):
        mask = None
        if pert.dropout and rate > 0:
            mask = (pert.rng.random(a.shape) >= rate) / (1.0 - rate)
            a = a * mask
        z = a @ w + b
        cache.layer_inputs.append(a)
        cache.pre_activations.append(z)
        cache.masks.append(mask)
        a = z if l == last else np.maximum(z, 0.0)
    _check_finite(a, "logits")
    return a, cache


def replay(model: MLP, cache: ForwardCache) -> np.ndarray:
    """Recompute logits from the cached perturbed inputs and dropout masks."""
    if len(cache.masks) != model.n_layers:
        raise ShapeError(f"cache has {len(cache.masks)} layers, model has {model.n_layers}")
    a = cache.perturbed_inputs
    last = model.n_layers - 1
    for l, (w, b, mask) in enumerate(zip(model.weights, model.biases, cache.masks)):
        if mask is not None:
            a = a * mask
        z = a @ w + b
        a = z if l == last else np.maximum(z, 0.0)
    return a


def backward(model: MLP, cache: ForwardCache, grad_logits: np.ndarray) -> list[np.ndarray]:
    """Backpropagate ``dLoss/dlogits``; returns grads aligned with ``model.params()``."""
    if len(cache.pre_activations) != model.n_layers:
        raise ShapeError(f"cache has {len(cache.pre_activations)} layers, model has {model.n_layers}")
    g = np.asarray(grad_logits, dtype=np.float64)
    if g.shape != cache.pre_activations[-1].shape:
        raise ShapeError(f"grad_logits shape {g.shape} != logits shape {cache.pre_activations[-1].shape}")
    grads: list[np.ndarray] = [None] * (2 * model.n_layers)  # type: ignore[list-item]
    for l in range(model.n_layers - 1, -1, -1):
        a = cache.layer_inputs[l]
        if a.shape[1] != model.weights[l].shape[0]:
            raise ShapeError(f"layer {l}: cached input does not match model weights")
        grads[2 * l] = a.T @ g
        grads[2 * l + 1] = g.sum(axis=0)
        if l == 0:
            break
        g = g @ model.weights[l].T
        if cache.masks[l] is not None:
            g = g * cache.masks[l]
        g = g * (cache.pre_activations[l - 1] > 0)
    return grads


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def temperature_softmax(logits: np.ndarray, temperature: float | np.ndarray) -> np.ndarray:
    """Row-wise ``softmax(z / T)``; ``temperature`` is a scalar or one value per row."""
    z = np.asarray(logits, dtype=np.float64)
    t = np.asarray(temperature, dtype=np.float64)
    if np.any(t <= 0):
        raise ValueError("non-positive temperature")
    if t.ndim == 1:
        if t.shape[0] != z.shape[0]:
            raise ShapeError(f"{t.shape[0]} temperatures for {z.shape[0]} rows")
        t = t[:, None]
    return softmax(z / t)


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row ``-log p[label]`` and its gradient wrt the logits, ``p - onehot``."""
    p = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    y = np.atleast_1d(np.asarray(labels))
    n, c = p.shape
    if y.shape != (n,):
        raise ShapeError(f"{y.shape[0]} labels for {n} rows")
    if np.any((y < 0) | (y >= c)):
        raise ValueError(f"label out of range [0, {c})")
    rows = np.arange(n)
    # clip only guards log(0); the gradient uses the unclipped probabilities
    loss = -np.log(np.maximum(p[rows, y], np.finfo(np.float64).tiny))
    grad = p.copy()
    grad[rows, y] -= 1.0
    return loss, grad


def mse_rows(p: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row squared error ``sum_c (p_c - q_c)^2`` and its gradient wrt ``p``."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ShapeError(f"shape mismatch {p.shape} vs {q.shape}")
    d = p - q
    return (d * d).sum(axis=1), 2.0 * d


class SGD:
    """Momentum SGD, ``v <- mu * v + g; w <- w - lr * v``, updating arrays in place."""

    def __init__(self, lr: float = 0.05, momentum: float = 0.9):
        if lr < 0:
            raise ValueError("lr must be >= 0")
        if not 0.0 <= momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        self.lr = lr
        self.momentum = momentum
        self.velocity: list[np.ndarray] | None = None

    def step(self, model: MLP, grads: list[np.ndarray]) -> MLP:
        params = model.params()
        if len(grads) != len(params):
            raise ShapeError(f"{len(grads)} gradients for {len(params)} parameters")
        for i, (p, g) in enumerate(zip(params, grads)):
            if p.shape != g.shape:
                raise ShapeError(f"parameter {i}: gradient shape {g.shape} != {p.shape}")
        if self.velocity is None:
            self.velocity = [np.zeros_like(p) for p in params]
        for p, g, v in zip(params, grads, self.velocity):
            v *= self.momentum
            v += g
            p -= self.lr * v
        return model
