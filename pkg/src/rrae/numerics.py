"""Dense linear algebra, fully-connected layers, tanh and ADAM.

Matrices are plain numpy arrays; the helpers here add the shape checks and
the exact update rules the rest of the package relies on.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from decimal import Decimal, localcontext
from typing import Mapping

import numpy as np


class ShapeError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def tanh(x):
    return np.tanh(x)


def dtanh_from_output(y):
    """Derivative of tanh expressed through its output y = tanh(x)."""
    return 1.0 - y * y


@dataclass
class DenseLayer:
    """Affine map ``x -> weights @ x + bias`` with weights stored (out, in)."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"bias {self.bias.shape} does not fit weights {self.weights.shape}")

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    @property
    def parameter_count(self) -> int:
        return self.weights.size + self.bias.size

    @classmethod
    def zeros(cls, n_in: int, n_out: int, dtype=np.float64) -> DenseLayer:
        return cls(np.zeros((n_out, n_in), dtype), np.zeros(n_out, dtype))


def dense_forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    """Apply the layer to a vector or to a batch of row vectors (..., in)."""
    x = np.asarray(x)
    if x.shape[-1] != layer.n_in:
        raise ShapeError(f"input of length {x.shape[-1]} given to layer {layer.weights.shape}")
    return x @ layer.weights.T + layer.bias


def dense_backward(layer: DenseLayer, x: np.ndarray, grad_out: np.ndarray):
    """Return ``(grad_x, grad_weights, grad_bias)``.

    Leading batch axes of ``x``/``grad_out`` are summed out of the parameter
    gradients.
    """
    x = np.asarray(x)
    grad_out = np.asarray(grad_out)
    if x.shape[-1] != layer.n_in or grad_out.shape[-1] != layer.n_out \
            or x.shape[:-1] != grad_out.shape[:-1]:
        raise ShapeError(
            f"x {x.shape} / grad_out {grad_out.shape} inconsistent with layer {layer.weights.shape}")
    grad_x = grad_out @ layer.weights
    g2 = grad_out.reshape(-1, layer.n_out)
    x2 = x.reshape(-1, layer.n_in)
    return grad_x, g2.T @ x2, g2.sum(axis=0)


# ---------------------------------------------------------------- ADAM


@dataclass(frozen=True)
class AdamConfig:
    lr0: float = 4.22e-5
    decay_per_iteration: float = 0.9999987
    l2: float = 1.84e-7
    p1: float = 0.85
    p2: float = 0.99
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.lr0 < 0:
            raise ValueError("lr0 must be non-negative")
        if not 0.0 < self.decay_per_iteration <= 1.0:
            raise ValueError("decay_per_iteration must lie in (0, 1]")
        if self.l2 < 0:
            raise ValueError("l2 must be non-negative")
        if not (0.0 <= self.p1 < 1.0 and 0.0 <= self.p2 < 1.0):
            raise ValueError("p1 and p2 must lie in [0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")

    def lr(self, t: int) -> float:
        """``lr0 * decay**t``, evaluated in decimal on the configured values and rounded once.

        Binary64 ``0.9999987`` sits about 1.8e-17 away from the decimal
        constant; raised to t = 1e5 in floating point that drifts by ~1.8e-12
        relative. The shortest repr of a float recovers the literal it was
        written as, so the power is taken on that instead.
        """
        with localcontext() as ctx:
            ctx.prec = 40
            return float(Decimal(repr(self.lr0)) * Decimal(repr(self.decay_per_iteration)) ** int(t))


@dataclass
class AdamState:
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)
    iteration: int = 0

    @classmethod
    def for_params(cls, params: Mapping[str, np.ndarray]) -> AdamState:
        return cls({k: np.zeros_like(v) for k, v in params.items()},
                   {k: np.zeros_like(v) for k, v in params.items()}, 0)


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
              state: AdamState, cfg: AdamConfig) -> None:
    """One bias-corrected ADAM update, in place on ``params`` and ``state``.

    The learning rate is ``cfg.lr(state.iteration)`` and L2 enters as
    ``grad + l2 * param`` ahead of the moment update.
    """
    if set(grads) != set(params):
        raise ShapeError(f"gradient blocks {sorted(grads)} do not match {sorted(params)}")
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ShapeError(f"{name}: gradient {g.shape} vs parameter {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter block {name!r}")

    t = state.iteration
    lr = cfg.lr(t)
    c1 = 1.0 - cfg.p1 ** (t + 1)
    c2 = 1.0 - cfg.p2 ** (t + 1)
    for name, p in params.items():
        g = grads[name]
        if cfg.l2:
            g = g + cfg.l2 * p
        m = state.first_moment.setdefault(name, np.zeros_like(p))
        v = state.second_moment.setdefault(name, np.zeros_like(p))
        m *= cfg.p1
        m += (1.0 - cfg.p1) * g
        v *= cfg.p2
        v += (1.0 - cfg.p2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.epsilon)
    state.iteration = t + 1


# ---------------------------------------------------------------- init


def glorot_limit(n_in: int, n_out: int) -> float:
    return math.sqrt(6.0 / (n_in + n_out))


def init_params(shapes: Mapping[str, tuple[int, ...]], rng_seed: int,
                dtype=np.float64) -> dict[str, np.ndarray]:
    """Initialise named parameter blocks.

    Block kind is read from the name suffix: ``*.weight`` (out, in) gets
    Glorot-uniform, ``*.p0`` (the initial recurrent bias) gets uniform with
    fan terms (1, hidden), every other block is zero. Blocks are drawn in
    mapping order from one generator, so a seed fixes all bytes.
    """
    rng = np.random.default_rng(rng_seed)
    out = {}
    for name, shape in shapes.items():
        if any(s <= 0 for s in shape):
            raise ShapeError(f"{name}: non-positive shape {shape}")
        if name.endswith(".weight"):
            s = glorot_limit(shape[1], shape[0])
            out[name] = rng.uniform(-s, s, size=shape).astype(dtype)
        elif name.endswith(".p0"):
            s = glorot_limit(1, shape[0])
            out[name] = rng.uniform(-s, s, size=shape).astype(dtype)
        else:
            out[name] = np.zeros(shape, dtype)
    return out
