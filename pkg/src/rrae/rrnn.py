"""Residual recurrent layer.

Each step keeps the pre-activation state ``p`` on an identity path and adds
a residual computed by two fully-connected layers::

    h1     = tanh(fc1([a_in, tanh(p_prev)]))
    p_next = p_prev + fc2(h1)
    a_out  = tanh(p_next)

The first step starts from the trainable bias vector ``p0``. All functions
accept vectors or arrays with leading batch axes; time is always the first
axis of a sequence.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import DenseLayer, ShapeError, dense_backward, dense_forward


@dataclass
class RrnnCellParams:
    fc1: DenseLayer
    fc2: DenseLayer
    p0: np.ndarray

    def __post_init__(self):
        h = self.fc2.n_out
        if self.fc2.n_in != h or self.fc1.n_out != h or self.p0.shape != (h,) \
                or self.fc1.n_in <= h:
            raise ShapeError("inconsistent residual cell shapes")

    @property
    def hidden(self) -> int:
        return self.fc2.n_out

    @property
    def input_dim(self) -> int:
        return self.fc1.n_in - self.hidden

    @staticmethod
    def shapes(input_dim: int, hidden: int) -> dict[str, tuple[int, ...]]:
        return {
            "fc1.weight": (hidden, input_dim + hidden),
            "fc1.bias": (hidden,),
            "fc2.weight": (hidden, hidden),
            "fc2.bias": (hidden,),
            "p0": (hidden,),
        }

    @staticmethod
    def count(input_dim: int, hidden: int) -> int:
        return (input_dim + hidden) * hidden + hidden + hidden * hidden + hidden + hidden

    @property
    def parameter_count(self) -> int:
        return self.count(self.input_dim, self.hidden)

    def blocks(self) -> dict[str, np.ndarray]:
        return {
            "fc1.weight": self.fc1.weights,
            "fc1.bias": self.fc1.bias,
            "fc2.weight": self.fc2.weights,
            "fc2.bias": self.fc2.bias,
            "p0": self.p0,
        }

    @classmethod
    def from_blocks(cls, b) -> RrnnCellParams:
        return cls(DenseLayer(b["fc1.weight"], b["fc1.bias"]),
                   DenseLayer(b["fc2.weight"], b["fc2.bias"]), b["p0"])


@dataclass
class StepTrace:
    h_in: np.ndarray     # [a_in, tanh(p_prev)]
    p_prev: np.ndarray
    h1: np.ndarray
    p_next: np.ndarray
    a_out: np.ndarray


RrnnTrace = list  # list[StepTrace], in processing order


def cell_step(params: RrnnCellParams, a_in, p_prev):
    a_in = np.asarray(a_in)
    p_prev = np.asarray(p_prev)
    if a_in.shape[-1] != params.input_dim or p_prev.shape[-1] != params.hidden:
        raise ShapeError(
            f"cell expects input {params.input_dim} / state {params.hidden}, "
            f"got {a_in.shape} / {p_prev.shape}")
    h_in = np.concatenate([a_in, np.tanh(p_prev)], axis=-1)
    h1 = np.tanh(dense_forward(params.fc1, h_in))
    p_next = p_prev + dense_forward(params.fc2, h1)
    a_out = np.tanh(p_next)
    return p_next, a_out, StepTrace(h_in, p_prev, h1, p_next, a_out)


def _initial_state(params: RrnnCellParams, batch_shape) -> np.ndarray:
    return np.broadcast_to(params.p0, tuple(batch_shape) + (params.hidden,))


def run_forward(params: RrnnCellParams, inputs) -> tuple[np.ndarray, RrnnTrace]:
    """Run the cell over ``inputs`` in the given order; returns all a_out."""
    p = _initial_state(params, np.shape(inputs[0])[:-1])
    trace, outs = [], []
    for a_in in inputs:
        p, a, st = cell_step(params, a_in, p)
        trace.append(st)
        outs.append(a)
    return np.stack(outs), trace


def encoder_forward(params: RrnnCellParams, inputs) -> tuple[np.ndarray, RrnnTrace]:
    """Encode a sequence read back to front; returns the last step's a_out."""
    if len(inputs) == 0:
        raise ValueError("encoder needs a non-empty sequence")
    outs, trace = run_forward(params, np.asarray(inputs)[::-1])
    return outs[-1], trace


def decoder_forward(params: RrnnCellParams, sv, steps: int) -> tuple[np.ndarray, RrnnTrace]:
    """Feed the same sentence vector at every step; outputs in sentence order."""
    if steps < 1:
        raise ValueError("decoder needs steps >= 1")
    sv = np.asarray(sv)
    if sv.shape[-1] != params.input_dim:
        raise ShapeError(f"sentence vector length {sv.shape[-1]} != decoder input {params.input_dim}")
    return run_forward(params, [sv] * steps)


def rrnn_backward(params: RrnnCellParams, trace: RrnnTrace, grads_out, grad_p_final=None):
    """Backpropagation through time.

    ``grads_out[t]`` is dLoss/da_out at processing step t (``None`` for no
    gradient). Returns ``(param_grads, grads_a_in, grad_p0)`` where
    ``grads_a_in`` is stacked in processing order and ``grad_p0`` is summed
    over batch axes.
    """
    if len(grads_out) != len(trace):
        raise ValueError(f"{len(grads_out)} output gradients for a trace of {len(trace)} steps")
    h = params.hidden
    n_in = params.input_dim
    g = {k: np.zeros_like(v) for k, v in params.blocks().items()}
    dp = np.zeros_like(trace[-1].p_next) if grad_p_final is None \
        else np.array(grad_p_final, dtype=trace[-1].p_next.dtype)
    da_in = [None] * len(trace)
    for t in range(len(trace) - 1, -1, -1):
        st = trace[t]
        if grads_out[t] is not None:
            dp = dp + np.asarray(grads_out[t]) * (1.0 - st.a_out ** 2)
        dh1, dw2, db2 = dense_backward(params.fc2, st.h1, dp)
        dz1 = dh1 * (1.0 - st.h1 ** 2)
        dh_in, dw1, db1 = dense_backward(params.fc1, st.h_in, dz1)
        g["fc2.weight"] += dw2
        g["fc2.bias"] += db2
        g["fc1.weight"] += dw1
        g["fc1.bias"] += db1
        da_in[t] = dh_in[..., :n_in]
        tp = st.h_in[..., n_in:]
        dp = dp + dh_in[..., n_in:] * (1.0 - tp ** 2)
    g["p0"] = dp.reshape(-1, h).sum(axis=0)
    return g, np.stack(da_in), g["p0"]
