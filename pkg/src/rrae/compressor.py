"""Two-layer autoencoder that shrinks sentence vectors.

``compress`` is a tanh layer down to ``compressed_dim``; ``decompress`` is
an affine layer back to ``hidden``. It is trained on its own, after the
main model, to minimise mean squared reconstruction error.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import checkpoint
from .numerics import (AdamConfig, AdamState, DenseLayer, ShapeError, TrainingError, adam_step,
                       dense_backward, dense_forward, init_params)


@dataclass
class CompressorParams:
    compress_layer: DenseLayer
    decompress_layer: DenseLayer

    def __post_init__(self):
        h, c = self.compress_layer.n_in, self.compress_layer.n_out
        if self.decompress_layer.weights.shape != (h, c):
            raise ShapeError("decompression layer does not mirror the compression layer")

    @property
    def hidden(self) -> int:
        return self.compress_layer.n_in

    @property
    def compressed_dim(self) -> int:
        return self.compress_layer.n_out

    def blocks(self) -> dict[str, np.ndarray]:
        return {"comp.compress.weight": self.compress_layer.weights,
                "comp.compress.bias": self.compress_layer.bias,
                "comp.decompress.weight": self.decompress_layer.weights,
                "comp.decompress.bias": self.decompress_layer.bias}

    @classmethod
    def from_blocks(cls, b) -> CompressorParams:
        return cls(DenseLayer(b["comp.compress.weight"], b["comp.compress.bias"]),
                   DenseLayer(b["comp.decompress.weight"], b["comp.decompress.bias"]))


def compressed_size(hidden: int, ratio: float = 0.3) -> int:
    return max(1, round(ratio * hidden))


def compressor_shapes(hidden: int, compressed_dim: int) -> dict[str, tuple[int, int]]:
    return {"comp.compress.weight": (compressed_dim, hidden), "comp.compress.bias": (compressed_dim,),
            "comp.decompress.weight": (hidden, compressed_dim), "comp.decompress.bias": (hidden,)}


def init_compressor(hidden: int, compressed_dim: int, seed: int, dtype=np.float64) -> CompressorParams:
    if compressed_dim > hidden or compressed_dim < 1:
        raise ValueError(f"compressed_dim must lie in [1, hidden]; got {compressed_dim} for hidden {hidden}")
    return CompressorParams.from_blocks(init_params(compressor_shapes(hidden, compressed_dim), seed, dtype))


def compress(params: CompressorParams, sv) -> np.ndarray:
    return np.tanh(dense_forward(params.compress_layer, sv))


def decompress(params: CompressorParams, cv) -> np.ndarray:
    return dense_forward(params.decompress_layer, cv)


def round_trip(params: CompressorParams, sv) -> np.ndarray:
    return decompress(params, compress(params, sv))


def reconstruction_loss(params: CompressorParams, svs) -> float:
    d = round_trip(params, svs) - svs
    return float(np.mean(d * d))


def loss_and_grads(params: CompressorParams, svs: np.ndarray):
    """Mean squared error per component and its gradient for a batch (N, hidden)."""
    c = compress(params, svs)
    d = decompress(params, c) - svs
    loss = float(np.mean(d * d))
    g_rec = 2.0 * d / d.size
    g_c, gw2, gb2 = dense_backward(params.decompress_layer, c, g_rec)
    _, gw1, gb1 = dense_backward(params.compress_layer, svs, g_c * (1.0 - c * c))
    return loss, {"comp.compress.weight": gw1, "comp.compress.bias": gb1,
                  "comp.decompress.weight": gw2, "comp.decompress.bias": gb2}


def train_compressor(params: CompressorParams, svs, adam: AdamConfig, epochs: int = 1000,
                     minibatch: int = 32, seed: int = 0, tol: float = 0.0):
    """Minibatch ADAM over shuffled sentence vectors.

    Stops after ``epochs`` or once the full-dataset loss falls to ``tol``.
    Returns ``(params, history)`` with the full-dataset loss before training
    and after each epoch.
    """
    svs = np.asarray(svs, dtype=params.compress_layer.weights.dtype)
    if svs.ndim != 2 or len(svs) == 0:
        raise ValueError("compressor training needs a non-empty (N, hidden) array")
    if svs.shape[1] != params.hidden:
        raise ShapeError(f"sentence vectors of length {svs.shape[1]}, compressor expects {params.hidden}")
    rng = np.random.default_rng(seed)
    blocks = params.blocks()
    state = AdamState.for_params(blocks)
    history = [reconstruction_loss(params, svs)]
    for _ in range(epochs):
        order = rng.permutation(len(svs))
        for k in range(0, len(svs), minibatch):
            loss, grads = loss_and_grads(params, svs[order[k:k + minibatch]])
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite compressor loss at step {state.iteration}")
            adam_step(blocks, grads, state, adam)
        history.append(reconstruction_loss(params, svs))
        if history[-1] <= tol:
            break
    return params, history


def save_compressor(params: CompressorParams, path) -> None:
    config = {"kind": "compressor", "hidden": params.hidden, "compressed_dim": params.compressed_dim,
              "dtype": str(params.compress_layer.weights.dtype)}
    checkpoint.write(path, config, params.blocks())


def load_compressor(path) -> CompressorParams:
    config, blocks, _ = checkpoint.read(path)
    if config.get("kind") != "compressor":
        raise checkpoint.CheckpointError(f"{path}: not a compressor checkpoint")
    shapes = compressor_shapes(config["hidden"], config["compressed_dim"])
    if set(blocks) != set(shapes):
        raise checkpoint.CheckpointError(f"{path}: compressor blocks do not match the config")
    return CompressorParams.from_blocks(
        {k: blocks[k].reshape(s).astype(config.get("dtype", "float64")) for k, s in shapes.items()})
