"""Sentence autoencoder: residual recurrent encoder, sentence-vector layer,
residual recurrent decoder and a per-step regression head.

Sequences are time-major arrays ``(T, ..., word_dim)``; any axes between
time and features are batch axes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import checkpoint
from .embeddings import EmbeddingTable, MatchResult, match_ids
from .numerics import DenseLayer, ShapeError, dense_backward, dense_forward, init_params
from .rrnn import RrnnCellParams, decoder_forward, encoder_forward, rrnn_backward


class LengthError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    word_dim: int = 300
    hidden: int = 10000
    max_len: int = 60
    dtype: str = "float64"

    def __post_init__(self):
        if self.word_dim < 1 or self.hidden < 1 or self.max_len < 1:
            raise ValueError(f"invalid model config {self}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, not {self.dtype!r}")

    @property
    def max_steps(self) -> int:
        """Longest sequence handled: ``max_len`` words plus the EOS marker."""
        return self.max_len + 1

    def to_dict(self) -> dict:
        return {"kind": "model", "word_dim": self.word_dim, "hidden": self.hidden,
                "max_len": self.max_len, "dtype": self.dtype}

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        return cls(int(d["word_dim"]), int(d["hidden"]), int(d["max_len"]), d.get("dtype", "float64"))


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes = {}
    for k, s in RrnnCellParams.shapes(cfg.word_dim, cfg.hidden).items():
        shapes["enc." + k] = s
    shapes["sv.weight"] = (cfg.hidden, cfg.hidden)
    shapes["sv.bias"] = (cfg.hidden,)
    for k, s in RrnnCellParams.shapes(cfg.hidden, cfg.hidden).items():
        shapes["dec." + k] = s
    shapes["out.weight"] = (cfg.word_dim, cfg.hidden)
    shapes["out.bias"] = (cfg.word_dim,)
    return shapes


def total_parameter_count(cfg: ModelConfig) -> int:
    d, h = cfg.word_dim, cfg.hidden
    return (RrnnCellParams.count(d, h)     # encoder
            + h * h + h                    # sentence-vector layer
            + RrnnCellParams.count(h, h)   # decoder
            + h * d + d)                   # output layer


@dataclass
class ModelParams:
    enc: RrnnCellParams
    sv: DenseLayer
    dec: RrnnCellParams
    out: DenseLayer

    def blocks(self) -> dict[str, np.ndarray]:
        """Named views of every parameter array (mutating them mutates the model)."""
        b = {"enc." + k: v for k, v in self.enc.blocks().items()}
        b["sv.weight"] = self.sv.weights
        b["sv.bias"] = self.sv.bias
        b.update({"dec." + k: v for k, v in self.dec.blocks().items()})
        b["out.weight"] = self.out.weights
        b["out.bias"] = self.out.bias
        return b

    @classmethod
    def from_blocks(cls, b) -> ModelParams:
        sub = lambda prefix: {k[len(prefix):]: v for k, v in b.items() if k.startswith(prefix)}
        return cls(RrnnCellParams.from_blocks(sub("enc.")),
                   DenseLayer(b["sv.weight"], b["sv.bias"]),
                   RrnnCellParams.from_blocks(sub("dec.")),
                   DenseLayer(b["out.weight"], b["out.bias"]))

    def copy(self) -> ModelParams:
        return ModelParams.from_blocks({k: v.copy() for k, v in self.blocks().items()})

    @property
    def parameter_count(self) -> int:
        return sum(v.size for v in self.blocks().values())


def init_model(cfg: ModelConfig, seed: int) -> ModelParams:
    return ModelParams.from_blocks(init_params(param_shapes(cfg), seed, np.dtype(cfg.dtype)))


@dataclass
class ForwardTrace:
    enc_trace: list
    enc_out: np.ndarray
    sv: np.ndarray
    dec_trace: list
    dec_out: np.ndarray   # decoder a_out per step
    outputs: np.ndarray


def _check_steps(cfg: ModelConfig, n: int) -> None:
    if n < 1:
        raise ValueError("sequence must contain at least one vector")
    if n > cfg.max_steps:
        raise LengthError(f"sequence of {n} steps exceeds max_len+1 = {cfg.max_steps}")


def encode(params: ModelParams, cfg: ModelConfig, word_vectors):
    """Return ``(sentence_vector, encoder_trace, encoder_output)``."""
    x = np.asarray(word_vectors, dtype=cfg.dtype)
    _check_steps(cfg, len(x))
    if x.shape[-1] != cfg.word_dim:
        raise ShapeError(f"word vectors of length {x.shape[-1]}, model expects {cfg.word_dim}")
    a_last, trace = encoder_forward(params.enc, x)
    sv = np.tanh(dense_forward(params.sv, a_last))
    return sv, trace, a_last


def decode(params: ModelParams, cfg: ModelConfig, sv, steps: int):
    """Return ``(outputs, decoder_trace, decoder_a_out)`` for ``steps`` positions."""
    if not 1 <= steps <= cfg.max_steps:
        raise LengthError(f"steps must lie in [1, {cfg.max_steps}], got {steps}")
    a, trace = decoder_forward(params.dec, np.asarray(sv, dtype=cfg.dtype), steps)
    return dense_forward(params.out, a), trace, a


def forward(params: ModelParams, cfg: ModelConfig, word_vectors) -> ForwardTrace:
    sv, etrace, a_last = encode(params, cfg, word_vectors)
    outputs, dtrace, dec_a = decode(params, cfg, sv, len(word_vectors))
    return ForwardTrace(etrace, a_last, sv, dtrace, dec_a, outputs)


def model_backward(params: ModelParams, cfg: ModelConfig, trace: ForwardTrace,
                   grad_outputs) -> dict[str, np.ndarray]:
    grad_outputs = np.asarray(grad_outputs)
    if grad_outputs.shape != trace.outputs.shape:
        raise ValueError(f"output gradient {grad_outputs.shape} does not match trace {trace.outputs.shape}")
    grads = {}
    g_dec_a, grads["out.weight"], grads["out.bias"] = dense_backward(params.out, trace.dec_out, grad_outputs)
    dec_g, g_sv_steps, _ = rrnn_backward(params.dec, trace.dec_trace, g_dec_a)
    grads.update({"dec." + k: v for k, v in dec_g.items()})
    # the same sentence vector feeds every decoder step
    g_sv = g_sv_steps.sum(axis=0)
    g_sv_pre = g_sv * (1.0 - trace.sv ** 2)
    g_enc_out, grads["sv.weight"], grads["sv.bias"] = dense_backward(params.sv, trace.enc_out, g_sv_pre)
    n = len(trace.enc_trace)
    enc_g, _, _ = rrnn_backward(params.enc, trace.enc_trace, [None] * (n - 1) + [g_enc_out])
    grads.update({"enc." + k: v for k, v in enc_g.items()})
    return {k: grads[k] for k in param_shapes(cfg)}


def decode_until_eos(params: ModelParams, cfg: ModelConfig, table: EmbeddingTable, sv) -> list[int]:
    """Inference decode: run max_len+1 steps and cut after the first EOS match."""
    outputs, _, _ = decode(params, cfg, sv, cfg.max_steps)
    ids, _ = match_ids(outputs, table)
    out = []
    for i in ids.tolist():
        out.append(i)
        if i == table.eos_id:
            break
    return out


def reconstruct(params: ModelParams, cfg: ModelConfig, table: EmbeddingTable, token_ids):
    """Encode then decode with the input's length; returns ``(ids, matches)``."""
    token_ids = list(token_ids)
    if not token_ids or token_ids[-1] != table.eos_id:
        raise ValueError("token sequence must end with the EOS id")
    x = table.vectors[token_ids]
    sv, _, _ = encode(params, cfg, x)
    outputs, _, _ = decode(params, cfg, sv, len(token_ids))
    ids, sims = match_ids(outputs, table)
    return ids.tolist(), [MatchResult(int(i), float(s)) for i, s in zip(ids, sims)]


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(params: ModelParams, cfg: ModelConfig, train_state, path, meta=None) -> None:
    config = cfg.to_dict()
    if meta:
        config["meta"] = meta
    checkpoint.write(path, config, params.blocks(), train_state)


def load_checkpoint(path):
    """Return ``(params, cfg, train_state_or_None)``; ``cfg.meta`` extras are dropped."""
    config, blocks, state = checkpoint.read(path)
    if config.get("kind") != "model":
        raise checkpoint.CheckpointError(f"{path}: not a model checkpoint (kind={config.get('kind')!r})")
    cfg = ModelConfig.from_dict(config)
    shapes = param_shapes(cfg)
    if set(blocks) != set(shapes):
        raise checkpoint.CheckpointError(f"{path}: parameter blocks do not match the config")
    arrays = {}
    for name, shape in shapes.items():
        if blocks[name].size != int(np.prod(shape)):
            raise checkpoint.CheckpointError(f"{path}: block {name} has {blocks[name].size} elements")
        arrays[name] = blocks[name].reshape(shape).astype(cfg.dtype)
    params = ModelParams.from_blocks(arrays)
    ts = None
    if state is not None:
        ts = checkpoint.TrainState.from_parts(state[0], state[1], shapes, np.dtype(cfg.dtype))
    return params, cfg, ts
