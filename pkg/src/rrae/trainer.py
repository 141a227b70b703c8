"""Minibatch training, evaluation and random hyperparameter search."""
from __future__ import annotations

import csv
import logging
import math
import time
from collections import defaultdict
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .checkpoint import TrainState
from .embeddings import EmbeddingTable, match_ids
from .loss import LOSSES
from .model import ModelConfig, ModelParams, decode, encode, forward, init_model, model_backward
from .numerics import AdamConfig, AdamState, TrainingError, adam_step

log = logging.getLogger(__name__)

LOG_FIELDS = ("iteration", "lr", "train_loss", "tune_matched", "tune_exact", "seconds")


@dataclass(frozen=True)
class TrainConfig:
    minibatch: int = 32
    adam: AdamConfig = field(default_factory=AdamConfig)
    eval_every: int = 1000
    patience: int = 5
    max_iterations: int = 2_220_000
    seed: int = 0
    min_improvement: float = 0.001   # tune matched-word rate, as a fraction (0.1 pp)
    loss: str = "match_drop"

    def __post_init__(self):
        if self.minibatch < 1:
            raise ValueError("minibatch must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {sorted(LOSSES)}")


@dataclass
class LogRecord:
    iteration: int
    lr: float
    train_loss: float
    tune_matched: float
    tune_exact: float
    seconds: float


class TrainLog(list):
    """Evaluation records in iteration order."""

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(LOG_FIELDS)
            for r in self:
                w.writerow([r.iteration, repr(r.lr), repr(r.train_loss), repr(r.tune_matched),
                            repr(r.tune_exact), f"{r.seconds:.3f}"])

    @classmethod
    def read_csv(cls, path) -> TrainLog:
        out = cls()
        with open(path, newline="") as f:
            for row in csv.DictReader(f):
                out.append(LogRecord(int(row["iteration"]), float(row["lr"]), float(row["train_loss"]),
                                     float(row["tune_matched"]), float(row["tune_exact"]),
                                     float(row["seconds"])))
        return out

    def deterministic_rows(self) -> list[tuple]:
        """Every column except wall-clock time."""
        return [(r.iteration, r.lr, repr(r.train_loss), r.tune_matched, r.tune_exact) for r in self]


# ---------------------------------------------------------------- batching


def epoch_batches(dataset, minibatch: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffle once, bucket by length, cut into minibatches, shuffle batch order.

    Each returned batch is an int array (B, T) of uniform length T; every
    sentence appears exactly once per epoch.
    """
    order = rng.permutation(len(dataset))
    buckets = defaultdict(list)
    for i in order:
        buckets[len(dataset[i])].append(dataset[i])
    batches = []
    for length in sorted(buckets):
        seqs = buckets[length]
        for k in range(0, len(seqs), minibatch):
            batches.append(np.array(seqs[k:k + minibatch], dtype=np.int64))
    return [batches[i] for i in rng.permutation(len(batches))]


def batch_loss_and_grads(params: ModelParams, cfg: ModelConfig, table: EmbeddingTable,
                         batch: np.ndarray, loss: str = "match_drop"):
    """Loss summed over positions and averaged over sentences, plus its gradient.

    Returns ``(loss, grads, n_mismatched)``; ``grads`` is None when the
    loss is not finite.
    """
    targets = np.asarray(batch).T                # (T, B)
    x = table.vectors[targets]
    tr = forward(params, cfg, x)
    per, matched, g_out, _, _ = LOSSES[loss](tr.outputs, targets, table)
    b = targets.shape[1]
    loss = float(per.sum()) / b
    if not math.isfinite(loss):
        return loss, None, int((~matched).sum())
    return loss, model_backward(params, cfg, tr, g_out / b), int((~matched).sum())


# ---------------------------------------------------------------- evaluation


@dataclass
class Bucket:
    n_sentences: int = 0
    words: int = 0
    matched_words: int = 0
    exact_sentences: int = 0

    @property
    def matched_word_rate(self) -> float:
        return self.matched_words / self.words if self.words else 1.0

    @property
    def exact_sentence_rate(self) -> float:
        return self.exact_sentences / self.n_sentences if self.n_sentences else 1.0


@dataclass
class EvalResult:
    matched_word_rate: float
    exact_sentence_rate: float
    buckets: dict[int, Bucket]

    @property
    def matched_words(self) -> int:
        return sum(b.matched_words for b in self.buckets.values())

    @property
    def total_words(self) -> int:
        return sum(b.words for b in self.buckets.values())


def reconstruct_batch(params: ModelParams, cfg: ModelConfig, table: EmbeddingTable, dataset,
                      transform=None) -> list[list[int]]:
    """Matched output ids for every sequence, computed per length group.

    ``transform`` optionally maps the (B, hidden) sentence vectors before
    decoding, e.g. a compress/decompress round trip.
    """
    groups = defaultdict(list)
    for i, seq in enumerate(dataset):
        groups[len(seq)].append(i)
    out: list = [None] * len(dataset)
    for length, idx in groups.items():
        ids = np.array([dataset[i] for i in idx], dtype=np.int64).T
        sv, _, _ = encode(params, cfg, table.vectors[ids])
        if transform is not None:
            sv = transform(sv)
        outputs, _, _ = decode(params, cfg, sv, length)
        matched, _ = match_ids(outputs, table)
        for col, i in enumerate(idx):
            out[i] = matched[:, col].tolist()
    return out


def score(dataset, outputs) -> EvalResult:
    """Rates from reference and reconstructed id sequences.

    Word counts cover the content positions before EOS; an exact sentence
    must also reproduce the EOS position.
    """
    buckets: dict[int, Bucket] = {}
    for ref, got in zip(dataset, outputs):
        n = len(ref) - 1
        b = buckets.setdefault(n, Bucket())
        b.n_sentences += 1
        b.words += n
        b.matched_words += sum(int(r == g) for r, g in zip(ref[:-1], got[:-1]))
        b.exact_sentences += int(list(ref) == list(got))
    buckets = dict(sorted(buckets.items()))
    words = sum(b.words for b in buckets.values())
    matched = sum(b.matched_words for b in buckets.values())
    n = sum(b.n_sentences for b in buckets.values())
    exact = sum(b.exact_sentences for b in buckets.values())
    return EvalResult(matched / words if words else 1.0, exact / n if n else 1.0, buckets)


def evaluate(params: ModelParams, cfg: ModelConfig, dataset, table: EmbeddingTable,
             transform=None) -> EvalResult:
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    return score(dataset, reconstruct_batch(params, cfg, table, dataset, transform))


# ---------------------------------------------------------------- training


def new_train_state(params: ModelParams, seed: int) -> TrainState:
    rng = np.random.default_rng(seed)
    return TrainState(AdamState.for_params(params.blocks()), rng_state=rng.bit_generator.state)


def _rng_from_state(state: dict) -> np.random.Generator:
    bitgen = getattr(np.random, state["bit_generator"])()
    bitgen.state = state
    return np.random.Generator(bitgen)


def train(params: ModelParams, cfg: ModelConfig, table: EmbeddingTable, train_data, tune_data,
          tcfg: TrainConfig, state: TrainState | None = None, train_log: TrainLog | None = None,
          stop_at: int | None = None, on_eval=None):
    """Train in place; returns ``(params, state, log)``.

    ``state``/``train_log`` resume an earlier run. ``stop_at`` interrupts the
    run after that many iterations (the state stays resumable).
    ``on_eval(params, state, log)`` is called after every evaluation.
    """
    if not train_data or not tune_data:
        raise ValueError("train and tune datasets must be non-empty")
    blocks = params.blocks()
    state = state or new_train_state(params, tcfg.seed)
    train_log = TrainLog() if train_log is None else train_log
    t_start = time.perf_counter() - (train_log[-1].seconds if train_log else 0.0)

    def evaluate_now():
        res = evaluate(params, cfg, tune_data, table)
        it = state.iteration
        tl = state.loss_sum / state.loss_count if state.loss_count else math.nan
        train_log.append(LogRecord(it, tcfg.adam.lr(it), tl, res.matched_word_rate,
                                   res.exact_sentence_rate, time.perf_counter() - t_start))
        state.loss_sum, state.loss_count = 0.0, 0
        if res.matched_word_rate > state.best_tune + tcfg.min_improvement:
            state.best_tune, state.stale = res.matched_word_rate, 0
        else:
            state.stale += 1
            if state.stale >= tcfg.patience:
                state.stopped = True
        log.info("iter %d lr %.3g loss %.5g tune matched %.4f exact %.4f", it,
                 train_log[-1].lr, tl, res.matched_word_rate, res.exact_sentence_rate)
        if on_eval is not None:
            on_eval(params, state, train_log)

    if not train_log:
        evaluate_now()

    cached_epoch, batches = None, None
    while not state.stopped and state.iteration < tcfg.max_iterations:
        if stop_at is not None and state.iteration >= stop_at:
            break
        if cached_epoch != state.epoch:
            rng = _rng_from_state(state.rng_state)
            batches = epoch_batches(train_data, tcfg.minibatch, rng)
            cached_epoch = state.epoch
        if state.cursor >= len(batches):
            state.epoch += 1
            state.cursor = 0
            state.rng_state = rng.bit_generator.state
            continue
        loss, grads, _ = batch_loss_and_grads(params, cfg, table, batches[state.cursor], tcfg.loss)
        if not math.isfinite(loss):
            raise TrainingError(
                f"non-finite loss at iteration {state.iteration}, epoch {state.epoch} batch {state.cursor}")
        adam_step(blocks, grads, state.adam, tcfg.adam)
        state.cursor += 1
        state.loss_sum += loss
        state.loss_count += 1
        if state.iteration % tcfg.eval_every == 0 or state.iteration == tcfg.max_iterations:
            evaluate_now()
    return params, state, train_log


# ---------------------------------------------------------------- search


DEFAULT_SPACE = {"lr0": [1e-4, 1e-2], "l2": [1e-9, 1e-5], "p1": [0.8, 0.85, 0.9], "p2": [0.99, 0.999]}


def sample_adam(space: dict, rng: np.random.Generator, base: AdamConfig) -> AdamConfig:
    def log_uniform(lo, hi):
        return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))
    return replace(base, lr0=log_uniform(*space["lr0"]), l2=log_uniform(*space["l2"]),
                   p1=float(rng.choice(space["p1"])), p2=float(rng.choice(space["p2"])))


def random_search(space: dict, trials: int, budget: int, cfg: ModelConfig, table: EmbeddingTable,
                  train_data, tune_data, base: TrainConfig, seed: int = 0) -> list[dict]:
    """Train ``trials`` sampled configurations for ``budget`` iterations each.

    Every trial starts from the same initial parameters; results are ranked
    by tune matched-word rate, then exact-sentence rate, then trial order.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    results = []
    for trial in range(trials):
        adam = sample_adam(space, rng, base.adam)
        tcfg = replace(base, adam=adam, max_iterations=budget, patience=max(budget, 1))
        params = init_model(cfg, base.seed)
        train(params, cfg, table, train_data, tune_data, tcfg)
        res = evaluate(params, cfg, tune_data, table)
        results.append({"trial": trial, "adam": asdict(adam),
                        "tune_matched": res.matched_word_rate,
                        "tune_exact": res.exact_sentence_rate})
    results.sort(key=lambda r: (-r["tune_matched"], -r["tune_exact"], r["trial"]))
    for rank, r in enumerate(results):
        r["rank"] = rank + 1
    return results
