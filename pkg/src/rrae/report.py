"""Accuracy-versus-length curves and input/output sentence tables."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .embeddings import EmbeddingTable
from .model import ModelConfig, ModelParams
from .trainer import EvalResult, reconstruct_batch, score


@dataclass
class LengthRecord:
    length: int
    matched_word_rate: float
    exact_sentence_rate: float
    n: int
    matched_words: int


@dataclass
class SentenceRecord:
    input_ids: list[int]
    output_ids: list[int]
    input_tokens: list[str]
    output_tokens: list[str]
    mismatch_positions: list[int]


def curves_from_eval(res: EvalResult) -> list[LengthRecord]:
    return [LengthRecord(length, b.matched_word_rate, b.exact_sentence_rate, b.n_sentences,
                         b.matched_words)
            for length, b in sorted(res.buckets.items())]


def length_curves(params: ModelParams, cfg: ModelConfig, dataset, table: EmbeddingTable,
                  transform=None) -> list[LengthRecord]:
    """One record per content length (tokens before EOS)."""
    if len(dataset) == 0:
        raise ValueError("cannot build curves from an empty dataset")
    return curves_from_eval(score(dataset, reconstruct_batch(params, cfg, table, dataset, transform)))


def mismatches(input_ids, output_ids) -> list[int]:
    return [i for i, (a, b) in enumerate(zip(input_ids, output_ids)) if a != b]


def sentence_records(dataset, outputs, table: EmbeddingTable) -> list[SentenceRecord]:
    return [SentenceRecord(list(ref), list(got), [table.words[i] for i in ref],
                           [table.words[i] for i in got], mismatches(ref, got))
            for ref, got in zip(dataset, outputs)]


def sentence_table(params: ModelParams, cfg: ModelConfig, dataset, table: EmbeddingTable,
                   n: int, seed: int, transform=None) -> list[SentenceRecord]:
    """Reconstruct a seeded random sample of ``n`` sentences."""
    if n > len(dataset):
        raise ValueError(f"asked for {n} sentences from a dataset of {len(dataset)}")
    rng = np.random.default_rng(seed)
    picked = [dataset[i] for i in sorted(rng.choice(len(dataset), size=n, replace=False))]
    return sentence_records(picked, reconstruct_batch(params, cfg, table, picked, transform), table)


def write_curves_csv(records, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["length", "matched_word_rate", "exact_sentence_rate", "n"])
        for r in records:
            w.writerow([r.length, repr(r.matched_word_rate), repr(r.exact_sentence_rate), r.n])


def write_sentence_tsv(records, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, delimiter="\t", lineterminator="\n", quoting=csv.QUOTE_NONE,
                       escapechar="\\")
        w.writerow(["input", "output", "mismatch_positions"])
        for r in records:
            w.writerow([" ".join(r.input_tokens), " ".join(r.output_tokens),
                        ";".join(map(str, r.mismatch_positions))])
