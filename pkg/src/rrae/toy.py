"""Synthetic dictionaries and corpora for desk-scale experiments."""
from __future__ import annotations

import numpy as np

from .embeddings import EmbeddingTable, synthetic_table


def random_corpus(table: EmbeddingTable, n: int, min_len: int, max_len: int, seed: int,
                  unique: bool = True, exclude=(), zipf: float = 0.0) -> list[list[int]]:
    """``n`` sentences of uniformly random content words, each ending in EOS.

    Content words are the table's non-special entries, drawn with
    probability proportional to ``rank ** -zipf`` (uniform for 0). With
    ``unique`` no sentence repeats, and none appears in ``exclude``.
    """
    rng = np.random.default_rng(seed)
    special = set(table.special_ids.values())
    words = np.array([i for i in range(len(table)) if i not in special])
    prob = np.arange(1, len(words) + 1, dtype=float) ** -zipf
    prob /= prob.sum()
    seen = {tuple(s) for s in exclude}
    out = []
    while len(out) < n:
        length = int(rng.integers(min_len, max_len + 1))
        seq = rng.choice(words, size=length, p=prob).tolist() + [table.eos_id]
        if unique and tuple(seq) in seen:
            continue
        seen.add(tuple(seq))
        out.append(seq)
    return out


def toy_setup(vocab: int = 50, dim: int = 8, n_train: int = 200, n_tune: int = 50,
              min_len: int = 2, max_len: int = 6, seed: int = 0, zipf: float = 0.0):
    """Dictionary of ``vocab`` entries (EOS and UNK included) plus disjoint
    train and tune corpora."""
    table = synthetic_table(vocab - 2, dim, seed)
    train = random_corpus(table, n_train, min_len, max_len, seed + 1, zipf=zipf)
    tune = random_corpus(table, n_tune, min_len, max_len, seed + 2, exclude=train, zipf=zipf)
    return table, train, tune
