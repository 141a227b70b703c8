"""Match-drop regression loss.

A position whose output already matches its target word (the target is
the cosine-nearest dictionary word) contributes exactly zero loss and
zero gradient. Every other position contributes the squared Euclidean
distance to the target vector.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embeddings import EmbeddingTable, MatchResult, match_ids


class LossError(ValueError):
    pass


@dataclass
class PositionLoss:
    loss: float
    matched: bool
    match: MatchResult


@dataclass
class LossReport:
    total_loss: float
    per_position: list[PositionLoss]
    matched_count: int
    position_count: int


def _prepare(outputs, target_ids, table: EmbeddingTable):
    outputs = np.asarray(outputs, dtype=np.float64)
    target_ids = np.asarray(target_ids, dtype=np.int64)
    if outputs.shape[:-1] != target_ids.shape:
        raise LossError(f"{outputs.shape[:-1]} outputs vs {target_ids.shape} targets")
    if target_ids.size and (target_ids.min() < 0 or target_ids.max() >= len(table)):
        raise LossError("target id outside the vocabulary")
    ids, sims = match_ids(outputs, table)
    return outputs, target_ids, ids, sims


def match_drop_terms(outputs, target_ids, table: EmbeddingTable):
    """Vectorised loss: ``(per_position_loss, matched_mask, grad, ids, sims)``.

    Shapes follow ``target_ids``; ``grad`` has the shape of ``outputs``.
    """
    outputs, target_ids, ids, sims = _prepare(outputs, target_ids, table)
    matched = ids == target_ids
    diff = outputs - table.vectors[target_ids]
    diff[matched] = 0.0
    per = np.einsum("...i,...i->...", diff, diff)
    return per, matched, 2.0 * diff, ids, sims


def _report(per, matched, ids, sims) -> LossReport:
    positions = [PositionLoss(float(l), bool(m), MatchResult(int(i), float(s)))
                 for l, m, i, s in zip(per.ravel(), matched.ravel(), ids.ravel(), sims.ravel())]
    return LossReport(float(per.sum()), positions, int(matched.sum()), int(matched.size))


def match_drop_loss(outputs, target_ids, table: EmbeddingTable) -> LossReport:
    per, matched, _, ids, sims = match_drop_terms(outputs, target_ids, table)
    return _report(per, matched, ids, sims)


def match_drop_grad(outputs, target_ids, table: EmbeddingTable) -> np.ndarray:
    return match_drop_terms(outputs, target_ids, table)[2]


def cosine_terms(outputs, target_ids, table: EmbeddingTable):
    """Match-masked ``1 - cos`` loss; same return layout as :func:`match_drop_terms`."""
    outputs, target_ids, ids, sims = _prepare(outputs, target_ids, table)
    norms = np.linalg.norm(outputs, axis=-1)
    if np.any(~(norms > 0)):
        raise LossError("cosine loss undefined for a zero output vector")
    matched = ids == target_ids
    t_unit = table.unit[target_ids]
    y_unit = outputs / norms[..., None]
    cos = np.einsum("...i,...i->...", y_unit, t_unit)
    per = np.where(matched, 0.0, 1.0 - cos)
    grad = -(t_unit - cos[..., None] * y_unit) / norms[..., None]
    grad[matched] = 0.0
    return per, matched, grad, ids, sims


def cosine_loss(outputs, target_ids, table: EmbeddingTable) -> LossReport:
    per, matched, _, ids, sims = cosine_terms(outputs, target_ids, table)
    return _report(per, matched, ids, sims)


def cosine_grad(outputs, target_ids, table: EmbeddingTable) -> np.ndarray:
    return cosine_terms(outputs, target_ids, table)[2]


LOSSES = {"match_drop": match_drop_terms, "cosine": cosine_terms}
