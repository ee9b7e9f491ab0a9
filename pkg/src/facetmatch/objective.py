"""Batch classification loss, factor-orthogonal penalty and their weighted sum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .matcher import avepool_score_matrix, score_matrix
from .numerics import DimensionError, Tensor


@dataclass
class LossConfig:
    tau: float = 10.0
    lam: float = 1.0
    # "divide" scales logits as s / tau; "multiply" as s * tau
    temperature_mode: str = "divide"
    scoring: str = "sum"  # "sum" over token cosines, or "avepool"

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.temperature_mode not in ("divide", "multiply"):
            raise ValueError(f"unknown temperature mode {self.temperature_mode!r}")
        if self.scoring not in ("sum", "avepool"):
            raise ValueError(f"unknown scoring rule {self.scoring!r}")

    @property
    def logit_scale(self) -> float:
        return 1.0 / self.tau if self.temperature_mode == "divide" else self.tau


def ranking_loss_from_scores(scores: Tensor, scale: float) -> Tensor:
    """Mean over rows of -log softmax(scale * row)[diagonal]."""
    scores = nx.as_tensor(scores)
    b = scores.shape[0]
    if scores.shape != (b, b):
        raise DimensionError(f"score matrix must be square, got {scores.shape}")
    logp = nx.log_softmax(scores * scale, axis=-1)
    diag = logp[np.arange(b), np.arange(b)]
    return -nx.mean(diag)


def batch_scores(queries: Tensor, targets: Tensor, scoring: str = "sum") -> Tensor:
    if queries.shape[0] != targets.shape[0]:
        raise DimensionError(f"batch sizes differ: {queries.shape[0]} queries vs {targets.shape[0]} targets")
    return score_matrix(queries, targets) if scoring == "sum" else avepool_score_matrix(queries, targets)


def ranking_loss(queries: Tensor, targets: Tensor, cfg: LossConfig | None = None) -> Tensor:
    """In-batch classification loss on normalised ``(B, U, D)`` token matrices."""
    cfg = cfg or LossConfig()
    queries, targets = nx.as_tensor(queries), nx.as_tensor(targets)
    return ranking_loss_from_scores(batch_scores(queries, targets, cfg.scoring), cfg.logit_scale)


def _gram_penalty(x: Tensor) -> Tensor:
    u = x.shape[1]
    gram = nx.matmul(x, nx.swapaxes(x, -1, -2)) - np.eye(u)
    return nx.tsum(gram * gram)


def ortho_loss(queries: Tensor, targets: Tensor) -> Tensor:
    """(1/B) sum_i ||Q_i Q_i^T - I||_F^2 + ||T_i T_i^T - I||_F^2 over normalised tokens."""
    queries, targets = nx.as_tensor(queries), nx.as_tensor(targets)
    if queries.shape[0] != targets.shape[0]:
        raise DimensionError("batch sizes differ")
    return (_gram_penalty(queries) + _gram_penalty(targets)) * (1.0 / queries.shape[0])


def total_loss(queries: Tensor, targets: Tensor, cfg: LossConfig | None = None) -> Tensor:
    cfg = cfg or LossConfig()
    loss = ranking_loss(queries, targets, cfg)
    if cfg.lam:
        loss = loss + ortho_loss(queries, targets) * cfg.lam
    return loss
