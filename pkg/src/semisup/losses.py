"""Training objectives: supervised CE, pseudo-label consistency, and the
combined three-term loss.

All batch reductions are means so the weighting coefficients stay
scale-free with respect to batch size. Log arguments are floored at
1e-12 so saturated predictions never produce infinities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import torch

from .datamodel import PseudoLabel

LOG_FLOOR = 1e-12


class LossError(ValueError):
    """Raised on empty batches or non-finite loss components."""


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 0.5  # consistency weight
    lambda2: float = 0.1  # negative-learning weight

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lambda1) and math.isfinite(self.lambda2)):
            raise LossError("loss weights must be finite")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise LossError("loss weights must be nonnegative")


@dataclass(frozen=True)
class LossReport:
    """Per-step loss components and pseudo-label gate counts."""

    l_labeled: float
    l_consistency: float
    l_negative: float
    l_total: float
    accepted_count: int
    rejected_count: int


def supervised_loss(labels: torch.Tensor, probs: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy -log p[y] over a nonempty labeled batch."""
    if probs.dim() != 2:
        raise LossError(f"probs must be (B, C), got {tuple(probs.shape)}")
    if probs.shape[0] == 0:
        raise LossError("labeled batch must be nonempty")
    if labels.shape[0] != probs.shape[0]:
        raise LossError("labels and probs disagree on batch size")
    picked = probs[torch.arange(probs.shape[0]), labels]
    return -torch.log(torch.clamp(picked, min=LOG_FLOOR)).mean()


def consistency_loss(
    pseudo_labels: Sequence[PseudoLabel], strong_probs: torch.Tensor
) -> torch.Tensor:
    """Cross-entropy between hard pseudo-labels and strong-view
    distributions, averaged over accepted samples only.

    Returns exactly 0 when nothing is accepted, so the term vanishes
    without producing NaN.
    """
    if strong_probs.dim() != 2:
        raise LossError(f"strong_probs must be (B, C), got {tuple(strong_probs.shape)}")
    if len(pseudo_labels) != strong_probs.shape[0]:
        raise LossError("pseudo_labels and strong_probs disagree on batch size")
    rows = [i for i, pl in enumerate(pseudo_labels) if pl.accepted]
    if not rows:
        return torch.zeros((), dtype=strong_probs.dtype, device=strong_probs.device)
    classes = torch.tensor([pseudo_labels[i].class_index for i in rows], dtype=torch.long)
    picked = strong_probs[torch.tensor(rows, dtype=torch.long), classes]
    return -torch.log(torch.clamp(picked, min=LOG_FLOOR)).mean()


def total_loss(
    l_labeled: torch.Tensor | float,
    l_consistency: torch.Tensor | float,
    l_negative: torch.Tensor | float,
    weights: LossWeights,
) -> torch.Tensor | float:
    """Weighted sum of the three components.

    Rejects non-finite components, naming the offending term.
    """
    for name, value in (
        ("l_labeled", l_labeled),
        ("l_consistency", l_consistency),
        ("l_negative", l_negative),
    ):
        scalar = float(value.detach()) if isinstance(value, torch.Tensor) else float(value)
        if not math.isfinite(scalar):
            raise LossError(f"non-finite loss component {name} = {scalar}")
    return l_labeled + weights.lambda1 * l_consistency + weights.lambda2 * l_negative
