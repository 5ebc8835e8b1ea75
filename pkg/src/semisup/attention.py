"""Local-attention feature enhancement.

A bank of N branches maps a backbone feature map to N single-channel
score maps (two 1x1 convolutions, channels c -> c/r -> 1, sigmoid
output). During training, each batch element picks one branch uniformly
at random and zeroes its map with probability p; the surviving maps are
max-fused into a single attention map that reweights the backbone
features via a Hadamard product.

The drop decision is sampled separately from its application so a
caller can freeze decisions (gradient checks, replay) or let the
trainer's random stream drive them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn


class AttentionError(ValueError):
    """Raised on shape or configuration mismatches."""


class AttentionBank(nn.Module):
    """N parallel score branches over one feature map.

    Each branch reduces channels ``in_channels -> max(in_channels // reduction, 1)
    -> 1`` with a rectifier between the two 1x1 convolutions and a sigmoid on
    the output, so every score lies strictly inside (0, 1). The N branches are
    stored fused (one wide conv, then one grouped conv) which is numerically
    identical to N independent branch stacks but costs two kernel launches
    instead of 2N.
    """

    def __init__(self, in_channels: int, num_branches: int = 6, reduction: int = 16):
        super().__init__()
        if num_branches < 1:
            raise AttentionError(f"num_branches must be >= 1, got {num_branches}")
        if reduction < 1:
            raise AttentionError(f"reduction must be >= 1, got {reduction}")
        hidden = max(in_channels // reduction, 1)
        self.in_channels = in_channels
        self.num_branches = num_branches
        self.reduction = reduction
        self.hidden = hidden
        self.reduce = nn.Conv2d(in_channels, num_branches * hidden, kernel_size=1)
        self.score = nn.Conv2d(
            num_branches * hidden, num_branches, kernel_size=1, groups=num_branches
        )

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return lanet_score(features, self)


def lanet_score(features: torch.Tensor, bank: AttentionBank) -> torch.Tensor:
    """Score stack for a batch of feature maps.

    features: (B, C, h, w) -> scores: (B, N, 1, h, w), each entry in (0, 1).
    """
    if features.dim() != 4:
        raise AttentionError(f"features must be (B, C, h, w), got {tuple(features.shape)}")
    if features.shape[1] != bank.in_channels:
        raise AttentionError(
            f"feature channels {features.shape[1]} do not match bank "
            f"in_channels {bank.in_channels}"
        )
    hidden = torch.relu(bank.reduce(features))
    return torch.sigmoid(bank.score(hidden)).unsqueeze(2)


@dataclass(frozen=True)
class DropDecisions:
    """Frozen per-element drop choices: which branch, and whether to zero it."""

    branch_index: np.ndarray  # (B,) ints in [0, N)
    dropped: np.ndarray  # (B,) bools


def sample_drop_decisions(
    batch_size: int, num_branches: int, p: float, rng: np.random.Generator
) -> DropDecisions:
    """One uniform branch index per element, zeroed with probability p."""
    if not 0.0 <= p <= 1.0:
        raise AttentionError(f"drop probability must be in [0, 1], got {p}")
    idx = rng.integers(0, num_branches, size=batch_size)
    dropped = rng.random(batch_size) < p
    return DropDecisions(branch_index=idx, dropped=dropped)


def apply_drop_and_max(scores: torch.Tensor, decisions: DropDecisions) -> torch.Tensor:
    """Zero each element's chosen branch map (where flagged), then max-fuse.

    scores: (B, N, 1, h, w) -> (B, 1, h, w). Pure and differentiable; the
    zeroing is a multiplicative mask so gradients flow through surviving maps.
    """
    b, n = scores.shape[0], scores.shape[1]
    if decisions.branch_index.shape[0] != b:
        raise AttentionError(
            f"decisions cover {decisions.branch_index.shape[0]} elements, batch has {b}"
        )
    mask = torch.ones(b, n, 1, 1, 1, dtype=scores.dtype, device=scores.device)
    rows = np.nonzero(decisions.dropped)[0]
    if rows.size:
        mask[rows, decisions.branch_index[rows]] = 0.0
    return (scores * mask).max(dim=1).values


def drop_and_max(
    scores: torch.Tensor,
    p: float,
    rng: np.random.Generator | None,
    training: bool,
) -> torch.Tensor:
    """Training: random per-element drop then max-fuse. Eval: pure max."""
    if not training:
        return scores.max(dim=1).values
    if rng is None:
        raise AttentionError("training-mode drop_and_max needs a random source")
    decisions = sample_drop_decisions(scores.shape[0], scores.shape[1], p, rng)
    return apply_drop_and_max(scores, decisions)


def fuse(features: torch.Tensor, atten: torch.Tensor) -> torch.Tensor:
    """Hadamard product, the single attention channel broadcast over all
    feature channels.

    features: (B, C, h, w), atten: (B, 1, h, w) -> (B, C, h, w).
    """
    if features.shape[-2:] != atten.shape[-2:]:
        raise AttentionError(
            f"spatial mismatch: features {tuple(features.shape[-2:])} vs "
            f"attention {tuple(atten.shape[-2:])}"
        )
    return features * atten
