"""Small configurable convolutional classifier.

A stack of conv/relu/pool stages feeds an optional attention bank placed
on the final feature map before global average pooling, then a linear
head produces class logits. The backbone is deliberately modest; any
stage widths can be configured.
"""

from __future__ import annotations

import torch
from torch import nn

from .attention import AttentionBank, DropDecisions, apply_drop_and_max, lanet_score, fuse
from .config import AttentionConfig, ModelConfig


class SmallConvNet(nn.Module):
    def __init__(self, model_cfg: ModelConfig, attention_cfg: AttentionConfig, num_classes: int):
        super().__init__()
        layers: list[nn.Module] = []
        prev = model_cfg.in_channels
        for ch in model_cfg.channels:
            layers += [
                nn.Conv2d(prev, ch, kernel_size=3, padding=1),
                nn.GroupNorm(min(4, ch), ch),
                nn.ReLU(),
                nn.MaxPool2d(2),
            ]
            prev = ch
        self.features = nn.Sequential(*layers)
        self.feature_channels = prev
        self.attention_enabled = attention_cfg.enabled
        self.bank = (
            AttentionBank(
                prev,
                num_branches=attention_cfg.num_branches,
                reduction=attention_cfg.reduction,
            )
            if attention_cfg.enabled
            else None
        )
        self.head = nn.Linear(prev, num_classes)

    def forward(
        self, x: torch.Tensor, drop_decisions: DropDecisions | None = None
    ) -> torch.Tensor:
        feats = self.features(x)
        if self.bank is not None:
            scores = lanet_score(feats, self.bank)
            if self.training and drop_decisions is not None:
                atten = apply_drop_and_max(scores, drop_decisions)
            else:
                atten = scores.max(dim=1).values
            feats = fuse(feats, atten)
        pooled = feats.mean(dim=(2, 3))
        return self.head(pooled)


def build_model(
    model_cfg: ModelConfig, attention_cfg: AttentionConfig, num_classes: int, seed: int
) -> SmallConvNet:
    """Construct with deterministic parameter initialization."""
    torch.manual_seed(seed)
    return SmallConvNet(model_cfg, attention_cfg, num_classes)
