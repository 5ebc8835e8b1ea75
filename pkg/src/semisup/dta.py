"""Dynamic threshold adjustment and the EMA teacher.

Per-class confidence thresholds are recomputed once per epoch from the
teacher's correct predictions on labeled data (mean confidence of the
true class over correctly predicted samples), then smoothed across
epochs: tau_c(t) = mu * tau_c(t-1) + (1 - mu) * fresh_c. Classes with no
correct predictions this epoch carry their previous threshold forward.

The teacher is a gradient-free shadow of the student updated after every
optimizer step: theta_teacher <- decay * theta_teacher + (1 - decay) *
theta_student.

Threshold math runs in float64 numpy so the trainer and the offline
audit replay share one implementation bit for bit.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .datamodel import ProbabilityVector, PseudoLabel, argmax_class


class DtaError(ValueError):
    """Raised on shape or range violations in threshold bookkeeping."""


@dataclass(frozen=True)
class ThresholdState:
    """Per-class confidence thresholds with their smoothing weight."""

    tau: np.ndarray  # (C,) float64 in [0, 1]
    epoch: int
    mu: float

    def __post_init__(self) -> None:
        t = np.asarray(self.tau, dtype=np.float64)
        if t.ndim != 1:
            raise DtaError(f"tau must be 1-D, got shape {t.shape}")
        if np.any(t < 0.0) or np.any(t > 1.0):
            raise DtaError("thresholds must lie in [0, 1]")
        if not 0.0 <= self.mu <= 1.0:
            raise DtaError(f"mu must be in [0, 1], got {self.mu}")
        t.setflags(write=False)
        object.__setattr__(self, "tau", t)

    @classmethod
    def initial(cls, num_classes: int, tau_init: float = 0.8, mu: float = 0.9) -> "ThresholdState":
        return cls(tau=np.full(num_classes, tau_init, dtype=np.float64), epoch=0, mu=mu)

    @property
    def num_classes(self) -> int:
        return self.tau.shape[0]


class ClassConfidenceAccumulator:
    """Running per-class sums of true-class confidence over correct
    predictions."""

    def __init__(self, num_classes: int):
        self.num_classes = num_classes
        self.sums = np.zeros(num_classes, dtype=np.float64)
        self.counts = np.zeros(num_classes, dtype=np.int64)

    def reset(self) -> None:
        self.sums.fill(0.0)
        self.counts.fill(0)

    def class_mean(self, c: int) -> float:
        if self.counts[c] == 0:
            raise DtaError(f"class {c} has no correct predictions this epoch")
        return float(self.sums[c] / self.counts[c])


def collect_class_confidences(
    acc: ClassConfidenceAccumulator,
    teacher_probs: np.ndarray,
    labels: np.ndarray,
) -> ClassConfidenceAccumulator:
    """Accumulate confidences of correctly predicted labeled samples.

    teacher_probs: (B, C) rows on the simplex; labels: (B,) true classes.
    A sample contributes probs[label] to its class only when the argmax
    prediction equals the label.
    """
    probs = np.asarray(teacher_probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.ndim != 2 or probs.shape[1] != acc.num_classes:
        raise DtaError(f"teacher_probs must be (B, {acc.num_classes}), got {probs.shape}")
    if labels.shape[0] != probs.shape[0]:
        raise DtaError("labels and teacher_probs disagree on batch size")
    if labels.size and (labels.min() < 0 or labels.max() >= acc.num_classes):
        raise DtaError(f"label out of range [0, {acc.num_classes})")
    for row, y in zip(probs, labels):
        y = int(y)
        if int(np.argmax(row)) == y:
            acc.sums[y] += row[y]
            acc.counts[y] += 1
    return acc


def finalize_thresholds(
    state: ThresholdState, acc: ClassConfidenceAccumulator
) -> ThresholdState:
    """Epoch-boundary threshold update; resets the accumulator.

    Classes with at least one correct prediction move toward their fresh
    mean confidence with weight (1 - mu); classes with none keep their
    previous threshold.
    """
    if acc.num_classes != state.num_classes:
        raise DtaError("accumulator and threshold state disagree on class count")
    tau = state.tau.copy()
    for c in range(state.num_classes):
        if acc.counts[c] > 0:
            fresh = acc.sums[c] / acc.counts[c]
            tau[c] = state.mu * tau[c] + (1.0 - state.mu) * fresh
    acc.reset()
    return ThresholdState(tau=tau, epoch=state.epoch + 1, mu=state.mu)


def accept_pseudo_label(
    p_avg: ProbabilityVector, state: ThresholdState, sample_id: str = ""
) -> PseudoLabel:
    """Gate a pseudo-label: accept iff confidence strictly exceeds the
    predicted class's threshold."""
    if p_avg.num_classes != state.num_classes:
        raise DtaError("distribution and thresholds disagree on class count")
    c = argmax_class(p_avg)
    conf = float(p_avg.probs[c])
    return PseudoLabel(
        sample_id=sample_id,
        class_index=c,
        confidence=conf,
        accepted=conf > float(state.tau[c]),
    )


def make_teacher(student: nn.Module) -> nn.Module:
    """Gradient-free copy of the student, updated only via ema_update."""
    teacher = copy.deepcopy(student)
    for p in teacher.parameters():
        p.requires_grad_(False)
    teacher.eval()
    return teacher


@torch.no_grad()
def ema_update(teacher: nn.Module, student: nn.Module, decay: float) -> nn.Module:
    """teacher <- decay * teacher + (1 - decay) * student, elementwise."""
    if not 0.0 <= decay <= 1.0:
        raise DtaError(f"decay must be in [0, 1], got {decay}")
    t_state = teacher.state_dict()
    s_state = student.state_dict()
    if list(t_state) != list(s_state):
        raise DtaError("teacher and student have different parameter sets")
    for name, t in t_state.items():
        s = s_state[name]
        if t.shape != s.shape:
            raise DtaError(f"shape mismatch at {name}: {tuple(t.shape)} vs {tuple(s.shape)}")
        if t.is_floating_point():
            t.mul_(decay).add_(s, alpha=1.0 - decay)
        else:
            t.copy_(s)
    return teacher
