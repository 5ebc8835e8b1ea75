"""Selective negative learning.

Unlabeled samples rejected by the threshold gate still carry usable
signal: classes whose predicted probability is at most delta are almost
certainly wrong, so they become complementary ("not this") labels. The
extraction iterates over a single fixed distribution, masking classes
already chosen, and always leaves at least one class unselected. A
persistent per-sample library accumulates these negatives across epochs,
and the negative-learning loss pushes the probability of every stored
class toward zero.
"""

from __future__ import annotations

from typing import Iterable, Mapping

import numpy as np
import torch

from .datamodel import ProbabilityVector


class SnlError(ValueError):
    """Raised on invalid complementary-label inputs."""


class ComplementaryLabelStore:
    """Map sample_id -> set of negated classes, capped at C - 1 entries.

    The cap guarantees at least one class always stays possible for every
    sample, no matter how the library grows.
    """

    def __init__(self, num_classes: int):
        if num_classes < 2:
            raise SnlError(f"num_classes must be >= 2, got {num_classes}")
        self.num_classes = num_classes
        self._sets: dict[str, set[int]] = {}

    def get(self, sample_id: str) -> frozenset[int]:
        return frozenset(self._sets.get(sample_id, ()))

    def __len__(self) -> int:
        return len(self._sets)

    def total_negatives(self) -> int:
        return sum(len(s) for s in self._sets.values())

    def as_dict(self) -> dict[str, list[int]]:
        """Deterministic (sorted) snapshot for checkpointing/serialization."""
        return {sid: sorted(s) for sid, s in sorted(self._sets.items())}

    @classmethod
    def from_dict(cls, num_classes: int, data: Mapping[str, Iterable[int]]) -> "ComplementaryLabelStore":
        store = cls(num_classes)
        for sid, negs in data.items():
            update_store(store, sid, list(negs))
        return store


def extract_complementary(
    p_avg: ProbabilityVector,
    already_negated: Iterable[int],
    delta: float,
) -> list[int]:
    """New complementary labels for one distribution, in selection order.

    Repeatedly picks the smallest remaining probability while it is at
    most delta, skipping classes already negated and stopping once only
    one candidate class would remain. Ties at the minimum go to the
    smallest class index.
    """
    if not 0.0 < delta < 1.0:
        raise SnlError(f"delta must be in (0, 1), got {delta}")
    p = p_avg.probs
    c = p.shape[0]
    blocked = set(int(i) for i in already_negated)
    if any(i < 0 or i >= c for i in blocked):
        raise SnlError(f"already_negated contains indices outside [0, {c})")
    selected: list[int] = []
    while True:
        remaining = [i for i in range(c) if i not in blocked and i not in selected]
        if len(remaining) <= 1:
            break
        probs_remaining = p[remaining]
        k = int(np.argmin(probs_remaining))  # argmin ties -> smallest index
        if probs_remaining[k] > delta:
            break
        selected.append(remaining[k])
    return selected


def update_store(
    store: ComplementaryLabelStore, sample_id: str, new_negatives: Iterable[int]
) -> ComplementaryLabelStore:
    """Union new negatives into the sample's set, ignoring any excess
    beyond the C - 1 cap (in the order given)."""
    current = store._sets.setdefault(sample_id, set())
    cap = store.num_classes - 1
    for idx in new_negatives:
        idx = int(idx)
        if not 0 <= idx < store.num_classes:
            raise SnlError(f"class index {idx} outside [0, {store.num_classes})")
        if len(current) >= cap:
            break
        current.add(idx)
    return store


def negative_learning_loss(
    p_student: torch.Tensor | ProbabilityVector,
    negated: Iterable[int],
    log_form: bool = False,
) -> torch.Tensor:
    """Loss over one distribution's complementary labels.

    Linear form (the default): -sum_c (1 - p[c]); minimizing drives each
    negated class's probability toward zero. The log form
    -sum_c log(1 - p[c]) is available behind ``log_form``.
    Pass a tensor to keep gradients; a ProbabilityVector is converted
    (no gradient).
    """
    if isinstance(p_student, ProbabilityVector):
        p = torch.from_numpy(np.array(p_student.probs))
    else:
        p = p_student
    if p.dim() != 1:
        raise SnlError(f"expected a single distribution, got shape {tuple(p.shape)}")
    idx = sorted(int(i) for i in negated)
    if any(i < 0 or i >= p.shape[0] for i in idx):
        raise SnlError(f"negated class outside [0, {p.shape[0]})")
    if len(idx) >= p.shape[0]:
        raise SnlError("negated set must leave at least one class possible")
    if not idx:
        return torch.zeros((), dtype=p.dtype, device=p.device)
    picked = p[idx]
    if log_form:
        return -torch.log(torch.clamp(1.0 - picked, min=1e-12)).sum()
    return -(1.0 - picked).sum()
