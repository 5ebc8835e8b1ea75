"""Trainer-free replay of threshold and complementary-label decisions.

Given a probability trace (line-delimited records of epoch, sample_id,
and a C-dimensional distribution) plus the manifest that resolves each
sample's split and label, the audit re-runs the exact gate logic the
trainer uses: labeled rows accumulate teacher confidence statistics,
unlabeled rows pass through the pseudo-label gate and, when rejected,
complementary-label extraction. Epoch boundaries finalize thresholds.

The replay calls the very same dta/snl functions the trainer calls, in
trace order, so feeding it a trainer's own logged trace reproduces the
trainer's logged threshold trajectory and acceptance counts bit for bit.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Iterator, Optional

import numpy as np

from .config import DtaConfig, SnlConfig
from .datamodel import DatasetManifest, ProbabilityVector, sample_id_from_path
from .dta import (
    ClassConfidenceAccumulator,
    ThresholdState,
    accept_pseudo_label,
    collect_class_confidences,
    finalize_thresholds,
)
from .snl import ComplementaryLabelStore, extract_complementary, update_store


class AuditError(ValueError):
    """Raised on malformed or out-of-order traces."""


def read_trace(path: str | Path) -> Iterator[dict]:
    path = Path(path)
    if not path.is_file():
        raise AuditError(
            f"trace not found: {path} (train with train.log_prob_trace=true to produce one)"
        )
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise AuditError(f"trace line {line_no}: invalid JSON: {exc}") from exc
            for key in ("epoch", "sample_id", "probs"):
                if key not in obj:
                    raise AuditError(f"trace line {line_no}: missing field {key!r}")
            yield obj


def run_audit(
    trace: str | Path | Iterable[dict],
    manifest: DatasetManifest,
    dta_cfg: DtaConfig,
    snl_cfg: SnlConfig,
    out_path: Optional[str | Path] = None,
) -> list[dict]:
    """Replay a trace; returns one record per epoch and optionally writes
    them as JSON lines."""
    num_classes = manifest.label_space.num_classes
    sample_info: dict[str, tuple[str, Optional[int]]] = {}
    for rec in manifest.records:
        sample_info[sample_id_from_path(rec.path)] = (rec.split, rec.label)

    thresholds = ThresholdState.initial(num_classes, tau_init=dta_cfg.tau_init, mu=dta_cfg.mu)
    accumulator = ClassConfidenceAccumulator(num_classes)
    store = ComplementaryLabelStore(num_classes)

    records = read_trace(trace) if isinstance(trace, (str, Path)) else iter(trace)
    reports: list[dict] = []
    current_epoch: Optional[int] = None
    accepted_per_class = [0] * num_classes
    seen_per_class = [0] * num_classes

    def close_epoch() -> None:
        nonlocal thresholds, accepted_per_class, seen_per_class
        thresholds = finalize_thresholds(thresholds, accumulator)
        reports.append(
            {
                "epoch": current_epoch,
                "thresholds": thresholds.tau.tolist(),
                "accepted_per_class": list(accepted_per_class),
                "seen_per_class": list(seen_per_class),
                "accepted_total": sum(accepted_per_class),
                "unlabeled_seen": sum(seen_per_class),
                "library_size": len(store),
                "library_negatives": store.total_negatives(),
            }
        )
        accepted_per_class = [0] * num_classes
        seen_per_class = [0] * num_classes

    for obj in records:
        epoch = int(obj["epoch"])
        sid = str(obj["sample_id"])
        if current_epoch is None:
            current_epoch = epoch
        elif epoch < current_epoch:
            raise AuditError(f"out-of-order epoch {epoch} after {current_epoch}")
        elif epoch > current_epoch:
            close_epoch()
            current_epoch = epoch

        if sid not in sample_info:
            raise AuditError(f"trace sample {sid!r} not present in manifest")
        split, label = sample_info[sid]
        pv = ProbabilityVector(np.asarray(obj["probs"], dtype=np.float64))
        if pv.num_classes != num_classes:
            raise AuditError(
                f"trace sample {sid!r} has {pv.num_classes} probabilities, expected {num_classes}"
            )

        if split == "labeled":
            collect_class_confidences(
                accumulator, pv.probs.reshape(1, -1), np.array([label])
            )
        elif split == "unlabeled":
            pseudo = accept_pseudo_label(pv, thresholds, sample_id=sid)
            seen_per_class[pseudo.class_index] += 1
            if pseudo.accepted:
                accepted_per_class[pseudo.class_index] += 1
            elif snl_cfg.enabled:
                new_negs = extract_complementary(pv, store.get(sid), snl_cfg.delta)
                if new_negs:
                    update_store(store, sid, new_negs)
        else:
            raise AuditError(f"trace sample {sid!r} belongs to the eval split")

    if current_epoch is not None:
        close_epoch()

    if out_path is not None:
        with Path(out_path).open("w", encoding="utf-8") as fh:
            for rep in reports:
                fh.write(json.dumps(rep) + "\n")
    return reports
