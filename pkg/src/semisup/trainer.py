"""Training orchestration.

One logical loop owns all mutable state: the student network, its EMA
teacher, per-class thresholds, the complementary-label store, optimizer
state, and three named random streams (sampler / augment / drop) derived
from the run seed. Checkpoints capture all of it, so a resumed run
replays the uninterrupted run's remaining metrics exactly.

Per step: balanced labeled batch -> weak views -> supervised loss;
unlabeled batch -> two weak + one strong view, averaged weak
distribution gated per-sample against the per-class thresholds; accepted
samples feed the consistency loss on their strong views, rejected ones
feed complementary-label extraction and the negative-learning loss. The
combined loss updates the student, the teacher follows by EMA, and the
teacher's labeled-batch confidences accumulate into the next epoch's
thresholds.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from PIL import Image

from .augment import AugmentPolicy, ViewTriple, make_views, to_model_array, weak_augment
from .attention import sample_drop_decisions
from .config import RunConfig
from .datamodel import (
    DatasetManifest,
    ImageSample,
    ManifestRecord,
    ProbabilityVector,
    PseudoLabel,
    sample_id_from_path,
)
from .dta import (
    ClassConfidenceAccumulator,
    ThresholdState,
    accept_pseudo_label,
    collect_class_confidences,
    ema_update,
    finalize_thresholds,
    make_teacher,
)
from .losses import (
    LossError,
    LossReport,
    LossWeights,
    consistency_loss,
    supervised_loss,
    total_loss,
)
from .model import build_model
from .snl import ComplementaryLabelStore, extract_complementary, negative_learning_loss, update_store

LOCK_NAME = ".lock"


class TrainerError(RuntimeError):
    """Raised on startup conflicts, aborted runs, or checkpoint mismatches."""


@dataclass
class BatchPlan:
    """One step's data: balanced labeled pairs plus unlabeled view triples."""

    labeled: list[tuple[ImageSample, int]]
    unlabeled: list[ViewTriple]


def group_labeled_records(manifest: DatasetManifest) -> list[list[ManifestRecord]]:
    """Labeled records bucketed by class; rejects classes with none."""
    c = manifest.label_space.num_classes
    buckets: list[list[ManifestRecord]] = [[] for _ in range(c)]
    for rec in manifest.split_records("labeled"):
        buckets[rec.label].append(rec)
    empty = [i for i, b in enumerate(buckets) if not b]
    if empty:
        names = [manifest.label_space.class_names[i] for i in empty]
        raise TrainerError(f"classes with zero labeled samples: {names}")
    return buckets


def balanced_sample(
    records_by_class: Sequence[Sequence[ManifestRecord]],
    count: int,
    rng: np.random.Generator,
) -> list[ManifestRecord]:
    """Class drawn uniformly, then a sample uniformly within the class,
    with replacement; every class has equal expected frequency."""
    n_classes = len(records_by_class)
    out: list[ManifestRecord] = []
    for _ in range(count):
        c = int(rng.integers(0, n_classes))
        bucket = records_by_class[c]
        out.append(bucket[int(rng.integers(0, len(bucket)))])
    return out


def accuracy_score(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    return float(np.mean(np.asarray(y_true) == np.asarray(y_pred)))


def macro_f1(y_true: np.ndarray, y_pred: np.ndarray, num_classes: int) -> float:
    """Unweighted mean of per-class F1; classes absent from the ground
    truth are excluded."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    scores = []
    for c in range(num_classes):
        truth = y_true == c
        if not truth.any():
            continue
        pred = y_pred == c
        tp = float(np.sum(truth & pred))
        fp = float(np.sum(~truth & pred))
        fn = float(np.sum(truth & ~pred))
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom > 0 else 0.0)
    return float(np.mean(scores)) if scores else 0.0


class ImageCache:
    """Decoded-PNG cache keyed by resolved path."""

    def __init__(self) -> None:
        self._cache: dict[str, np.ndarray] = {}

    def load(self, path: Path) -> np.ndarray:
        key = str(path)
        if key not in self._cache:
            with Image.open(path) as img:
                arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
            arr.setflags(write=False)
            self._cache[key] = arr
        return self._cache[key]


def record_to_sample(manifest: DatasetManifest, rec: ManifestRecord, cache: ImageCache) -> ImageSample:
    pixels = cache.load(manifest.resolve(rec))
    return ImageSample(sample_id=sample_id_from_path(rec.path), pixels=pixels, label=rec.label)


def eval_preprocess(sample: ImageSample, cfg: RunConfig) -> np.ndarray:
    """Deterministic center-crop preprocessing for evaluation."""
    rng = np.random.default_rng(0)  # unused: center crop draws nothing
    view = weak_augment(
        sample,
        rng,
        working_size=cfg.augment.working_size,
        crop_size=cfg.augment.crop_size,
        center=True,
    )
    return to_model_array(view.pixels, normalize=cfg.augment.normalize)


def evaluate(
    model: torch.nn.Module,
    manifest: DatasetManifest,
    cfg: RunConfig,
    cache: Optional[ImageCache] = None,
    batch_size: int = 256,
) -> dict[str, float]:
    """Accuracy and macro-F1 of argmax predictions on the eval split."""
    records = manifest.split_records("eval")
    if not records:
        raise TrainerError("eval split is empty")
    cache = cache or ImageCache()
    xs = [eval_preprocess(record_to_sample(manifest, r, cache), cfg) for r in records]
    labels = np.array([r.label for r in records])
    preds = predict_classes(model, np.stack(xs), batch_size=batch_size)
    return {
        "accuracy": accuracy_score(labels, preds),
        "macro_f1": macro_f1(labels, preds, manifest.label_space.num_classes),
    }


@torch.no_grad()
def predict_classes(model: torch.nn.Module, inputs: np.ndarray, batch_size: int = 256) -> np.ndarray:
    was_training = model.training
    model.eval()
    preds = []
    for start in range(0, inputs.shape[0], batch_size):
        batch = torch.from_numpy(inputs[start : start + batch_size])
        preds.append(model(batch).argmax(dim=1).numpy())
    if was_training:
        model.train()
    return np.concatenate(preds)


class Trainer:
    def __init__(
        self,
        cfg: RunConfig,
        manifest: DatasetManifest,
        run_dir: str | Path,
        resume_from: Optional[str | Path] = None,
        cache: Optional[ImageCache] = None,
    ):
        self.cfg = cfg
        self.manifest = manifest
        self.run_dir = Path(run_dir)
        self.num_classes = manifest.label_space.num_classes

        self.labeled_by_class = group_labeled_records(manifest)
        self.unlabeled_records = manifest.split_records("unlabeled")
        self.eval_records = manifest.split_records("eval")

        weights = LossWeights(cfg.loss.lambda1, cfg.loss.lambda2)
        self.weights = weights
        self.semi_active = (weights.lambda1 > 0 or weights.lambda2 > 0) and bool(
            self.unlabeled_records
        )
        if (weights.lambda1 > 0 or weights.lambda2 > 0) and not self.unlabeled_records:
            raise TrainerError(
                "unlabeled consistency/negative weights are positive "
                f"(lambda1={weights.lambda1}, lambda2={weights.lambda2}) "
                "but the manifest has no unlabeled split"
            )

        b = cfg.train.batch_size
        self.labeled_bs = max(1, round(b * cfg.train.labeled_fraction_of_batch))
        self.unlabeled_bs = max(1, b - self.labeled_bs) if self.semi_active else 0

        # named random streams derived from the run seed
        ss = np.random.SeedSequence(cfg.train.seed)
        model_seed_seq, sampler_seq, augment_seq, drop_seq = ss.spawn(4)
        self.model_seed = int(model_seed_seq.generate_state(1)[0])
        self.sampler_rng = np.random.default_rng(sampler_seq)
        self.augment_rng = np.random.default_rng(augment_seq)
        self.drop_rng = np.random.default_rng(drop_seq)

        self.model = build_model(cfg.model, cfg.attention, self.num_classes, self.model_seed)
        self.teacher = make_teacher(self.model)
        self.optimizer = torch.optim.Adam(self.model.parameters(), lr=cfg.train.learning_rate)
        self.thresholds = ThresholdState.initial(
            self.num_classes, tau_init=cfg.dta.tau_init, mu=cfg.dta.mu
        )
        self.accumulator = ClassConfidenceAccumulator(self.num_classes)
        self.store = ComplementaryLabelStore(self.num_classes)
        self.strong_policy = AugmentPolicy.from_config(cfg.strong)
        self.cache = cache or ImageCache()
        self.epoch = 0
        self.best_accuracy = -1.0
        self.best_epoch = -1

        self._eval_inputs: Optional[np.ndarray] = None
        self._eval_labels: Optional[np.ndarray] = None
        self._metrics_fh = None
        self._trace_fh = None
        self._epoch_accepted_per_class = [0] * self.num_classes
        self._epoch_seen_per_class = [0] * self.num_classes

        if resume_from is not None:
            self._load_checkpoint(Path(resume_from))

    # ------------------------------------------------------------------
    # run lifecycle

    def run(self) -> dict[str, float]:
        """Train to the configured epoch count; returns final eval metrics."""
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self._acquire_lock()
        try:
            (self.run_dir / "config.snapshot").write_text(
                self.cfg.snapshot_json(), encoding="utf-8"
            )
            (self.run_dir / "checkpoints").mkdir(exist_ok=True)
            self._metrics_fh = (self.run_dir / "metrics.jsonl").open("w", encoding="utf-8")
            if self.cfg.train.log_prob_trace:
                self._trace_fh = (self.run_dir / "probtrace.jsonl").open("w", encoding="utf-8")
            final: dict[str, float] = {}
            while self.epoch < self.cfg.train.epochs:
                metrics = self.train_epoch()
                if metrics.get("eval_accuracy") is not None:
                    final = {
                        "accuracy": metrics["eval_accuracy"],
                        "macro_f1": metrics["macro_f1"],
                    }
            return final
        finally:
            if self._metrics_fh:
                self._metrics_fh.close()
                self._metrics_fh = None
            if self._trace_fh:
                self._trace_fh.close()
                self._trace_fh = None
            self._release_lock()

    def steps_per_epoch(self) -> int:
        if self.semi_active:
            return math.ceil(len(self.unlabeled_records) / self.unlabeled_bs)
        total_labeled = sum(len(b) for b in self.labeled_by_class)
        return math.ceil(total_labeled / self.labeled_bs)

    # ------------------------------------------------------------------
    # batch assembly

    def _load_labeled_batch(self) -> list[tuple[ImageSample, int]]:
        records = balanced_sample(self.labeled_by_class, self.labeled_bs, self.sampler_rng)
        out = []
        for rec in records:
            sample = record_to_sample(self.manifest, rec, self.cache)
            view = weak_augment(
                sample,
                self.augment_rng,
                working_size=self.cfg.augment.working_size,
                crop_size=self.cfg.augment.crop_size,
                flip_prob=self.cfg.augment.flip_prob,
            )
            out.append((view, rec.label))
        return out

    def _make_plan(self, unlabeled_slice: Sequence[ManifestRecord]) -> BatchPlan:
        labeled = self._load_labeled_batch()
        triples = []
        for rec in unlabeled_slice:
            sample = record_to_sample(self.manifest, rec, self.cache)
            triples.append(
                make_views(sample, self.augment_rng, self.cfg.augment, self.strong_policy)
            )
        return BatchPlan(labeled=labeled, unlabeled=triples)

    def _stack(self, samples: Sequence[ImageSample]) -> torch.Tensor:
        arrays = [to_model_array(s.pixels, normalize=self.cfg.augment.normalize) for s in samples]
        return torch.from_numpy(np.stack(arrays))

    def _student_forward(self, batch: torch.Tensor) -> torch.Tensor:
        """Training-mode forward; consumes the drop stream when the
        attention bank is active."""
        decisions = None
        if self.model.bank is not None:
            decisions = sample_drop_decisions(
                batch.shape[0],
                self.cfg.attention.num_branches,
                self.cfg.attention.drop_p,
                self.drop_rng,
            )
        logits = self.model(batch, drop_decisions=decisions)
        return torch.softmax(logits, dim=1)

    # ------------------------------------------------------------------
    # the training step

    def train_step(self, plan: BatchPlan) -> LossReport:
        self.model.train()
        cfg = self.cfg

        labeled_views = [s for s, _ in plan.labeled]
        labels = torch.tensor([y for _, y in plan.labeled], dtype=torch.long)
        labeled_batch = self._stack(labeled_views)
        probs_l = self._student_forward(labeled_batch)
        l_labeled = supervised_loss(labels, probs_l)

        pseudo_labels: list[PseudoLabel] = []
        l_consistency = torch.zeros(())
        l_negative = torch.zeros(())
        if plan.unlabeled:
            w1 = self._stack([t.weak1 for t in plan.unlabeled])
            w2 = self._stack([t.weak2 for t in plan.unlabeled])
            p_avg = (self._student_forward(w1) + self._student_forward(w2)) / 2.0
            p_avg_np = p_avg.detach().numpy().astype(np.float64)
            p_vectors = [ProbabilityVector(row) for row in p_avg_np]

            for i, triple in enumerate(plan.unlabeled):
                pseudo_labels.append(
                    accept_pseudo_label(p_vectors[i], self.thresholds, sample_id=triple.source_id)
                )
                self._trace(triple.source_id, p_avg_np[i])

            accepted_rows = [i for i, pl in enumerate(pseudo_labels) if pl.accepted]
            if accepted_rows:
                strong_batch = self._stack([plan.unlabeled[i].strong for i in accepted_rows])
                probs_s = self._student_forward(strong_batch)
                l_consistency = consistency_loss(
                    [pseudo_labels[i] for i in accepted_rows], probs_s
                )

            if cfg.snl.enabled:
                nl_terms = []
                for i, pl in enumerate(pseudo_labels):
                    if pl.accepted:
                        continue
                    sid = plan.unlabeled[i].source_id
                    already = self.store.get(sid)
                    new_negs = extract_complementary(p_vectors[i], already, cfg.snl.delta)
                    if new_negs:
                        update_store(self.store, sid, new_negs)
                    negated = self.store.get(sid)
                    if negated:
                        nl_terms.append(
                            negative_learning_loss(p_avg[i], negated, log_form=cfg.snl.log_form)
                        )
                if nl_terms:
                    l_negative = torch.stack(nl_terms).mean()

        accepted_count = sum(1 for pl in pseudo_labels if pl.accepted)
        rejected_count = len(pseudo_labels) - accepted_count
        try:
            l_total = total_loss(l_labeled, l_consistency, l_negative, self.weights)
        except LossError as exc:
            report = LossReport(
                l_labeled=float(l_labeled.detach()),
                l_consistency=float(l_consistency.detach()),
                l_negative=float(l_negative.detach()),
                l_total=float("nan"),
                accepted_count=accepted_count,
                rejected_count=rejected_count,
            )
            raise TrainerError(f"non-finite loss, aborting run: {report}") from exc
        report = LossReport(
            l_labeled=float(l_labeled.detach()),
            l_consistency=float(l_consistency.detach()),
            l_negative=float(l_negative.detach()),
            l_total=float(l_total.detach()),
            accepted_count=accepted_count,
            rejected_count=rejected_count,
        )
        if not math.isfinite(report.l_total):
            raise TrainerError(f"non-finite loss, aborting run: {report}")

        self.optimizer.zero_grad()
        l_total.backward()
        self.optimizer.step()
        ema_update(self.teacher, self.model, cfg.dta.ema_decay)

        if cfg.dta.enabled and not cfg.dta.full_pass_stats:
            self._collect_teacher_stats(labeled_batch, labels, labeled_views)

        self._record_acceptance(pseudo_labels)
        return report

    @torch.no_grad()
    def _collect_teacher_stats(
        self,
        labeled_batch: torch.Tensor,
        labels: torch.Tensor,
        labeled_views: Sequence[ImageSample],
    ) -> None:
        probs = torch.softmax(self.teacher(labeled_batch), dim=1).numpy().astype(np.float64)
        collect_class_confidences(self.accumulator, probs, labels.numpy())
        for view, row in zip(labeled_views, probs):
            self._trace(view.sample_id, row)

    def _record_acceptance(self, pseudo_labels: Sequence[PseudoLabel]) -> None:
        for pl in pseudo_labels:
            self._epoch_seen_per_class[pl.class_index] += 1
            if pl.accepted:
                self._epoch_accepted_per_class[pl.class_index] += 1

    def _trace(self, sample_id: str, probs: np.ndarray) -> None:
        if self._trace_fh is not None:
            self._trace_fh.write(
                json.dumps(
                    {"epoch": self.epoch, "sample_id": sample_id, "probs": probs.tolist()}
                )
                + "\n"
            )

    # ------------------------------------------------------------------
    # the epoch

    def train_epoch(self) -> dict:
        cfg = self.cfg
        self._epoch_accepted_per_class = [0] * self.num_classes
        self._epoch_seen_per_class = [0] * self.num_classes

        if self.semi_active:
            order = self.sampler_rng.permutation(len(self.unlabeled_records))
            slices = [
                [self.unlabeled_records[j] for j in order[k : k + self.unlabeled_bs]]
                for k in range(0, len(order), self.unlabeled_bs)
            ]
        else:
            slices = [[] for _ in range(self.steps_per_epoch())]

        for step, unlabeled_slice in enumerate(slices):
            plan = self._make_plan(unlabeled_slice)
            report = self.train_step(plan)
            self._write_metrics(
                {
                    "kind": "step",
                    "epoch": self.epoch,
                    "step": step,
                    "l_labeled": report.l_labeled,
                    "l_consistency": report.l_consistency,
                    "l_negative": report.l_negative,
                    "l_total": report.l_total,
                    "accepted": report.accepted_count,
                    "rejected": report.rejected_count,
                }
            )

        if cfg.dta.enabled and cfg.dta.full_pass_stats:
            self._full_pass_stats()
        self.thresholds = finalize_thresholds(self.thresholds, self.accumulator)
        self.epoch += 1

        metrics: dict = {
            "kind": "epoch",
            "epoch": self.epoch - 1,
            "thresholds": self.thresholds.tau.tolist(),
            "accepted_per_class": list(self._epoch_accepted_per_class),
            "seen_per_class": list(self._epoch_seen_per_class),
            "accepted_total": sum(self._epoch_accepted_per_class),
            "unlabeled_seen": sum(self._epoch_seen_per_class),
            "library_size": len(self.store),
            "library_negatives": self.store.total_negatives(),
            "eval_accuracy": None,
            "macro_f1": None,
        }
        if self.eval_records and (
            self.epoch % cfg.train.eval_every == 0 or self.epoch == cfg.train.epochs
        ):
            eval_metrics = self._evaluate_cached()
            metrics["eval_accuracy"] = eval_metrics["accuracy"]
            metrics["macro_f1"] = eval_metrics["macro_f1"]
            if eval_metrics["accuracy"] > self.best_accuracy:
                self.best_accuracy = eval_metrics["accuracy"]
                self.best_epoch = self.epoch - 1
                self._write_best_marker()
        self._write_metrics(metrics)
        self._save_checkpoint()
        return metrics

    @torch.no_grad()
    def _full_pass_stats(self) -> None:
        """Optional epoch-end teacher pass over the whole labeled split."""
        records = [rec for bucket in self.labeled_by_class for rec in bucket]
        for start in range(0, len(records), 256):
            chunk = records[start : start + 256]
            xs = np.stack(
                [
                    eval_preprocess(record_to_sample(self.manifest, r, self.cache), self.cfg)
                    for r in chunk
                ]
            )
            probs = (
                torch.softmax(self.teacher(torch.from_numpy(xs)), dim=1)
                .numpy()
                .astype(np.float64)
            )
            labels = np.array([r.label for r in chunk])
            collect_class_confidences(self.accumulator, probs, labels)
            for r, p in zip(chunk, probs):
                self._trace(sample_id_from_path(r.path), p)

    def _evaluate_cached(self) -> dict[str, float]:
        if self._eval_inputs is None:
            xs = [
                eval_preprocess(record_to_sample(self.manifest, r, self.cache), self.cfg)
                for r in self.eval_records
            ]
            self._eval_inputs = np.stack(xs)
            self._eval_labels = np.array([r.label for r in self.eval_records])
        preds = predict_classes(self.model, self._eval_inputs)
        return {
            "accuracy": accuracy_score(self._eval_labels, preds),
            "macro_f1": macro_f1(self._eval_labels, preds, self.num_classes),
        }

    # ------------------------------------------------------------------
    # persistence

    def _write_metrics(self, record: dict) -> None:
        if self._metrics_fh is not None:
            self._metrics_fh.write(json.dumps(record) + "\n")
            self._metrics_fh.flush()

    def _write_best_marker(self) -> None:
        (self.run_dir / "best").write_text(
            json.dumps({"epoch": self.best_epoch, "eval_accuracy": self.best_accuracy}),
            encoding="utf-8",
        )

    def _save_checkpoint(self) -> None:
        path = self.run_dir / "checkpoints" / f"epoch-{self.epoch}"
        torch.save(
            {
                "epoch": self.epoch,
                "model": self.model.state_dict(),
                "teacher": self.teacher.state_dict(),
                "optimizer": self.optimizer.state_dict(),
                "thresholds": {
                    "tau": self.thresholds.tau.copy(),
                    "epoch": self.thresholds.epoch,
                    "mu": self.thresholds.mu,
                },
                "store": self.store.as_dict(),
                "rng": {
                    "sampler": self.sampler_rng.bit_generator.state,
                    "augment": self.augment_rng.bit_generator.state,
                    "drop": self.drop_rng.bit_generator.state,
                },
                "best_accuracy": self.best_accuracy,
                "best_epoch": self.best_epoch,
                "num_classes": self.num_classes,
                "config": self.cfg.to_dict(),
            },
            path,
        )

    def _load_checkpoint(self, path: Path) -> None:
        if not path.is_file():
            raise TrainerError(f"checkpoint not found: {path}")
        state = torch.load(path, weights_only=False)
        if state["num_classes"] != self.num_classes:
            raise TrainerError(
                f"checkpoint has {state['num_classes']} classes, manifest has {self.num_classes}"
            )
        self.model.load_state_dict(state["model"])
        self.teacher.load_state_dict(state["teacher"])
        self.optimizer.load_state_dict(state["optimizer"])
        thr = state["thresholds"]
        self.thresholds = ThresholdState(tau=thr["tau"], epoch=thr["epoch"], mu=thr["mu"])
        self.store = ComplementaryLabelStore.from_dict(self.num_classes, state["store"])
        self.sampler_rng.bit_generator.state = state["rng"]["sampler"]
        self.augment_rng.bit_generator.state = state["rng"]["augment"]
        self.drop_rng.bit_generator.state = state["rng"]["drop"]
        self.epoch = state["epoch"]
        self.best_accuracy = state["best_accuracy"]
        self.best_epoch = state["best_epoch"]

    def _acquire_lock(self) -> None:
        lock = self.run_dir / LOCK_NAME
        try:
            fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            os.close(fd)
        except FileExistsError:
            raise TrainerError(
                f"run directory {self.run_dir} is locked by another run "
                f"(remove {lock} if stale)"
            ) from None

    def _release_lock(self) -> None:
        lock = self.run_dir / LOCK_NAME
        if lock.exists():
            lock.unlink()
