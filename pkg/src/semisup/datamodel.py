"""Shared domain types and elementary probability operations.

Everything here is immutable after construction and free of hidden state,
so instances can be shared freely across workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

SIMPLEX_TOL = 1e-6

DEFAULT_CLASS_NAMES = (
    "disk",
    "ring",
    "square",
    "cross",
    "stripes",
    "diagonal",
    "triangle",
)

VALID_SPLITS = ("labeled", "unlabeled", "eval")


class DataModelError(ValueError):
    """Raised when a domain-type invariant or precondition is violated."""


@dataclass(frozen=True)
class LabelSpace:
    """The set of target classes; defaults to the seven synthetic motifs."""

    num_classes: int = 7
    class_names: tuple[str, ...] = DEFAULT_CLASS_NAMES

    def __post_init__(self) -> None:
        if self.num_classes < 2:
            raise DataModelError(f"num_classes must be >= 2, got {self.num_classes}")
        names = tuple(self.class_names)
        if len(names) != self.num_classes:
            raise DataModelError(
                f"expected {self.num_classes} class names, got {len(names)}"
            )
        if len(set(names)) != len(names):
            raise DataModelError("class names must be unique")
        object.__setattr__(self, "class_names", names)


@dataclass(frozen=True)
class ProbabilityVector:
    """A point on the C-dimensional probability simplex."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1:
            raise DataModelError(f"probs must be 1-D, got shape {p.shape}")
        if not np.all(np.isfinite(p)):
            raise DataModelError("probs contain non-finite entries")
        if np.any(p < -SIMPLEX_TOL) or np.any(p > 1.0 + SIMPLEX_TOL):
            raise DataModelError("probs must lie in [0, 1]")
        total = float(p.sum())
        if abs(total - 1.0) > SIMPLEX_TOL:
            raise DataModelError(f"probs must sum to 1 within {SIMPLEX_TOL}, got {total}")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def num_classes(self) -> int:
        return self.probs.shape[0]


@dataclass(frozen=True)
class ImageSample:
    """An image with an optional class label.

    pixels are H x W x channels floats in [0, 1].
    """

    sample_id: str
    pixels: np.ndarray
    label: Optional[int] = None

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim != 3:
            raise DataModelError(f"pixels must be HxWxC, got shape {px.shape}")
        if not np.all(np.isfinite(px)):
            raise DataModelError(f"sample {self.sample_id!r}: non-finite pixels")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class PseudoLabel:
    """A hard class assignment for an unlabeled sample.

    ``accepted`` records whether the confidence strictly exceeded the
    predicted class's threshold at assignment time.
    """

    sample_id: str
    class_index: int
    confidence: float
    accepted: bool


@dataclass(frozen=True)
class ManifestRecord:
    path: str
    label: Optional[int]
    split: str


@dataclass
class DatasetManifest:
    """Declarative listing of samples with labeled/unlabeled/eval splits.

    Serialized as UTF-8 JSON lines with fields ``path``, ``label``
    (integer or null), and ``split``; one record per line. Paths are
    resolved relative to the manifest file's directory.
    """

    records: list[ManifestRecord]
    label_space: LabelSpace
    root: Path = field(default_factory=Path)

    def __post_init__(self) -> None:
        c = self.label_space.num_classes
        for rec in self.records:
            if rec.split not in VALID_SPLITS:
                raise DataModelError(f"unknown split {rec.split!r} for {rec.path!r}")
            if rec.split in ("labeled", "eval"):
                if rec.label is None:
                    raise DataModelError(f"{rec.split} record {rec.path!r} has no label")
                if not 0 <= rec.label < c:
                    raise DataModelError(
                        f"label {rec.label} out of range [0, {c}) for {rec.path!r}"
                    )
            elif rec.label is not None:
                raise DataModelError(f"unlabeled record {rec.path!r} carries a label")

    def split_records(self, split: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.split == split]

    def resolve(self, rec: ManifestRecord) -> Path:
        return self.root / rec.path

    def save(self, path: str | Path) -> None:
        path = Path(path)
        with path.open("w", encoding="utf-8") as fh:
            header = {
                "num_classes": self.label_space.num_classes,
                "class_names": list(self.label_space.class_names),
            }
            fh.write(json.dumps({"label_space": header}) + "\n")
            for rec in self.records:
                fh.write(
                    json.dumps({"path": rec.path, "label": rec.label, "split": rec.split})
                    + "\n"
                )

    @classmethod
    def load(cls, path: str | Path, check_paths: bool = True) -> "DatasetManifest":
        path = Path(path)
        if not path.is_file():
            raise DataModelError(f"manifest not found: {path}")
        root = path.parent
        records: list[ManifestRecord] = []
        label_space: Optional[LabelSpace] = None
        with path.open("r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                if "label_space" in obj:
                    hdr = obj["label_space"]
                    label_space = LabelSpace(
                        num_classes=int(hdr["num_classes"]),
                        class_names=tuple(hdr["class_names"]),
                    )
                    continue
                records.append(
                    ManifestRecord(
                        path=str(obj["path"]),
                        label=None if obj.get("label") is None else int(obj["label"]),
                        split=str(obj["split"]),
                    )
                )
        if label_space is None:
            raise DataModelError(f"{path}: missing label_space header line")
        manifest = cls(records=records, label_space=label_space, root=root)
        if check_paths:
            missing = [r.path for r in records if not (root / r.path).is_file()]
            if missing:
                raise DataModelError(
                    f"{path}: {len(missing)} unresolvable paths (first: {missing[0]!r})"
                )
        return manifest


def sample_id_from_path(path: str) -> str:
    """Sample ids are the path stem; generators must keep stems unique."""
    return Path(path).stem


def make_probability_vector(logits: Sequence[float] | np.ndarray) -> ProbabilityVector:
    """Numerically stable softmax of a vector of logits."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1:
        raise DataModelError(f"logits must be 1-D, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise DataModelError("logits contain non-finite entries")
    shifted = z - z.max()
    e = np.exp(shifted)
    return ProbabilityVector(e / e.sum())


def argmax_class(p: ProbabilityVector) -> int:
    """Index of the largest probability; ties break to the smallest index."""
    return int(np.argmax(p.probs))


def average_distributions(p1: ProbabilityVector, p2: ProbabilityVector) -> ProbabilityVector:
    """Elementwise mean of two distributions over the same classes."""
    if p1.num_classes != p2.num_classes:
        raise DataModelError(
            f"cannot average distributions of sizes {p1.num_classes} and {p2.num_classes}"
        )
    return ProbabilityVector((p1.probs + p2.probs) / 2.0)
