"""Synthetic desk-scale dataset generator.

Seven classes of parameterized geometric/texture motifs (disk, ring,
square, cross, stripes, diagonal band, triangle) rendered with random
position/size jitter, random contrast, per-channel tint, and additive
Gaussian noise. The randomness makes the task nontrivial for a linear
probe on raw pixels while remaining easily separable for a small
convolutional net.

Generation is deterministic per seed (byte-identical images and
manifest) and split counts match the requested SynthSpec exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .datamodel import DatasetManifest, LabelSpace, ManifestRecord, DEFAULT_CLASS_NAMES


class SynthError(ValueError):
    """Raised on invalid generator specifications."""


# Per-class labeled counts used in the low-label presets: one designated
# hard class gets fewer labels than the rest.
LABELED_PRESETS = {
    100: (10, 15),
    400: (40, 60),
    2000: (200, 300),
    4000: (250, 625),
}
HARD_CLASS = 3  # the "cross" class plays the scarce-label role


@dataclass
class SynthSpec:
    num_classes: int = 7
    image_size: int = 64
    labeled_per_class: list[int] = field(default_factory=lambda: [15, 15, 15, 10, 15, 15, 15])
    unlabeled_per_class: list[int] = field(default_factory=lambda: [128] * 7)
    eval_per_class: list[int] = field(default_factory=lambda: [430] * 7)
    noise_sigma: float = 0.10
    jitter: float = 0.14
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_classes != 7:
            raise SynthError("the motif table is seven-way; num_classes must be 7")
        for name, counts in (
            ("labeled_per_class", self.labeled_per_class),
            ("unlabeled_per_class", self.unlabeled_per_class),
            ("eval_per_class", self.eval_per_class),
        ):
            if len(counts) != self.num_classes:
                raise SynthError(f"{name} must list {self.num_classes} counts")
            if any(c < 0 for c in counts):
                raise SynthError(f"{name} contains a negative count")
        if all(c == 0 for c in self.labeled_per_class):
            raise SynthError("at least one labeled sample is required")
        if self.image_size < 16:
            raise SynthError(f"image_size must be >= 16, got {self.image_size}")


def labeled_preset(total_labels: int) -> list[int]:
    """Per-class labeled counts for the shipped low-label presets."""
    if total_labels not in LABELED_PRESETS:
        raise SynthError(
            f"no labeled preset for {total_labels}; choose from {sorted(LABELED_PRESETS)}"
        )
    hard, other = LABELED_PRESETS[total_labels]
    return [hard if c == HARD_CLASS else other for c in range(7)]


def _grid(size: int) -> tuple[np.ndarray, np.ndarray]:
    coords = (np.arange(size) + 0.5) / size
    return np.meshgrid(coords, coords, indexing="ij")  # yy, xx


def _motif_mask(class_idx: int, size: int, jitter: float, rng: np.random.Generator) -> np.ndarray:
    yy, xx = _grid(size)
    cy = 0.5 + rng.uniform(-jitter, jitter)
    cx = 0.5 + rng.uniform(-jitter, jitter)
    if class_idx == 0:  # disk
        r = rng.uniform(0.16, 0.30)
        return ((xx - cx) ** 2 + (yy - cy) ** 2) <= r**2
    if class_idx == 1:  # ring
        r_out = rng.uniform(0.20, 0.32)
        r_in = r_out * rng.uniform(0.50, 0.68)
        d2 = (xx - cx) ** 2 + (yy - cy) ** 2
        return (d2 <= r_out**2) & (d2 >= r_in**2)
    if class_idx == 2:  # square
        a = rng.uniform(0.15, 0.27)
        return (np.abs(xx - cx) <= a) & (np.abs(yy - cy) <= a)
    if class_idx == 3:  # cross
        arm = rng.uniform(0.18, 0.30)
        w = rng.uniform(0.05, 0.09)
        horiz = (np.abs(yy - cy) <= w) & (np.abs(xx - cx) <= arm)
        vert = (np.abs(xx - cx) <= w) & (np.abs(yy - cy) <= arm)
        return horiz | vert
    if class_idx == 4:  # horizontal stripes texture
        freq = rng.uniform(2.5, 4.5)
        phase = rng.uniform(0.0, 1.0)
        return np.sin(2.0 * np.pi * (freq * yy + phase)) > 0.0
    if class_idx == 5:  # diagonal band
        w = rng.uniform(0.07, 0.13)
        offset = rng.uniform(-0.22, 0.22)
        direction = xx - yy if rng.random() < 0.5 else xx + yy - 1.0
        return np.abs(direction + offset) <= w
    if class_idx == 6:  # upward triangle
        a = rng.uniform(0.17, 0.28)
        rel = (yy - (cy - a)) / (2.0 * a)
        inside_rows = (rel >= 0.0) & (rel <= 1.0)
        return inside_rows & (np.abs(xx - cx) <= rel * a)
    raise SynthError(f"no motif for class {class_idx}")


def render_sample(class_idx: int, spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """One HxWx3 float image in [0, 1] of the given class."""
    size = spec.image_size
    mask = _motif_mask(class_idx, size, spec.jitter, rng).astype(np.float32)
    bg = rng.uniform(0.15, 0.45)
    fg = min(bg + rng.uniform(0.30, 0.50), 0.95)
    base = bg + mask * (fg - bg)
    tint = rng.uniform(0.80, 1.0, size=3).astype(np.float32)
    img = base[:, :, None] * tint[None, None, :]
    img = img + rng.normal(0.0, spec.noise_sigma, size=img.shape).astype(np.float32)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def generate_synthetic_dataset(spec: SynthSpec, out_dir: str | Path) -> DatasetManifest:
    """Write images plus a labeled/unlabeled/eval manifest under out_dir."""
    out = Path(out_dir)
    images_dir = out / "images"
    try:
        images_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise SynthError(f"cannot create output directory {images_dir}: {exc}") from exc

    rng = np.random.default_rng(spec.seed)
    label_space = LabelSpace(num_classes=spec.num_classes, class_names=DEFAULT_CLASS_NAMES)
    records: list[ManifestRecord] = []

    plan = (
        ("labeled", spec.labeled_per_class, True),
        ("unlabeled", spec.unlabeled_per_class, False),
        ("eval", spec.eval_per_class, True),
    )
    for split, counts, keep_label in plan:
        for class_idx in range(spec.num_classes):
            for i in range(counts[class_idx]):
                pixels = render_sample(class_idx, spec, rng)
                name = f"c{class_idx}_{split}_{i:05d}.png"
                arr = np.round(pixels * 255.0).astype(np.uint8)
                Image.fromarray(arr).save(images_dir / name)
                records.append(
                    ManifestRecord(
                        path=f"images/{name}",
                        label=class_idx if keep_label else None,
                        split=split,
                    )
                )

    manifest = DatasetManifest(records=records, label_space=label_space, root=out)
    manifest.save(out / "manifest.jsonl")
    return manifest
