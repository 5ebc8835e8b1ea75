"""Weak and strong augmentation pipelines.

Weak augmentation is random crop + random horizontal flip. Strong
augmentation applies the weak geometry first, then ``n_ops`` operations
drawn uniformly with replacement from a 14-op table, each at a shared
integer magnitude in [0, 10] mapped linearly into the op's range.

All randomness comes from an explicit ``numpy.random.Generator`` so
callers own determinism; identical (image, seed, policy) gives
byte-identical output.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from PIL import Image, ImageEnhance, ImageOps

from .config import AugmentConfig, StrongPolicyConfig
from .datamodel import ImageSample

FILL = (128, 128, 128)

OP_TABLE: tuple[str, ...] = (
    "Rotate",
    "Sharpness",
    "Shear-x",
    "Shear-y",
    "Translate-x",
    "Translate-y",
    "Identity",
    "Contrast",
    "Color",
    "Brightness",
    "Equalize",
    "Solarize",
    "Posterize",
    "AutoContrast",
)

MAX_ROTATE_DEG = 30.0
MAX_SHEAR = 0.3
MAX_TRANSLATE_FRAC = 0.3
MAX_ENHANCE_DELTA = 0.9
MAX_POSTERIZE_BITS = 4


class AugmentError(ValueError):
    """Raised on invalid augmentation inputs or policies."""


def _signed(magnitude: float, rng: np.random.Generator) -> float:
    return magnitude if rng.random() < 0.5 else -magnitude


def _affine(img: Image.Image, coeffs: Sequence[float]) -> Image.Image:
    return img.transform(img.size, Image.AFFINE, tuple(coeffs), fillcolor=FILL)


def _op_rotate(img: Image.Image, m: float, rng: np.random.Generator) -> Image.Image:
    return img.rotate(_signed(MAX_ROTATE_DEG * m, rng), fillcolor=FILL)


def _op_shear_x(img: Image.Image, m: float, rng: np.random.Generator) -> Image.Image:
    return _affine(img, (1, _signed(MAX_SHEAR * m, rng), 0, 0, 1, 0))


def _op_shear_y(img: Image.Image, m: float, rng: np.random.Generator) -> Image.Image:
    return _affine(img, (1, 0, 0, _signed(MAX_SHEAR * m, rng), 1, 0))


def _op_translate_x(img: Image.Image, m: float, rng: np.random.Generator) -> Image.Image:
    return _affine(img, (1, 0, _signed(MAX_TRANSLATE_FRAC * m, rng) * img.size[0], 0, 1, 0))


def _op_translate_y(img: Image.Image, m: float, rng: np.random.Generator) -> Image.Image:
    return _affine(img, (1, 0, 0, 0, 1, _signed(MAX_TRANSLATE_FRAC * m, rng) * img.size[1]))


def _enhance(kind: Callable, img: Image.Image, m: float, rng: np.random.Generator) -> Image.Image:
    return kind(img).enhance(1.0 + _signed(MAX_ENHANCE_DELTA * m, rng))


_OP_FUNCS: dict[str, Callable[[Image.Image, float, np.random.Generator], Image.Image]] = {
    "Rotate": _op_rotate,
    "Sharpness": lambda img, m, rng: _enhance(ImageEnhance.Sharpness, img, m, rng),
    "Shear-x": _op_shear_x,
    "Shear-y": _op_shear_y,
    "Translate-x": _op_translate_x,
    "Translate-y": _op_translate_y,
    "Identity": lambda img, m, rng: img,
    "Contrast": lambda img, m, rng: _enhance(ImageEnhance.Contrast, img, m, rng),
    "Color": lambda img, m, rng: _enhance(ImageEnhance.Color, img, m, rng),
    "Brightness": lambda img, m, rng: _enhance(ImageEnhance.Brightness, img, m, rng),
    "Equalize": lambda img, m, rng: ImageOps.equalize(img),
    "Solarize": lambda img, m, rng: ImageOps.solarize(img, 256 - int(256 * m)),
    "Posterize": lambda img, m, rng: ImageOps.posterize(
        img, 8 - int(MAX_POSTERIZE_BITS * m)
    ),
    "AutoContrast": lambda img, m, rng: ImageOps.autocontrast(img),
}

assert set(_OP_FUNCS) == set(OP_TABLE)


@dataclass(frozen=True)
class AugmentPolicy:
    """An augmentation policy: either the weak pipeline or the strong one."""

    kind: str = "strong"
    n_ops: int = 3
    magnitude: int = 5
    op_table: tuple[str, ...] = OP_TABLE

    def __post_init__(self) -> None:
        if self.kind not in ("weak", "strong"):
            raise AugmentError(f"policy kind must be weak or strong, got {self.kind!r}")
        unknown = [op for op in self.op_table if op not in _OP_FUNCS]
        if unknown:
            raise AugmentError(f"unknown augmentation ops: {unknown}")
        if not self.op_table:
            raise AugmentError("op_table must not be empty")
        if self.n_ops < 0:
            raise AugmentError(f"n_ops must be >= 0, got {self.n_ops}")
        if not 0 <= self.magnitude <= 10:
            raise AugmentError(f"magnitude must be in [0, 10], got {self.magnitude}")

    @classmethod
    def from_config(cls, cfg: StrongPolicyConfig) -> "AugmentPolicy":
        table = tuple(cfg.op_subset) if cfg.op_subset else OP_TABLE
        return cls(kind="strong", n_ops=cfg.n_ops, magnitude=cfg.magnitude, op_table=table)


@dataclass(frozen=True)
class ViewTriple:
    """Two weak views plus one strong view of the same source image."""

    weak1: ImageSample
    weak2: ImageSample
    strong: ImageSample
    source_id: str


def _to_pil(pixels: np.ndarray) -> Image.Image:
    arr = np.clip(np.asarray(pixels, dtype=np.float32), 0.0, 1.0)
    return Image.fromarray(np.round(arr * 255.0).astype(np.uint8))


def _from_pil(img: Image.Image) -> np.ndarray:
    return np.asarray(img, dtype=np.float32) / 255.0


def _resize_to_working(pixels: np.ndarray, working_size: int) -> np.ndarray:
    h, w = pixels.shape[:2]
    if h == working_size and w == working_size:
        return pixels
    img = _to_pil(pixels).resize((working_size, working_size), Image.BILINEAR)
    return _from_pil(img)


def weak_augment(
    image: ImageSample,
    rng: np.random.Generator,
    working_size: int = 256,
    crop_size: int = 224,
    flip_prob: float = 0.5,
    center: bool = False,
) -> ImageSample:
    """Resize to the working size, random-crop, random horizontal flip.

    With ``center=True`` the crop is the deterministic center crop and
    no flip coin is drawn (used by evaluation preprocessing).
    """
    if crop_size > working_size:
        raise AugmentError(
            f"crop size {crop_size} exceeds working size {working_size}"
        )
    px = _resize_to_working(image.pixels, working_size)
    h, w = px.shape[:2]
    if h < crop_size or w < crop_size:
        raise AugmentError(
            f"input {h}x{w} smaller than crop size {crop_size} for {image.sample_id!r}"
        )
    if center:
        top = (h - crop_size) // 2
        left = (w - crop_size) // 2
        flip = False
    else:
        top = int(rng.integers(0, h - crop_size + 1))
        left = int(rng.integers(0, w - crop_size + 1))
        flip = rng.random() < flip_prob
    out = px[top : top + crop_size, left : left + crop_size]
    if flip:
        out = out[:, ::-1]
    return ImageSample(sample_id=image.sample_id, pixels=np.ascontiguousarray(out), label=image.label)


def strong_augment(
    image: ImageSample,
    policy: AugmentPolicy,
    rng: np.random.Generator,
    working_size: int = 256,
    crop_size: int = 224,
    flip_prob: float = 0.5,
) -> ImageSample:
    """Weak geometry first, then ``policy.n_ops`` table ops with replacement."""
    if policy.kind != "strong":
        raise AugmentError(f"strong_augment requires a strong policy, got {policy.kind!r}")
    base = weak_augment(
        image, rng, working_size=working_size, crop_size=crop_size, flip_prob=flip_prob
    )
    img = _to_pil(base.pixels)
    m = policy.magnitude / 10.0
    for _ in range(policy.n_ops):
        op_name = policy.op_table[int(rng.integers(0, len(policy.op_table)))]
        img = _OP_FUNCS[op_name](img, m, rng)
    out = np.clip(_from_pil(img), 0.0, 1.0)
    return ImageSample(sample_id=image.sample_id, pixels=out, label=image.label)


def make_views(
    image: ImageSample,
    rng: np.random.Generator,
    aug_cfg: AugmentConfig,
    policy: AugmentPolicy,
) -> ViewTriple:
    """Two independently weak-augmented views plus one strong view."""
    kwargs = dict(
        working_size=aug_cfg.working_size,
        crop_size=aug_cfg.crop_size,
        flip_prob=aug_cfg.flip_prob,
    )
    weak1 = weak_augment(image, rng, **kwargs)
    weak2 = weak_augment(image, rng, **kwargs)
    strong = strong_augment(image, policy, rng, **kwargs)
    return ViewTriple(weak1=weak1, weak2=weak2, strong=strong, source_id=image.sample_id)


def to_model_array(pixels: np.ndarray, normalize: bool = True) -> np.ndarray:
    """HWC [0,1] floats -> CHW float32 model input, optionally normalized
    to [-1, 1]."""
    chw = np.transpose(np.asarray(pixels, dtype=np.float32), (2, 0, 1))
    if normalize:
        chw = (chw - 0.5) / 0.5
    return np.ascontiguousarray(chw)
