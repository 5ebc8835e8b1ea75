"""Weak/strong augmentation: determinism, ranges, and the op table."""

import numpy as np
import pytest

from semisup.augment import (
    OP_TABLE,
    AugmentError,
    AugmentPolicy,
    make_views,
    strong_augment,
    to_model_array,
    weak_augment,
)
from semisup.config import AugmentConfig
from semisup.datamodel import ImageSample


def random_image(rng: np.random.Generator, size: int = 64) -> ImageSample:
    return ImageSample("img", rng.random((size, size, 3)).astype(np.float32))


class TestOpTable:
    def test_the_fourteen_ops(self):
        assert set(OP_TABLE) == {
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
        }
        assert len(OP_TABLE) == 14

    def test_unknown_op_rejected_at_construction(self):
        with pytest.raises(AugmentError):
            AugmentPolicy(op_table=("Rotate", "Cutout"))

    def test_defaults(self):
        policy = AugmentPolicy()
        assert policy.n_ops == 3
        assert policy.magnitude == 5


class TestWeakAugment:
    def test_default_sizes(self):
        rng = np.random.default_rng(0)
        img = ImageSample("x", rng.random((256, 256, 3)).astype(np.float32))
        out = weak_augment(img, rng)
        assert out.pixels.shape == (224, 224, 3)

    def test_center_crop_is_idempotent(self):
        rng = np.random.default_rng(0)
        img = random_image(rng)
        once = weak_augment(img, rng, working_size=64, crop_size=56, center=True)
        again = weak_augment(once, rng, working_size=56, crop_size=56, center=True)
        np.testing.assert_array_equal(once.pixels, again.pixels)

    def test_seeded_determinism(self):
        img = random_image(np.random.default_rng(3))
        out1 = weak_augment(img, np.random.default_rng(11), working_size=64, crop_size=56)
        out2 = weak_augment(img, np.random.default_rng(11), working_size=64, crop_size=56)
        assert out1.pixels.tobytes() == out2.pixels.tobytes()

    def test_too_small_input_rejected(self):
        img = ImageSample("x", np.zeros((32, 32, 3), dtype=np.float32))
        with pytest.raises(AugmentError):
            weak_augment(img, np.random.default_rng(0), working_size=32, crop_size=56)

    def test_output_range_and_size_over_random_inputs(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            img = random_image(rng)
            out = weak_augment(img, rng, working_size=64, crop_size=56)
            assert out.pixels.shape == (56, 56, 3)
            assert out.pixels.min() >= 0.0 and out.pixels.max() <= 1.0

    def test_resizes_mismatched_input(self):
        rng = np.random.default_rng(4)
        img = ImageSample("x", rng.random((48, 48, 3)).astype(np.float32))
        out = weak_augment(img, rng, working_size=64, crop_size=56)
        assert out.pixels.shape == (56, 56, 3)


class TestStrongAugment:
    def test_identity_only_table_equals_weak(self):
        img = random_image(np.random.default_rng(1))
        policy = AugmentPolicy(op_table=("Identity",), n_ops=5)
        seed = 99
        strong = strong_augment(
            img, policy, np.random.default_rng(seed), working_size=64, crop_size=56
        )
        weak = weak_augment(img, np.random.default_rng(seed), working_size=64, crop_size=56)
        # identical geometry draws, then identity ops; only the uint8
        # round-trip separates them
        np.testing.assert_allclose(strong.pixels, weak.pixels, atol=1 / 255 + 1e-6)

    def test_seeded_determinism(self):
        img = random_image(np.random.default_rng(2))
        policy = AugmentPolicy()
        a = strong_augment(img, policy, np.random.default_rng(7), working_size=64, crop_size=56)
        b = strong_augment(img, policy, np.random.default_rng(7), working_size=64, crop_size=56)
        assert a.pixels.tobytes() == b.pixels.tobytes()

    def test_weak_policy_rejected(self):
        img = random_image(np.random.default_rng(0))
        with pytest.raises(AugmentError):
            strong_augment(img, AugmentPolicy(kind="weak"), np.random.default_rng(0))

    def test_output_in_range_for_every_op(self):
        rng = np.random.default_rng(6)
        img = random_image(rng)
        for op in OP_TABLE:
            policy = AugmentPolicy(op_table=(op,), n_ops=2, magnitude=10)
            out = strong_augment(
                img, policy, np.random.default_rng(13), working_size=64, crop_size=56
            )
            assert out.pixels.shape == (56, 56, 3), op
            assert out.pixels.min() >= 0.0 and out.pixels.max() <= 1.0, op


class TestMakeViews:
    CFG = AugmentConfig(working_size=64, crop_size=56)

    def test_degenerate_determinism_three_identical_views(self):
        rng = np.random.default_rng(0)
        img = random_image(rng)
        cfg = AugmentConfig(working_size=56, crop_size=56, flip_prob=0.0)
        policy = AugmentPolicy(op_table=("Identity",))
        views = make_views(
            ImageSample("x", img.pixels[:56, :56]), rng, cfg, policy
        )
        np.testing.assert_array_equal(views.weak1.pixels, views.weak2.pixels)
        np.testing.assert_allclose(views.weak1.pixels, views.strong.pixels, atol=1 / 255 + 1e-6)

    def test_weak_views_differ_with_high_probability(self):
        img = random_image(np.random.default_rng(42))
        policy = AugmentPolicy()
        differing = 0
        n_seeds = 200
        for seed in range(n_seeds):
            views = make_views(img, np.random.default_rng(seed), self.CFG, policy)
            if views.weak1.pixels.tobytes() != views.weak2.pixels.tobytes():
                differing += 1
        assert differing / n_seeds > 0.9

    def test_source_id_preserved(self):
        img = random_image(np.random.default_rng(1))
        views = make_views(img, np.random.default_rng(0), self.CFG, AugmentPolicy())
        assert views.source_id == "img"
        assert views.weak1.sample_id == views.weak2.sample_id == views.strong.sample_id == "img"

    def test_all_outputs_in_range_and_at_crop_size(self):
        rng = np.random.default_rng(9)
        policy = AugmentPolicy()
        for _ in range(25):
            img = random_image(rng)
            views = make_views(img, rng, self.CFG, policy)
            for v in (views.weak1, views.weak2, views.strong):
                assert v.pixels.shape == (56, 56, 3)
                assert v.pixels.min() >= 0.0 and v.pixels.max() <= 1.0


class TestToModelArray:
    def test_layout_and_normalization(self):
        px = np.zeros((4, 5, 3), dtype=np.float32)
        px[0, 0, 0] = 1.0
        chw = to_model_array(px, normalize=True)
        assert chw.shape == (3, 4, 5)
        assert chw[0, 0, 0] == pytest.approx(1.0)
        assert chw[1, 0, 0] == pytest.approx(-1.0)

    def test_unnormalized_passthrough(self):
        px = np.full((2, 2, 3), 0.25, dtype=np.float32)
        chw = to_model_array(px, normalize=False)
        assert np.all(chw == 0.25)
