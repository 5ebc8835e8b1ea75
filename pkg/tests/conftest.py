"""Shared fixtures: a tiny deterministic synthetic dataset."""

import pytest

from semisup.config import load_config
from semisup.synth import SynthSpec, generate_synthetic_dataset
from semisup.trainer import ImageCache

TINY_OVERRIDES = [
    "augment.working_size=24",
    "augment.crop_size=20",
    "train.batch_size=8",
    "train.epochs=2",
    "train.learning_rate=0.002",
    "dta.ema_decay=0.9",
    "model.channels=[8, 16]",
]


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """A small 7-class dataset: 3 labeled / 6 unlabeled / 4 eval per class."""
    root = tmp_path_factory.mktemp("tiny-data")
    spec = SynthSpec(
        image_size=24,
        labeled_per_class=[3] * 7,
        unlabeled_per_class=[6] * 7,
        eval_per_class=[4] * 7,
        seed=1234,
    )
    manifest = generate_synthetic_dataset(spec, root)
    return manifest


@pytest.fixture(scope="session")
def shared_cache():
    return ImageCache()


def tiny_config(extra_overrides=(), seed=0):
    return load_config(overrides=TINY_OVERRIDES + list(extra_overrides), seed=seed)
