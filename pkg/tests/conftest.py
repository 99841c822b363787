import os
from pathlib import Path

import numpy as np
import pytest

from gmrlab.datasets import LabeledDataset, load_mnist_style, stratified_subset

REPO_ROOT = Path(__file__).resolve().parent.parent
MNIST_DIR = REPO_ROOT / "data" / "mnist"


def pytest_addoption(parser):
    parser.addoption(
        "--skip-slow",
        action="store_true",
        default=False,
        help="skip tests marked slow (full-scale training runs)",
    )


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-scale training runs (minutes)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--skip-slow"):
        marker = pytest.mark.skip(reason="--skip-slow given")
        for item in items:
            if "slow" in item.keywords:
                item.add_marker(marker)


@pytest.fixture(scope="session")
def mnist():
    """Official-split MNIST pair (train, test); the files ship with the repo."""
    if not MNIST_DIR.exists():
        raise FileNotFoundError(
            f"MNIST IDX files expected under {MNIST_DIR}; see README for layout"
        )
    return load_mnist_style(MNIST_DIR, split="official")


@pytest.fixture(scope="session")
def mnist_small(mnist):
    """Stratified 10k training subset plus the full test set."""
    train, test = mnist
    return stratified_subset(train, 10_000, seed=0), test


def make_blobs_dataset(n=400, num_classes=2, seed=0, spread=0.04):
    """Tiny two-pixel-image dataset with one tight cluster per class."""
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.15, 0.85, size=(num_classes, 2))
    labels = rng.integers(0, num_classes, size=n)
    points = centers[labels] + rng.normal(0, spread, size=(n, 2))
    points = np.clip(points, 0.0, 1.0)
    return LabeledDataset(
        images=points.reshape(n, 1, 2, 1),
        labels=labels.astype(np.int64),
        name="blobs",
        num_classes=num_classes,
    )


@pytest.fixture
def blobs():
    return make_blobs_dataset()
