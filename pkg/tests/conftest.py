import os
from pathlib import Path

import numpy as np
import pytest

from dropgate.data import ImageSet

# Small class-structured image sets shared by the training-loop tests.
# Each class gets a fixed bright template so a small MLP can separate
# them within an epoch or two.


def _structured_images(n, rng, templates, masks):
    labels = rng.integers(0, 10, size=n)
    images = rng.integers(0, 40, size=(n, 28, 28)).astype(np.uint8)
    for c in range(10):
        rows = labels == c
        images[rows] = np.where(masks[c], templates[c], images[rows])
    return ImageSet(images, labels)


@pytest.fixture(scope="session")
def synthetic_sets():
    rng = np.random.default_rng(1234)
    templates = rng.integers(150, 256, size=(10, 28, 28)).astype(np.uint8)
    masks = rng.random((10, 28, 28)) < 0.15
    return (_structured_images(240, rng, templates, masks),
            _structured_images(120, rng, templates, masks))


def resolve_mnist_dir():
    candidates = [os.environ.get("DROPGATE_DATA_DIR"),
                  "data/mnist", "/root/data/mnist"]
    for c in candidates:
        if c and Path(c, "train-images-idx3-ubyte").exists():
            return Path(c)
    return None


@pytest.fixture(scope="session")
def mnist_dir():
    found = resolve_mnist_dir()
    if found is None:
        pytest.skip("MNIST files not found (run scripts/fetch_mnist.py)")
    return found


