"""Shared helpers for gradient checks and small fixtures."""

import numpy as np
import pytest

from lacvit.rng import RngStream


def unit_rows(arr: np.ndarray) -> np.ndarray:
    return arr / np.linalg.norm(arr, axis=1, keepdims=True)


def random_views(seed: int, images: int, dim: int, classes: int):
    """A synthetic contrastive batch layout: two unit views per image."""
    rng = RngStream(seed, 0)
    raw = rng.child("z").normal(0.0, 1.0, (2 * images, dim))
    labels_img = np.array([rng.child("lab", i).integer(classes) for i in range(images)])
    labels = np.repeat(labels_img, 2)
    sources = np.repeat(np.arange(images), 2)
    return unit_rows(raw), labels, sources


@pytest.fixture
def rng():
    return RngStream(1234, 0)
