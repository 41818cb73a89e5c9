"""Shared helpers for building tiny fixtures in tests."""

from __future__ import annotations

import numpy as np
import pytest

from segfuse.masks import BBox, BinaryMask, MaskInstance, rle_encode, tight_bbox


def make_instance(bits, component="shell", object_id=0, score=0.9,
                  model_id="m0", scale=1.0, uid=None, bbox=None):
    """MaskInstance from a 2D 0/1 array with an auto-derived tight box."""
    mask = BinaryMask.from_array(np.asarray(bits, dtype=bool))
    box = bbox if bbox is not None else tight_bbox(mask)
    if box is None:
        box = BBox(0, 0, 1, 1)
    return MaskInstance(mask=rle_encode(mask), bbox=box, component=component,
                        object_id=object_id, score=score, model_id=model_id,
                        scale=scale, uid=uid)


def block_mask(h, w, y0, y1, x0, x1):
    bits = np.zeros((h, w), dtype=bool)
    bits[y0:y1, x0:x1] = True
    return bits


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
