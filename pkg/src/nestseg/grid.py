"""Raster primitives shared by every other module.

Masks and fields are plain numpy arrays indexed ``(row, col)`` with row 0 at
the top:

* label mask    -- 2-D integer array, 0 = background, any positive id = instance
* semantic mask -- 2-D array with values in {0, 1} (float-valued soft masks are
  accepted wherever only sums of products are taken)
* scalar field  -- 2-D float array
* radial field  -- 3-D float array of shape ``(H, W, K)``
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "as_label_mask",
    "instance_ids",
    "to_semantic",
    "invert",
    "masked_product_sum",
    "check_same_shape",
]


def as_label_mask(mask) -> np.ndarray:
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ValueError(f"label mask must be 2-D, got shape {arr.shape}")
    if arr.dtype.kind not in "iub":
        if arr.size and not np.all(np.equal(np.mod(arr, 1), 0)):
            raise ValueError("label mask must hold integer ids")
        arr = arr.astype(np.int64)
    if arr.size and arr.min() < 0:
        raise ValueError("label mask ids must be non-negative")
    return arr


def instance_ids(mask) -> np.ndarray:
    """Sorted positive ids present in ``mask``."""
    ids = np.unique(np.asarray(mask))
    return ids[ids > 0]


def check_same_shape(*arrays, what: str = "grids") -> None:
    shapes = {np.shape(a)[:2] for a in arrays}
    if len(shapes) > 1:
        raise ValueError(f"incompatible {what}: shapes {sorted(shapes)}")


def to_semantic(mask) -> np.ndarray:
    return (as_label_mask(mask) > 0).astype(np.uint8)


def invert(mask) -> np.ndarray:
    """Pixelwise complement ``1 - mask``; keeps the input dtype."""
    mask = np.asarray(mask)
    return (1 - mask).astype(mask.dtype, copy=False)


def masked_product_sum(a, b):
    """Sum of the element-wise product of two masks of equal shape.

    For binary masks this is the number of pixels set in both, returned as a
    Python int; soft masks give a float.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"incompatible grids: shapes {a.shape} and {b.shape}")
    if a.dtype.kind in "iub" and b.dtype.kind in "iub":
        return int(np.sum(a.astype(np.int64) * b.astype(np.int64)))
    return float(np.sum(a * b))
