"""Binary mask layers: thresholding, gating and the straight-through path."""

import numpy as np

from .exceptions import ConfigError


def binarize(real_mask):
    """Hard threshold: 1 where the real-valued entry is >= 0, else 0."""
    return (np.asarray(real_mask) >= 0).astype(np.float64)


def apply_mask(embedding, mask_row):
    embedding = np.asarray(embedding, dtype=np.float64)
    mask_row = np.asarray(mask_row, dtype=np.float64)
    if embedding.shape[-1] != mask_row.shape[-1]:
        raise ValueError(f"length mismatch: {embedding.shape[-1]} vs {mask_row.shape[-1]}")
    return embedding * mask_row


def straight_through_backward(grad_wrt_binary):
    # The threshold is treated as the identity in the backward pass.
    return np.array(grad_wrt_binary, dtype=np.float64, copy=True)


def fixed_disjoint_masks(num_categories: int, dim: int):
    """Partition ``dim`` coordinates into ``num_categories + 1`` contiguous
    blocks of ``dim // (C+1)``; the last block absorbs the remainder."""
    rows = num_categories + 1
    if dim < rows:
        raise ConfigError(f"dimension {dim} cannot hold {rows} disjoint blocks")
    width = dim // rows
    mask = np.zeros((rows, dim))
    for r in range(rows):
        stop = dim if r == rows - 1 else (r + 1) * width
        mask[r, r * width:stop] = 1.0
    return mask
