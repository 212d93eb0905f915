"""Deterministic floating-point reductions.

Every norm, integral, and Monte Carlo estimate in this package is accumulated
through these helpers so that results are bit-identical across runs, batch
sizes, and worker counts: the summation tree depends only on the length of
the reduced axis, never on how the work was split.
"""

from __future__ import annotations

import numpy as np


def pairwise_sum(values: np.ndarray, axis: int = 0) -> np.ndarray:
    """Sum `values` along `axis` with a fixed halving tree.

    Splitting head/tail halves repeatedly gives a reduction order that is a
    function of the axis length alone, so per-column results on a (n, M)
    array match the 1-D reduction of each column exactly.
    """
    x = np.asarray(values, dtype=np.float64)
    if x.ndim == 0:
        return x
    x = np.moveaxis(x, axis, 0)
    if x.shape[0] == 0:
        return np.zeros(x.shape[1:], dtype=np.float64)
    while x.shape[0] > 1:
        m = x.shape[0] // 2
        head = x[:m] + x[m : 2 * m]
        if x.shape[0] > 2 * m:
            x = np.concatenate([head, x[2 * m :]], axis=0)
        else:
            x = head
    return x[0]


def block_sums(values: np.ndarray, block: int) -> np.ndarray:
    """Sum adjacent blocks of length `block` along the last axis.

    Adjacent pairs are folded while the block length is even, then any odd
    remainder is folded left to right.  Power-of-two block factors therefore
    compose bit-identically: aggregating 16 -> 8 -> 4 equals 16 -> 4.
    """
    x = np.asarray(values, dtype=np.float64)
    n = x.shape[-1]
    if block < 1 or n % block:
        raise ValueError(f"block {block} does not divide axis length {n}")
    x = x.reshape(x.shape[:-1] + (n // block, block))
    width = block
    while width > 1 and width % 2 == 0:
        x = x[..., 0::2] + x[..., 1::2]
        width //= 2
    if width > 1:
        acc = x[..., 0]
        for j in range(1, width):
            acc = acc + x[..., j]
        return acc
    return x[..., 0]
