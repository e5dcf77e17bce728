"""Addressable Gaussian streams on top of numpy's counter-based Philox generator.

A draw is identified by ``(seed, tag, index, row)``: ``tag`` names the purpose
(initial state, per-iteration noise, Brownian increments), ``index`` the step or
sample, and ``row`` the batch element.  Row ``j`` of a draw never depends on how many
other rows were requested, which is what makes batches independent of their size
and lets coupled experiments replay the exact noise of any single sample.
"""
from __future__ import annotations

import numpy as np
from scipy.special import ndtri

TAG_INIT = 1
TAG_XI = 2
TAG_BROWNIAN = 3

_MASK64 = (1 << 64) - 1


def _key(seed: int, tag: int, index: int) -> np.ndarray:
    if not 0 <= index < (1 << 56):
        raise ValueError("stream index out of range")
    return np.array([int(seed) & _MASK64, ((tag & 0xFF) << 56) | index], dtype=np.uint64)


def _uniform_to_normal(raw: np.ndarray) -> np.ndarray:
    # 53 random bits, centred in each bucket so the result is never 0 or 1
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u)


def normals(seed: int, tag: int, index: int, rows, dim: int) -> np.ndarray:
    """Standard normals of shape ``(len(rows), dim)`` for the given stream rows.

    Each row occupies ``ceil(dim / 4)`` Philox counters, so row ``j`` starts at
    counter ``j * ceil(dim / 4)``.
    """
    rows = np.atleast_1d(np.asarray(rows, dtype=np.int64))
    blocks = -(-dim // 4)
    out = np.empty((rows.size, dim))
    if rows.size == 0:
        return out
    key = _key(seed, tag, index)
    # contiguous row ranges share one generator call
    breaks = np.flatnonzero(np.diff(rows) != 1) + 1
    for chunk in np.split(np.arange(rows.size), breaks):
        first = int(rows[chunk[0]])
        bitgen = np.random.Philox(key=key, counter=np.array([first * blocks, 0, 0, 0], dtype=np.uint64))
        raw = bitgen.random_raw(chunk.size * blocks * 4).reshape(chunk.size, blocks * 4)
        out[chunk] = _uniform_to_normal(raw[:, :dim])
    return out
