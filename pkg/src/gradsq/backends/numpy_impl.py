"""Pure-numpy sampling kernels (reference lane).

Draws are counter-based: draw ``t`` of a batch derives its own substream
key from the caller's stream key, and value ``i`` of a substream is a pure
function of (substream key, i).  No generator state exists, so any draw can
be produced independently of execution order.

The numba lane mirrors this module statement for statement; reductions run
in fixed column order, so the two backends return bit-identical arrays.
Batches are processed in row chunks only to bound memory -- chunking does
not change any output bit.
"""

from __future__ import annotations

import numpy as np

U64 = np.uint64
MASK64 = 0xFFFFFFFFFFFFFFFF
# Odd 64-bit constants: stride within a substream / substream derivation.
STREAM_GAMMA = U64(0x9E3779B97F4A7C15)
SUBSTREAM_GAMMA = U64(0xC2B2AE3D27D4EB4F)
_MULT_1 = U64(0xBF58476D1CE4E5B9)
_MULT_2 = U64(0x94D049BB133111EB)
_S30 = U64(30)
_S27 = U64(27)
_S31 = U64(31)
_S11 = U64(11)
INV_2_53 = 1.1102230246251565e-16  # 2**-53

_ROW_CHUNK = 16384


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _S30)) * _MULT_1
    z = (z ^ (z >> _S27)) * _MULT_2
    return z ^ (z >> _S31)


def _substream_keys(key: int, start: int, count: int) -> np.ndarray:
    base = U64(key & MASK64) ^ SUBSTREAM_GAMMA
    t = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    return _mix(base + t * SUBSTREAM_GAMMA)


def _uniform_block(sub: np.ndarray, n_cols: int) -> np.ndarray:
    ctr = np.arange(1, n_cols + 1, dtype=np.uint64) * STREAM_GAMMA
    bits = _mix(sub[:, None] + ctr[None, :])
    return (bits >> _S11) * INV_2_53


def uniform_rows(key: int, n_rows: int, n_cols: int, row_offset: int = 0) -> np.ndarray:
    """(n_rows, n_cols) uniforms in [0, 1); row t comes from substream row_offset+t of key."""
    out = np.empty((n_rows, n_cols), dtype=np.float64)
    for start in range(0, n_rows, _ROW_CHUNK):
        count = min(_ROW_CHUNK, n_rows - start)
        sub = _substream_keys(key, row_offset + start, count)
        out[start : start + count] = _uniform_block(sub, n_cols)
    return out


def random_k_rows(x_rows: np.ndarray, m: int, key: int, scale: float) -> np.ndarray:
    """Keep m uniformly chosen coordinates per row, scaled; zero elsewhere.

    Subset of row t is drawn by partial Fisher-Yates from substream t.
    """
    x_rows = np.ascontiguousarray(x_rows, dtype=np.float64)
    n_rows, dim = x_rows.shape
    out = np.zeros_like(x_rows)
    for start in range(0, n_rows, _ROW_CHUNK):
        count = min(_ROW_CHUNK, n_rows - start)
        sub = _substream_keys(key, start, count)
        idx = np.tile(np.arange(dim, dtype=np.int64), (count, 1))
        rows = np.arange(count)
        for s in range(m):
            bits = _mix(sub + U64(s + 1) * STREAM_GAMMA)
            u = (bits >> _S11) * INV_2_53
            span = dim - s
            j = s + np.minimum((u * span).astype(np.int64), span - 1)
            picked = idx[rows, j].copy()
            idx[rows, j] = idx[rows, s]
            idx[rows, s] = picked
        cols = idx[:, :m]
        block = out[start : start + count]
        block[rows[:, None], cols] = x_rows[start : start + count][rows[:, None], cols] * scale
    return out


def terngrad_rows(x_rows: np.ndarray, key: int) -> np.ndarray:
    """Per row: scale s = max|x|, emit s*sign(x_i) with probability |x_i|/s."""
    x_rows = np.ascontiguousarray(x_rows, dtype=np.float64)
    n_rows, dim = x_rows.shape
    out = np.zeros_like(x_rows)
    for start in range(0, n_rows, _ROW_CHUNK):
        count = min(_ROW_CHUNK, n_rows - start)
        block = x_rows[start : start + count]
        sub = _substream_keys(key, start, count)
        u = _uniform_block(sub, dim)
        s = np.max(np.abs(block), axis=1)
        safe = np.where(s > 0.0, s, 1.0)
        p = np.abs(block) / safe[:, None]
        out[start : start + count] = np.where(u < p, np.sign(block) * s[:, None], 0.0)
    return out


def qsgd_rows(x_rows: np.ndarray, levels: int, key: int) -> np.ndarray:
    """Per row: stochastic quantisation of |x_i|/||x||_2 onto {0, 1/s, ..., 1}."""
    x_rows = np.ascontiguousarray(x_rows, dtype=np.float64)
    n_rows, dim = x_rows.shape
    s = float(levels)
    out = np.zeros_like(x_rows)
    for start in range(0, n_rows, _ROW_CHUNK):
        count = min(_ROW_CHUNK, n_rows - start)
        block = x_rows[start : start + count]
        # Column-ordered accumulation keeps the norm bit-identical to the
        # sequential per-row loop in the numba lane.
        acc = np.zeros(count)
        for c in range(dim):
            acc = acc + block[:, c] * block[:, c]
        r = np.sqrt(acc)
        safe = np.where(r > 0.0, r, 1.0)
        a = (s * np.abs(block)) / safe[:, None]
        lvl = np.floor(a)
        p = a - lvl
        sub = _substream_keys(key, start, count)
        u = _uniform_block(sub, dim)
        xi = (lvl + (u < p)) / s
        vals = np.sign(block) * (r[:, None] * xi)
        out[start : start + count] = np.where(r[:, None] > 0.0, vals, 0.0)
    return out
