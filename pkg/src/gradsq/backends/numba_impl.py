"""Numba-compiled sampling kernels (hot lane).

Statement-for-statement mirror of numpy_impl: same substream derivation,
same arithmetic order inside every row, so outputs are bit-identical to
the reference lane.  See numpy_impl for the draw-layout contract.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .numpy_impl import (
    INV_2_53,
    MASK64,
    STREAM_GAMMA,
    SUBSTREAM_GAMMA,
    _MULT_1,
    _MULT_2,
    _S11,
    _S27,
    _S30,
    _S31,
)


@njit(cache=True)
def _mix(z):
    z = (z ^ (z >> _S30)) * _MULT_1
    z = (z ^ (z >> _S27)) * _MULT_2
    return z ^ (z >> _S31)


@njit(cache=True)
def _substream(key, t):
    return _mix((key ^ SUBSTREAM_GAMMA) + np.uint64(t + 1) * SUBSTREAM_GAMMA)


@njit(cache=True)
def _uniform_at(sub, i):
    bits = _mix(sub + np.uint64(i + 1) * STREAM_GAMMA)
    return (bits >> _S11) * INV_2_53


@njit(cache=True)
def _uniform_rows(key, n_rows, n_cols, row_offset):
    out = np.empty((n_rows, n_cols), np.float64)
    for t in range(n_rows):
        sub = _substream(key, row_offset + t)
        for i in range(n_cols):
            out[t, i] = _uniform_at(sub, i)
    return out


@njit(cache=True)
def _random_k_rows(x_rows, m, key, scale):
    n_rows, dim = x_rows.shape
    out = np.zeros((n_rows, dim), np.float64)
    idx = np.empty(dim, np.int64)
    for t in range(n_rows):
        sub = _substream(key, t)
        for c in range(dim):
            idx[c] = c
        for s in range(m):
            u = _uniform_at(sub, s)
            span = dim - s
            j = s + min(int(u * span), span - 1)
            picked = idx[j]
            idx[j] = idx[s]
            idx[s] = picked
            out[t, picked] = x_rows[t, picked] * scale
    return out


@njit(cache=True)
def _terngrad_rows(x_rows, key):
    n_rows, dim = x_rows.shape
    out = np.zeros((n_rows, dim), np.float64)
    for t in range(n_rows):
        sub = _substream(key, t)
        s = 0.0
        for c in range(dim):
            a = abs(x_rows[t, c])
            if a > s:
                s = a
        safe = s if s > 0.0 else 1.0
        for c in range(dim):
            u = _uniform_at(sub, c)
            x = x_rows[t, c]
            p = abs(x) / safe
            if u < p:
                out[t, c] = s if x > 0.0 else -s
    return out


@njit(cache=True)
def _qsgd_rows(x_rows, s, key):
    n_rows, dim = x_rows.shape
    out = np.zeros((n_rows, dim), np.float64)
    for t in range(n_rows):
        sub = _substream(key, t)
        acc = 0.0
        for c in range(dim):
            acc = acc + x_rows[t, c] * x_rows[t, c]
        r = np.sqrt(acc)
        if r > 0.0:
            for c in range(dim):
                x = x_rows[t, c]
                a = (s * abs(x)) / r
                lvl = np.floor(a)
                p = a - lvl
                u = _uniform_at(sub, c)
                hit = 1.0 if u < p else 0.0
                xi = (lvl + hit) / s
                sgn = 1.0 if x > 0.0 else (-1.0 if x < 0.0 else 0.0)
                out[t, c] = sgn * (r * xi)
    return out


def _key_u64(key: int) -> np.uint64:
    return np.uint64(key & MASK64)


def uniform_rows(key: int, n_rows: int, n_cols: int, row_offset: int = 0) -> np.ndarray:
    return _uniform_rows(_key_u64(key), n_rows, n_cols, row_offset)


def random_k_rows(x_rows: np.ndarray, m: int, key: int, scale: float) -> np.ndarray:
    x_rows = np.ascontiguousarray(x_rows, dtype=np.float64)
    return _random_k_rows(x_rows, m, _key_u64(key), scale)


def terngrad_rows(x_rows: np.ndarray, key: int) -> np.ndarray:
    x_rows = np.ascontiguousarray(x_rows, dtype=np.float64)
    return _terngrad_rows(x_rows, _key_u64(key))


def qsgd_rows(x_rows: np.ndarray, levels: int, key: int) -> np.ndarray:
    x_rows = np.ascontiguousarray(x_rows, dtype=np.float64)
    return _qsgd_rows(x_rows, float(levels), _key_u64(key))
