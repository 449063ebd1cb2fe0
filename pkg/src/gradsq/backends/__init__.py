"""Backend selection for the sampling kernels.

``GRADSQ_BACKEND`` picks the lane at import time: ``numba`` (default when
numba imports), ``numpy`` (pure-numpy fallback), or ``auto``.  Both lanes
are bit-identical, so the flag trades speed only; ``benchmarks/`` compares
them.  Gaussian deviates are a shared numpy transform over backend uniforms
and therefore identical across lanes as well.
"""

from __future__ import annotations

import os
import warnings

import numpy as np

from . import numpy_impl

_TWO_PI = 6.283185307179586


def _select():
    choice = os.environ.get("GRADSQ_BACKEND", "auto").strip().lower()
    if choice not in ("auto", "numba", "numpy"):
        raise ValueError(f"GRADSQ_BACKEND must be auto|numba|numpy, got {choice!r}")
    if choice == "numpy":
        return numpy_impl, "numpy"
    try:
        from . import numba_impl
    except ImportError as exc:
        if choice == "numba":
            raise
        warnings.warn(f"numba unavailable ({exc}); using the pure-numpy kernels")
        return numpy_impl, "numpy"
    return numba_impl, "numba"


_impl, BACKEND = _select()

uniform_rows = _impl.uniform_rows
random_k_rows = _impl.random_k_rows
terngrad_rows = _impl.terngrad_rows
qsgd_rows = _impl.qsgd_rows


def get_impl(name: str):
    """Fetch a lane by name (for cross-backend tests and benchmarks)."""
    if name == "numpy":
        return numpy_impl
    if name == "numba":
        from . import numba_impl

        return numba_impl
    raise ValueError(f"unknown backend {name!r}")


def gaussian_rows(key: int, n_rows: int, n_cols: int) -> np.ndarray:
    """(n_rows, n_cols) standard normals via Box-Muller over backend uniforms."""
    pairs = (n_cols + 1) // 2
    u = uniform_rows(key, n_rows, 2 * pairs)
    u1 = 1.0 - u[:, :pairs]  # in (0, 1], keeps log finite
    u2 = u[:, pairs:]
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = _TWO_PI * u2
    z = np.empty((n_rows, 2 * pairs))
    z[:, :pairs] = radius * np.cos(angle)
    z[:, pairs:] = radius * np.sin(angle)
    return np.ascontiguousarray(z[:, :n_cols])
