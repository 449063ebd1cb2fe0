"""Compression operators and their layer-wise / entire-model application.

Operators act on 1-d float64 slices.  ``apply`` runs a spec either once over
the whole model vector or independently per layer (counts, thresholds,
scalars and norms are then computed per slice).  ``bidirectional_round``
composes the worker-side and master-side operators around averaging.

Randomised operators draw from counter-based streams, so every invocation
is a pure function of (input, stream identity).  Compressed vectors are
kept dense in memory; ``payload_bits`` models the wire size separately.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from . import backends
from .layered import LayeredVector, LayerShape
from .rng import MASTER_SIDE, WORKER_SIDE, RngStream

__all__ = [
    "CompressorSpec",
    "ApplicationMode",
    "LAYERWISE",
    "ENTIRE_MODEL",
    "random_k",
    "random_k_unbiased",
    "top_k",
    "threshold_v",
    "adaptive_threshold",
    "terngrad",
    "qsgd",
    "sign_op",
    "apply",
    "apply_array",
    "apply_batch",
    "bidirectional_round",
    "payload_bits",
    "kept_count",
    "declared_omega",
]

KINDS = (
    "identity",
    "random_k",
    "random_k_unbiased",
    "top_k",
    "threshold_v",
    "adaptive_threshold",
    "terngrad",
    "qsgd",
    "sign",
)
RANDOMIZED_KINDS = frozenset({"random_k", "random_k_unbiased", "terngrad", "qsgd"})
SPARSE_KINDS = frozenset({"random_k", "random_k_unbiased", "top_k", "threshold_v", "adaptive_threshold"})
# Elementwise operators produce identical output under both application modes.
ELEMENTWISE_KINDS = frozenset({"identity", "threshold_v", "sign"})

DEFAULT_ADAPTIVE_FRACTION = 0.01
# Kinds whose inflation constant is known without reference to the input size.
_FIXED_OMEGA = {"identity": 0.0, "top_k": 0.0, "random_k": 0.0, "threshold_v": 0.0}


def kept_count(ratio: float, dim: int) -> int:
    """Coordinates kept for a sparsification ratio: max(1, round(ratio*dim)), half-up."""
    return max(1, int(math.floor(ratio * dim + 0.5)))


@dataclass(frozen=True)
class CompressorSpec:
    """Identity of an operator plus its parameters.

    ``omega`` is the operator's norm-inflation constant when analytically
    known; it is derived, never free.  For unbiased random-k it depends on
    the slice size and is resolved at application time (``omega_for``).
    """

    kind: str
    ratio: float | None = None
    threshold: float | None = None
    fraction: float | None = None
    levels: int | None = None
    omega: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown compressor kind {self.kind!r}")
        needs_ratio = self.kind in ("random_k", "random_k_unbiased", "top_k")
        if needs_ratio:
            if self.ratio is None or not 0.0 < self.ratio <= 1.0:
                raise ValueError(f"{self.kind} requires ratio in (0, 1]")
        elif self.ratio is not None:
            raise ValueError(f"{self.kind} takes no ratio")
        if self.kind == "threshold_v":
            if self.threshold is None or not self.threshold > 0.0:
                raise ValueError("threshold_v requires threshold > 0")
        elif self.threshold is not None:
            raise ValueError(f"{self.kind} takes no threshold")
        if self.kind == "adaptive_threshold":
            frac = DEFAULT_ADAPTIVE_FRACTION if self.fraction is None else self.fraction
            if not 0.0 < frac <= 1.0:
                raise ValueError("adaptive_threshold requires fraction in (0, 1]")
            object.__setattr__(self, "fraction", float(frac))
        elif self.fraction is not None:
            raise ValueError(f"{self.kind} takes no fraction")
        if self.kind == "qsgd":
            if self.levels is None or int(self.levels) < 1 or self.levels != int(self.levels):
                raise ValueError("qsgd requires integer levels >= 1")
            object.__setattr__(self, "levels", int(self.levels))
        elif self.levels is not None:
            raise ValueError(f"{self.kind} takes no levels")

        known = _FIXED_OMEGA.get(self.kind)
        if self.omega is None:
            object.__setattr__(self, "omega", known)
        elif known is not None:
            if self.omega != known:
                raise ValueError(f"{self.kind} has inflation constant {known}, not {self.omega}")
        elif self.kind == "random_k_unbiased":
            raise ValueError("random_k_unbiased inflation is size-dependent; it is resolved at application time")
        else:
            raise ValueError(f"{self.kind} has no declared inflation constant")

    def omega_for(self, dim: int) -> float | None:
        """Inflation constant for a slice of size ``dim``, or None when unknown."""
        if self.kind == "random_k_unbiased":
            return dim / kept_count(self.ratio, dim) - 1.0
        return self.omega


@dataclass(frozen=True)
class ApplicationMode:
    """Whether a spec runs per layer or once over the whole vector."""

    mode: str = "layerwise"
    per_layer_overrides: tuple[tuple[int, CompressorSpec], ...] | None = None

    def __post_init__(self) -> None:
        if self.mode not in ("layerwise", "entire_model"):
            raise ValueError(f"mode must be layerwise or entire_model, got {self.mode!r}")
        overrides = self.per_layer_overrides
        if overrides is not None:
            if isinstance(overrides, Mapping):
                overrides = tuple(sorted(overrides.items()))
            else:
                overrides = tuple(sorted(tuple(overrides)))
            if self.mode != "layerwise":
                raise ValueError("per-layer overrides are only valid in layerwise mode")
            for j, spec in overrides:
                if j < 0:
                    raise ValueError(f"override layer index {j} is negative")
                if not isinstance(spec, CompressorSpec):
                    raise ValueError("override values must be CompressorSpec")
        object.__setattr__(self, "per_layer_overrides", overrides)

    def spec_for(self, base: CompressorSpec, layer: int) -> CompressorSpec:
        if self.per_layer_overrides:
            for j, spec in self.per_layer_overrides:
                if j == layer:
                    return spec
        return base


LAYERWISE = ApplicationMode("layerwise")
ENTIRE_MODEL = ApplicationMode("entire_model")


def _as_slice(x) -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError("operators act on 1-d slices")
    return arr


# ---------------------------------------------------------------------------
# Single-slice operators (the public catalog).  Randomised ones route through
# the batch kernels with a single row so that simulator draws and Monte Carlo
# draws share one layout.
# ---------------------------------------------------------------------------


def random_k(x, k: float, stream: RngStream) -> np.ndarray:
    """Keep a uniform subset of max(1, round(k*len)) coordinates, unscaled."""
    arr = _as_slice(x)
    if arr.size == 0:
        raise ValueError("random_k on an empty slice")
    if not 0.0 < k <= 1.0:
        raise ValueError("ratio must lie in (0, 1]")
    return backends.random_k_rows(arr[None, :], kept_count(k, arr.size), stream.key, 1.0)[0]


def random_k_unbiased(x, k: float, stream: RngStream) -> np.ndarray:
    """random_k with survivors scaled by len/m, making the operator unbiased."""
    arr = _as_slice(x)
    if arr.size == 0:
        raise ValueError("random_k_unbiased on an empty slice")
    if not 0.0 < k <= 1.0:
        raise ValueError("ratio must lie in (0, 1]")
    m = kept_count(k, arr.size)
    return backends.random_k_rows(arr[None, :], m, stream.key, arr.size / m)[0]


def top_k(x, k: float) -> np.ndarray:
    """Keep the max(1, round(k*len)) entries of largest magnitude; ties go to the lowest index."""
    arr = _as_slice(x)
    if arr.size == 0:
        raise ValueError("top_k on an empty slice")
    if not 0.0 < k <= 1.0:
        raise ValueError("ratio must lie in (0, 1]")
    m = kept_count(k, arr.size)
    order = np.argsort(-np.abs(arr), kind="stable")
    out = np.zeros_like(arr)
    keep = order[:m]
    out[keep] = arr[keep]
    return out


def threshold_v(x, v: float) -> np.ndarray:
    """Keep entries with |x_i| >= v."""
    if not v > 0.0:
        raise ValueError("threshold must be positive")
    arr = _as_slice(x)
    return np.where(np.abs(arr) >= v, arr, 0.0)


def adaptive_threshold(x, fraction: float) -> np.ndarray:
    """threshold_v with v = fraction * max|x_i| over this invocation's slice."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    arr = _as_slice(x)
    peak = float(np.max(np.abs(arr), initial=0.0))
    if peak == 0.0:
        return np.zeros_like(arr)
    return np.where(np.abs(arr) >= fraction * peak, arr, 0.0)


def terngrad(x, stream: RngStream) -> np.ndarray:
    """Three-level quantisation: s*sign(x_i) with probability |x_i|/s, s = max|x|."""
    arr = _as_slice(x)
    return backends.terngrad_rows(arr[None, :], stream.key)[0]


def qsgd(x, levels: int, stream: RngStream) -> np.ndarray:
    """Stochastic quantisation of |x_i|/||x||_2 onto {0, 1/s, ..., 1}, sign restored."""
    if int(levels) < 1:
        raise ValueError("levels must be >= 1")
    arr = _as_slice(x)
    return backends.qsgd_rows(arr[None, :], int(levels), stream.key)[0]


def sign_op(x) -> np.ndarray:
    """Elementwise sign with sign(0) = 0."""
    return np.sign(_as_slice(x))


# ---------------------------------------------------------------------------
# Batched application over (n_draws, dim) row blocks.  Row t of a randomised
# operator uses substream t of the governing stream.
# ---------------------------------------------------------------------------


def _compress_rows(spec: CompressorSpec, rows: np.ndarray, key: int) -> np.ndarray:
    dim = rows.shape[1]
    if dim == 0:
        raise ValueError("cannot compress an empty slice")
    kind = spec.kind
    if kind == "identity":
        return rows.copy()
    if kind == "random_k":
        return backends.random_k_rows(rows, kept_count(spec.ratio, dim), key, 1.0)
    if kind == "random_k_unbiased":
        m = kept_count(spec.ratio, dim)
        return backends.random_k_rows(rows, m, key, dim / m)
    if kind == "top_k":
        m = kept_count(spec.ratio, dim)
        order = np.argsort(-np.abs(rows), axis=1, kind="stable")
        out = np.zeros_like(rows)
        take = order[:, :m]
        rix = np.arange(rows.shape[0])[:, None]
        out[rix, take] = rows[rix, take]
        return out
    if kind == "threshold_v":
        return np.where(np.abs(rows) >= spec.threshold, rows, 0.0)
    if kind == "adaptive_threshold":
        peak = np.max(np.abs(rows), axis=1)
        cut = spec.fraction * peak
        out = np.where(np.abs(rows) >= cut[:, None], rows, 0.0)
        return np.where(peak[:, None] > 0.0, out, 0.0)
    if kind == "terngrad":
        return backends.terngrad_rows(rows, key)
    if kind == "qsgd":
        return backends.qsgd_rows(rows, spec.levels, key)
    if kind == "sign":
        return np.sign(rows)
    raise AssertionError(kind)


def apply_batch(
    spec: CompressorSpec,
    mode: ApplicationMode,
    shape: LayerShape,
    rows: np.ndarray,
    stream: RngStream,
) -> np.ndarray:
    """Apply ``spec``/``mode`` to every row of an (n, total_dim) block."""
    rows = np.ascontiguousarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[1] != shape.total_dim:
        raise ValueError("rows must be (n, total_dim)")
    if mode.mode == "entire_model":
        return _compress_rows(spec, rows, stream.with_layer(0).key)
    if mode.per_layer_overrides:
        for j, _ in mode.per_layer_overrides:
            if j >= shape.num_layers:
                raise ValueError(f"override layer index {j} out of range for {shape.num_layers} layers")
    out = np.empty_like(rows)
    for j in range(shape.num_layers):
        sl = shape.slice_of(j)
        eff = mode.spec_for(spec, j)
        out[:, sl] = _compress_rows(eff, np.ascontiguousarray(rows[:, sl]), stream.with_layer(j).key)
    return out


def apply_array(
    spec: CompressorSpec,
    mode: ApplicationMode,
    shape: LayerShape,
    values: np.ndarray,
    stream: RngStream,
) -> np.ndarray:
    """Single-vector form of ``apply_batch`` on a raw array."""
    return apply_batch(spec, mode, shape, np.asarray(values, dtype=np.float64)[None, :], stream)[0]


def apply(spec: CompressorSpec, mode: ApplicationMode, x: LayeredVector, stream: RngStream) -> LayeredVector:
    """Compress a model vector; output shape equals input shape."""
    return x.with_values(apply_array(spec, mode, x.shape, x.values, stream))


def bidirectional_round(
    worker_grads: Sequence[LayeredVector],
    worker_spec: CompressorSpec,
    worker_mode: ApplicationMode,
    master_spec: CompressorSpec,
    master_mode: ApplicationMode,
    stream: RngStream,
) -> LayeredVector:
    """One worker->master->broadcast round: Q_M(mean_i Q_W(g_i)).

    ``stream`` supplies the seed/step identity; worker i compresses under
    (worker=i, side=worker), the master under (worker=0, side=master).
    Averaging runs in ascending worker order so the float sum is reproducible.
    """
    if len(worker_grads) < 1:
        raise ValueError("at least one worker gradient required")
    shape = worker_grads[0].shape
    for g in worker_grads[1:]:
        if g.shape != shape:
            raise ValueError("worker gradients must share one shape")
    acc = np.zeros(shape.total_dim)
    for i, g in enumerate(worker_grads):
        ws = replace(stream, worker=i, side=WORKER_SIDE)
        acc += apply_array(worker_spec, worker_mode, shape, g.values, ws)
    acc /= len(worker_grads)
    ms = replace(stream, worker=0, side=MASTER_SIDE)
    return LayeredVector(shape, apply_array(master_spec, master_mode, shape, acc, ms))


def _ceil_log2(n: int) -> int:
    return max(0, (int(n) - 1).bit_length())


def payload_bits(spec: CompressorSpec, x_compressed) -> int:
    """Idealised encoded size of one compressed transmission, in bits.

    Sparse operators send nnz (index, value) pairs; indices address the
    model's full coordinate space and one 64-bit scalar is charged per
    message for the scaled quantisers, independent of the application mode.
    sign is one bit per coordinate, identity a full float per coordinate.
    """
    if isinstance(x_compressed, LayeredVector):
        values = x_compressed.values
    else:
        values = np.asarray(x_compressed, dtype=np.float64).reshape(-1)
    dim = values.size
    kind = spec.kind
    if kind in SPARSE_KINDS:
        nnz = int(np.count_nonzero(values))
        return nnz * (_ceil_log2(dim) + 64)
    if kind == "sign":
        return dim
    if kind == "terngrad":
        return dim * 2 + 64
    if kind == "qsgd":
        return dim * _ceil_log2(2 * spec.levels + 1) + 64
    if kind == "identity":
        return 64 * dim
    raise AssertionError(kind)


def declared_omega(spec: CompressorSpec, mode: ApplicationMode, shape: LayerShape) -> float | None:
    """Overall inflation constant of (spec, mode) on ``shape``, or None.

    Entire-model application inflates by omega(total_dim); layer-wise
    application is bounded by the worst per-layer constant.
    """
    if mode.mode == "entire_model":
        return spec.omega_for(shape.total_dim)
    worst = 0.0
    for j, dim in enumerate(shape.dims):
        om = mode.spec_for(spec, j).omega_for(dim)
        if om is None:
            return None
        worst = max(worst, om)
    return worst


def per_layer_omegas(spec: CompressorSpec, mode: ApplicationMode, shape: LayerShape) -> list[float]:
    """Per-layer inflation constants; raises when any is unknown."""
    out: list[float] = []
    if mode.mode == "entire_model":
        om = spec.omega_for(shape.total_dim)
        if om is None:
            raise ValueError(f"{spec.kind} has no declared inflation constant")
        return [om] * shape.num_layers
    for j, dim in enumerate(shape.dims):
        eff = mode.spec_for(spec, j)
        om = eff.omega_for(dim)
        if om is None:
            raise ValueError(f"{eff.kind} has no declared inflation constant")
        out.append(om)
    return out
