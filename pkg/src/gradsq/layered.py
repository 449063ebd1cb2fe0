"""Layer-partitioned vectors and block-diagonal weights.

Model state, gradients and compressed gradients are flat float64 vectors
split into contiguous per-layer slices.  Block weights attach one positive
scalar to each layer and stand in for the block-diagonal SPD matrices used
by the weighted norms.  Everything here is immutable after construction and
all operations are pure functions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

__all__ = [
    "LayerShape",
    "LayeredVector",
    "BlockWeights",
    "norm_l1",
    "norm_l2_sq",
    "weighted_norm_sq",
    "inner",
    "trace_block",
]


@dataclass(frozen=True)
class LayerShape:
    """Per-layer sizes of a model vector, in storage order."""

    dims: tuple[int, ...]

    def __post_init__(self) -> None:
        dims = tuple(int(d) for d in self.dims)
        if not dims:
            raise ValueError("a shape needs at least one layer")
        if any(d < 1 for d in dims):
            raise ValueError(f"layer sizes must be >= 1, got {dims}")
        object.__setattr__(self, "dims", dims)
        offsets = [0]
        for d in dims:
            offsets.append(offsets[-1] + d)
        object.__setattr__(self, "_offsets", tuple(offsets))

    @property
    def num_layers(self) -> int:
        return len(self.dims)

    @property
    def total_dim(self) -> int:
        return self._offsets[-1]

    def slice_of(self, layer: int) -> slice:
        if not 0 <= layer < self.num_layers:
            raise IndexError(f"layer {layer} out of range for {self.num_layers} layers")
        return slice(self._offsets[layer], self._offsets[layer + 1])


def _readonly(values, size: int | None = None) -> np.ndarray:
    arr = np.array(values, dtype=np.float64).reshape(-1)
    if size is not None and arr.size != size:
        raise ValueError(f"expected {size} values, got {arr.size}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class LayeredVector:
    """A flat float64 vector together with its layer layout."""

    shape: LayerShape
    values: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _readonly(self.values, self.shape.total_dim))

    @staticmethod
    def zeros(shape: LayerShape) -> "LayeredVector":
        return LayeredVector(shape, np.zeros(shape.total_dim))

    @staticmethod
    def from_layers(parts: Sequence[np.ndarray]) -> "LayeredVector":
        arrays = [np.asarray(p, dtype=np.float64).reshape(-1) for p in parts]
        shape = LayerShape(tuple(a.size for a in arrays))
        return LayeredVector(shape, np.concatenate(arrays))

    def layer(self, j: int) -> np.ndarray:
        """Read-only view of layer ``j``."""
        return self.values[self.shape.slice_of(j)]

    def layers(self) -> Iterator[np.ndarray]:
        for j in range(self.shape.num_layers):
            yield self.layer(j)

    def with_values(self, values) -> "LayeredVector":
        return LayeredVector(self.shape, values)


@dataclass(frozen=True)
class BlockWeights:
    """One positive scalar per layer; the diagonal of a block-diagonal SPD matrix."""

    shape: LayerShape
    per_layer: np.ndarray

    def __post_init__(self) -> None:
        w = _readonly(self.per_layer, self.shape.num_layers)
        if not (w > 0).all():
            raise ValueError("block weights must be strictly positive")
        object.__setattr__(self, "per_layer", w)

    @staticmethod
    def identity(shape: LayerShape) -> "BlockWeights":
        return BlockWeights(shape, np.ones(shape.num_layers))

    @staticmethod
    def from_omegas(shape: LayerShape, omegas: Sequence[float]) -> "BlockWeights":
        """Weights 1 + omega_j from per-layer inflation constants."""
        om = np.asarray(omegas, dtype=np.float64)
        if om.size != shape.num_layers:
            raise ValueError("one inflation constant per layer required")
        if (om < 0).any():
            raise ValueError("inflation constants must be nonnegative")
        return BlockWeights(shape, 1.0 + om)

    @staticmethod
    def from_kept_counts(
        shape: LayerShape, master_counts: Sequence[int], worker_counts: Sequence[int]
    ) -> "BlockWeights":
        """Weights k_m * k_w / d_j**2 from per-layer kept-coordinate counts."""
        km = np.asarray(master_counts, dtype=np.float64)
        kw = np.asarray(worker_counts, dtype=np.float64)
        dims = np.asarray(shape.dims, dtype=np.float64)
        if km.size != shape.num_layers or kw.size != shape.num_layers:
            raise ValueError("one kept count per layer required on each side")
        if (km < 1).any() or (kw < 1).any() or (km > dims).any() or (kw > dims).any():
            raise ValueError("kept counts must lie in [1, layer size]")
        return BlockWeights(shape, km * kw / dims**2)

    def __mul__(self, other: "BlockWeights") -> "BlockWeights":
        if self.shape != other.shape:
            raise ValueError("block weights shapes differ")
        return BlockWeights(self.shape, self.per_layer * other.per_layer)

    def expand(self) -> np.ndarray:
        """Per-coordinate weights (length total_dim)."""
        return np.repeat(self.per_layer, self.shape.dims)

    @property
    def max_weight(self) -> float:
        return float(self.per_layer.max())

    @property
    def min_weight(self) -> float:
        return float(self.per_layer.min())


def _check_same_shape(x: LayeredVector, y) -> None:
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape.dims} vs {y.shape.dims}")


def norm_l1(x: LayeredVector) -> float:
    return float(np.sum(np.abs(x.values)))


def norm_l2_sq(x: LayeredVector) -> float:
    return float(np.dot(x.values, x.values))


def weighted_norm_sq(x: LayeredVector, weights: BlockWeights) -> float:
    """sum_j w_j * ||x^j||_2^2 for block weights w."""
    _check_same_shape(x, weights)
    total = 0.0
    for j, w in enumerate(weights.per_layer):
        part = x.layer(j)
        total += float(w) * float(np.dot(part, part))
    return total


def inner(x: LayeredVector, y: LayeredVector) -> float:
    _check_same_shape(x, y)
    return float(np.dot(x.values, y.values))


def trace_block(weights: BlockWeights, weighted_by_dim: bool) -> float:
    """Trace of the induced diagonal matrix, under two conventions.

    ``weighted_by_dim=True`` counts each layer's scalar with multiplicity
    d_j (the d x d matrix trace); ``False`` sums one term per layer block.
    Both are exposed because the two conventions genuinely differ and
    downstream checks need each of them.
    """
    if weighted_by_dim:
        return float(np.dot(weights.per_layer, np.asarray(weights.shape.dims, dtype=np.float64)))
    return float(np.sum(weights.per_layer))
