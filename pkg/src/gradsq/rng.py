"""Deterministic splittable random streams.

A stream is identified by (seed, worker, step, layer, side).  The identity
is hashed into a 64-bit key; draws are then counter-based (see backends),
so identical identities always yield identical sequences, distinct
identities yield unrelated ones, and no stream shares state with another.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import backends

__all__ = [
    "RngStream",
    "WORKER_SIDE",
    "MASTER_SIDE",
    "GRADIENT_SIDE",
    "DATA_SIDE",
    "mix64",
    "fold",
    "derive_seed",
]

MASK64 = 0xFFFFFFFFFFFFFFFF
_GAMMA = 0x9E3779B97F4A7C15

# Compression sides per the operator contract, plus internal roles for
# gradient noise and dataset synthesis so those draws never collide with
# compression draws.
WORKER_SIDE = 0
MASTER_SIDE = 1
GRADIENT_SIDE = 2
DATA_SIDE = 3


def mix64(z: int) -> int:
    """splitmix64 finaliser on python ints (mod 2**64)."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def fold(h: int, v: int) -> int:
    """Fold one identity component into a running key."""
    return mix64(((h + _GAMMA) & MASK64) ^ mix64(v + _GAMMA))


def derive_seed(seed: int, index: int) -> int:
    """Independent 64-bit seed for replicate ``index`` of a base seed."""
    return fold(mix64(seed), index)


@dataclass(frozen=True)
class RngStream:
    """One addressable stream of the run-wide random tape."""

    seed: int
    worker: int = 0
    step: int = 0
    layer: int = 0
    side: int = WORKER_SIDE

    def __post_init__(self) -> None:
        for field in ("worker", "step", "layer", "side"):
            if getattr(self, field) < 0:
                raise ValueError(f"stream {field} must be nonnegative")

    @property
    def key(self) -> int:
        k = mix64(self.seed)
        for v in (self.worker, self.step, self.layer, self.side):
            k = fold(k, v)
        return k

    def with_layer(self, layer: int) -> "RngStream":
        return replace(self, layer=layer)

    def uniforms(self, n: int) -> np.ndarray:
        """First ``n`` uniform [0,1) draws of substream 0."""
        return backends.uniform_rows(self.key, 1, n)[0]

    def gaussians(self, n: int) -> np.ndarray:
        return backends.gaussian_rows(self.key, 1, n)[0]

    def integers(self, n: int, upper: int) -> np.ndarray:
        """``n`` draws uniform on {0, ..., upper-1}."""
        if upper < 1:
            raise ValueError("upper must be >= 1")
        u = self.uniforms(n)
        return np.minimum((u * upper).astype(np.int64), upper - 1)
