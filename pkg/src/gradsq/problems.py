"""Desk-scale optimisation problems and their gradient oracles.

Three problem families: separable quadratics (closed-form everything),
l2-regularised logistic regression on a two-class dataset, and a small
one-hidden-layer tanh network with hand-written backpropagation.  Dataset
problems split their samples into disjoint per-worker partitions; the
stochastic oracle is either a minibatch gradient over the worker's
partition or the exact local gradient plus diagonal Gaussian noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import backends
from .layered import LayeredVector, LayerShape
from .rng import DATA_SIDE, RngStream

__all__ = [
    "NoiseModel",
    "Dataset",
    "ProblemSpec",
    "quadratic_problem",
    "logistic_problem",
    "mlp_problem",
    "synthetic_two_class",
    "load_csv_dataset",
    "partition_indices",
    "loss",
    "full_gradient",
    "stochastic_gradient",
    "stochastic_gradient_batch",
]


def _frozen_array(values, dtype=np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class NoiseModel:
    """Stochastic-gradient noise: diagonal additive Gaussian or minibatch sampling."""

    kind: str  # "additive_gaussian" | "minibatch"
    variances: np.ndarray | None = None  # per-coordinate, additive_gaussian
    batch_size: int | None = None  # minibatch

    def __post_init__(self) -> None:
        if self.kind == "additive_gaussian":
            if self.variances is None:
                raise ValueError("additive_gaussian requires per-coordinate variances")
            var = _frozen_array(np.atleast_1d(np.asarray(self.variances, dtype=np.float64)))
            if (var < 0).any():
                raise ValueError("variances must be nonnegative")
            object.__setattr__(self, "variances", var)
            if self.batch_size is not None:
                raise ValueError("additive_gaussian takes no batch size")
        elif self.kind == "minibatch":
            if self.batch_size is None or int(self.batch_size) < 1:
                raise ValueError("minibatch requires batch_size >= 1")
            object.__setattr__(self, "batch_size", int(self.batch_size))
            if self.variances is not None:
                raise ValueError("minibatch takes no variances")
        else:
            raise ValueError(f"unknown noise kind {self.kind!r}")

    @staticmethod
    def gaussian(variances) -> "NoiseModel":
        return NoiseModel("additive_gaussian", variances=variances)

    @staticmethod
    def noiseless(dim: int = 1) -> "NoiseModel":
        return NoiseModel("additive_gaussian", variances=np.zeros(dim))

    @staticmethod
    def minibatch(batch_size: int) -> "NoiseModel":
        return NoiseModel("minibatch", batch_size=batch_size)


@dataclass(frozen=True)
class Dataset:
    """Numeric samples with +-1 labels."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        feats = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.float64).reshape(-1)
        if feats.ndim != 2 or feats.shape[0] != labels.size:
            raise ValueError("features must be (n_samples, n_features) matching labels")
        if not np.isin(labels, (-1.0, 1.0)).all():
            raise ValueError("labels must be +-1")
        object.__setattr__(self, "features", _frozen_array(feats))
        object.__setattr__(self, "labels", _frozen_array(labels))

    @property
    def n_samples(self) -> int:
        return self.labels.size


def partition_indices(n_samples: int, n_workers: int) -> tuple[np.ndarray, ...]:
    """Contiguous, disjoint, covering index sets; sizes differ by at most one."""
    if n_workers < 1:
        raise ValueError("need at least one worker")
    if n_samples < n_workers:
        raise ValueError("fewer samples than workers")
    bounds = np.linspace(0, n_samples, n_workers + 1).astype(np.int64)
    return tuple(_frozen_array(np.arange(bounds[i], bounds[i + 1]), dtype=np.int64) for i in range(n_workers))


@dataclass(frozen=True)
class ProblemSpec:
    """One optimisation problem plus its noise model and worker partitions."""

    kind: str  # "quadratic" | "logistic" | "mlp"
    shape: LayerShape
    noise: NoiseModel
    smoothness: float
    lower_bound: float | None
    initial_point: np.ndarray
    hessian_diag: np.ndarray | None = None
    linear: np.ndarray | None = None
    data: Dataset | None = None
    partitions: tuple[np.ndarray, ...] | None = None
    l2: float = 0.0
    hidden: int | None = None
    in_dim: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "initial_point", _frozen_array(self.initial_point))
        if self.initial_point.size != self.shape.total_dim:
            raise ValueError("initial point does not match the model shape")
        if self.noise.kind == "additive_gaussian" and self.noise.variances.size not in (1, self.shape.total_dim):
            raise ValueError("variances must be scalar or one per coordinate")
        if self.noise.kind == "minibatch" and self.data is None:
            raise ValueError("minibatch noise requires a dataset-backed problem")

    @property
    def n_workers(self) -> int:
        return 1 if self.partitions is None else len(self.partitions)

    def noise_std(self) -> np.ndarray:
        var = self.noise.variances
        if var.size == 1:
            var = np.full(self.shape.total_dim, float(var[0]))
        return np.sqrt(var)


def _expand(value, dim: int, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=np.float64))
    if arr.size == 1:
        arr = np.full(dim, float(arr[0]))
    if arr.size != dim:
        raise ValueError(f"{name} must be scalar or length {dim}")
    return arr


def quadratic_problem(
    dims: Sequence[int],
    hessian_diag,
    linear=0.0,
    x0=0.0,
    noise: NoiseModel | None = None,
) -> ProblemSpec:
    """f(x) = 0.5 x^T H x - b^T x with diagonal PSD H; every worker shares f."""
    shape = LayerShape(tuple(dims))
    d = shape.total_dim
    h = _expand(hessian_diag, d, "hessian_diag")
    b = _expand(linear, d, "linear")
    if (h < 0).any():
        raise ValueError("hessian diagonal must be nonnegative")
    if ((h == 0) & (b != 0)).any():
        raise ValueError("zero curvature with a nonzero linear term is unbounded below")
    pos = h > 0
    lower = float(-0.5 * np.sum(b[pos] ** 2 / h[pos]))
    return ProblemSpec(
        kind="quadratic",
        shape=shape,
        noise=noise if noise is not None else NoiseModel.noiseless(d),
        smoothness=float(h.max()),
        lower_bound=lower,
        initial_point=_expand(x0, d, "x0"),
        hessian_diag=_frozen_array(h),
        linear=_frozen_array(b),
    )


def logistic_problem(
    dims: Sequence[int],
    data: Dataset,
    n_workers: int = 1,
    l2: float = 1e-3,
    noise: NoiseModel | None = None,
    x0=0.0,
) -> ProblemSpec:
    """Mean logistic loss over the dataset plus (l2/2)||x||^2."""
    shape = LayerShape(tuple(dims))
    d = shape.total_dim
    if data.features.shape[1] != d:
        raise ValueError("feature count must match the model shape")
    if l2 < 0:
        raise ValueError("l2 must be nonnegative")
    gram_max = float(np.linalg.eigvalsh(data.features.T @ data.features).max())
    smooth = gram_max / (4.0 * data.n_samples) + l2
    return ProblemSpec(
        kind="logistic",
        shape=shape,
        noise=noise if noise is not None else NoiseModel.noiseless(d),
        smoothness=smooth,
        lower_bound=0.0,
        initial_point=_expand(x0, d, "x0"),
        data=data,
        partitions=partition_indices(data.n_samples, n_workers),
        l2=float(l2),
    )


def mlp_problem(
    in_dim: int,
    hidden: int,
    data: Dataset,
    n_workers: int = 1,
    noise: NoiseModel | None = None,
    init_seed: int = 0,
) -> ProblemSpec:
    """One-hidden-layer tanh network with a scalar logit output.

    Parameters are stored as four layers W1 (hidden x in), b1, w2, b2, which
    gives genuinely different layer sizes for mode comparisons.  Initial
    weights are small seeded Gaussians (the all-zero point is a saddle).
    """
    if in_dim < 1 or hidden < 1:
        raise ValueError("in_dim and hidden must be >= 1")
    if data.features.shape[1] != in_dim:
        raise ValueError("feature count must match in_dim")
    shape = LayerShape((in_dim * hidden, hidden, hidden, 1))
    d = shape.total_dim
    init_stream = RngStream(init_seed, layer=1, side=DATA_SIDE)
    x0 = 0.5 / math.sqrt(in_dim) * init_stream.gaussians(d)
    prob = ProblemSpec(
        kind="mlp",
        shape=shape,
        noise=noise if noise is not None else NoiseModel.noiseless(d),
        smoothness=1.0,  # placeholder, replaced by the probe estimate below
        lower_bound=0.0,
        initial_point=x0,
        data=data,
        partitions=partition_indices(data.n_samples, n_workers),
        hidden=hidden,
        in_dim=in_dim,
    )
    object.__setattr__(prob, "smoothness", _estimate_mlp_smoothness(prob, init_seed))
    return prob


def _estimate_mlp_smoothness(prob: ProblemSpec, seed: int, pairs: int = 32) -> float:
    """Probe estimate of the gradient Lipschitz constant near the init scale."""
    d = prob.shape.total_dim
    stream = RngStream(seed, layer=2, side=DATA_SIDE)
    pts = backends.gaussian_rows(stream.key, 2 * pairs, d) * 0.5
    best = 0.0
    for i in range(pairs):
        a, b = pts[2 * i], pts[2 * i + 1]
        ga = _grad_array(prob, a)
        gb = _grad_array(prob, b)
        gap = float(np.linalg.norm(a - b))
        if gap > 0:
            best = max(best, float(np.linalg.norm(ga - gb)) / gap)
    return 1.25 * best if best > 0 else 1.0


# ---------------------------------------------------------------------------
# Synthetic data and CSV ingestion
# ---------------------------------------------------------------------------


def synthetic_two_class(
    n_samples: int,
    dims: Sequence[int],
    feature_scales: Sequence[float] | None = None,
    margin: float = 1.5,
    seed: int = 0,
) -> Dataset:
    """Two Gaussian blobs at +-margin/sqrt(d), feature blocks rescaled per layer."""
    shape = LayerShape(tuple(dims))
    d = shape.total_dim
    stream = RngStream(seed, side=DATA_SIDE)
    labels = np.where(stream.uniforms(n_samples) < 0.5, -1.0, 1.0)
    z = backends.gaussian_rows(RngStream(seed, layer=1, side=DATA_SIDE).key, n_samples, d)
    feats = labels[:, None] * (margin / math.sqrt(d)) + z
    if feature_scales is not None:
        scales = np.asarray(feature_scales, dtype=np.float64)
        if scales.size != shape.num_layers or (scales <= 0).any():
            raise ValueError("one positive scale per layer required")
        feats = feats * np.repeat(scales, shape.dims)[None, :]
    return Dataset(feats, labels)


def load_csv_dataset(path: str) -> Dataset:
    """Numeric CSV; rows are samples, last column the +-1 label."""
    try:
        table = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except Exception as exc:
        raise ValueError(f"cannot read dataset {path!r}: {exc}") from exc
    if table.shape[1] < 2:
        raise ValueError("dataset needs at least one feature column and a label column")
    return Dataset(table[:, :-1], table[:, -1])


# ---------------------------------------------------------------------------
# Losses and gradients (array core, LayeredVector wrappers)
# ---------------------------------------------------------------------------


def _sigmoid(t: np.ndarray) -> np.ndarray:
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _mlp_unpack(prob: ProblemSpec, x: np.ndarray):
    h, din = prob.hidden, prob.in_dim
    s = prob.shape
    w1 = x[s.slice_of(0)].reshape(h, din)
    b1 = x[s.slice_of(1)]
    w2 = x[s.slice_of(2)]
    b2 = x[s.slice_of(3)]
    return w1, b1, w2, b2


def _mlp_forward(prob: ProblemSpec, x: np.ndarray, feats: np.ndarray):
    w1, b1, w2, b2 = _mlp_unpack(prob, x)
    hidden = np.tanh(feats @ w1.T + b1)
    logits = hidden @ w2 + b2[0]
    return hidden, logits


def _loss_on(prob: ProblemSpec, x: np.ndarray, feats: np.ndarray, labels: np.ndarray) -> float:
    if prob.kind == "logistic":
        margins = labels * (feats @ x)
        return float(np.mean(np.logaddexp(0.0, -margins)) + 0.5 * prob.l2 * np.dot(x, x))
    _, logits = _mlp_forward(prob, x, feats)
    return float(np.mean(np.logaddexp(0.0, -labels * logits)))


def _grad_on(prob: ProblemSpec, x: np.ndarray, feats: np.ndarray, labels: np.ndarray) -> np.ndarray:
    n = labels.size
    if prob.kind == "logistic":
        margins = labels * (feats @ x)
        coef = -labels * _sigmoid(-margins) / n
        return feats.T @ coef + prob.l2 * x
    w1, b1, w2, b2 = _mlp_unpack(prob, x)
    hidden, logits = _mlp_forward(prob, x, feats)
    dlogit = -labels * _sigmoid(-labels * logits) / n
    g_w2 = hidden.T @ dlogit
    g_b2 = np.sum(dlogit)
    dhidden = dlogit[:, None] * w2[None, :] * (1.0 - hidden**2)
    g_w1 = dhidden.T @ feats
    g_b1 = dhidden.sum(axis=0)
    return np.concatenate([g_w1.reshape(-1), g_b1, g_w2, [g_b2]])


def _loss_array(prob: ProblemSpec, x: np.ndarray) -> float:
    if prob.kind == "quadratic":
        return float(0.5 * np.dot(prob.hessian_diag * x, x) - np.dot(prob.linear, x))
    return _loss_on(prob, x, prob.data.features, prob.data.labels)


def _grad_array(prob: ProblemSpec, x: np.ndarray) -> np.ndarray:
    if prob.kind == "quadratic":
        return prob.hessian_diag * x - prob.linear
    return _grad_on(prob, x, prob.data.features, prob.data.labels)


def _local_grad_array(prob: ProblemSpec, x: np.ndarray, worker: int) -> np.ndarray:
    if prob.kind == "quadratic":
        return _grad_array(prob, x)
    part = prob.partitions[worker]
    return _grad_on(prob, x, prob.data.features[part], prob.data.labels[part])


def loss(prob: ProblemSpec, x: LayeredVector) -> float:
    return _loss_array(prob, x.values)


def full_gradient(prob: ProblemSpec, x: LayeredVector) -> LayeredVector:
    """Exact gradient of f at x (diagnostic oracle)."""
    return x.with_values(_grad_array(prob, x.values))


def stochastic_gradient(prob: ProblemSpec, x: LayeredVector, worker: int, stream: RngStream) -> LayeredVector:
    """One unbiased draw of worker ``worker``'s gradient oracle at x."""
    return x.with_values(stochastic_gradient_batch(prob, x.values, worker, stream, 1)[0])


def stochastic_gradient_batch(
    prob: ProblemSpec, x: np.ndarray, worker: int, stream: RngStream, n_draws: int
) -> np.ndarray:
    """(n_draws, d) independent oracle draws; draw t uses substream t of ``stream``."""
    if worker < 0 or (prob.partitions is not None and worker >= len(prob.partitions)):
        raise ValueError(f"worker {worker} out of range")
    x = np.asarray(x, dtype=np.float64)
    d = prob.shape.total_dim
    if prob.noise.kind == "additive_gaussian":
        base = _local_grad_array(prob, x, worker)
        std = prob.noise_std()
        if not std.any():
            return np.tile(base, (n_draws, 1))
        z = backends.gaussian_rows(stream.key, n_draws, d)
        return base[None, :] + std[None, :] * z
    return _minibatch_rows(prob, x, worker, stream, n_draws)


def _minibatch_rows(prob: ProblemSpec, x: np.ndarray, worker: int, stream: RngStream, n_draws: int) -> np.ndarray:
    part = prob.partitions[worker]
    if part.size == 0:
        raise ValueError(f"worker {worker} has an empty partition")
    bs = prob.noise.batch_size
    if bs == part.size:
        # Degenerate full batch: the exact local gradient, no sampling.
        return np.tile(_local_grad_array(prob, x, worker), (n_draws, 1))
    feats = prob.data.features[part]
    labels = prob.data.labels[part]
    if prob.kind == "mlp":
        out = np.empty((n_draws, prob.shape.total_dim))
        for t in range(n_draws):
            u = backends.uniform_rows(stream.key, 1, bs, row_offset=t)[0]
            idx = np.minimum((u * part.size).astype(np.int64), part.size - 1)
            out[t] = _grad_on(prob, x, feats[idx], labels[idx])
        return out
    # Logistic: turn each draw into a sample-weight row and batch the matmul.
    margins_all = labels * (feats @ x)
    coef_all = -labels * _sigmoid(-margins_all)  # per-sample gradient weight
    out = np.empty((n_draws, prob.shape.total_dim))
    chunk = max(1, min(n_draws, int(4_000_000 // bs)))
    for start in range(0, n_draws, chunk):
        count = min(chunk, n_draws - start)
        u = backends.uniform_rows(stream.key, count, bs, row_offset=start)
        idx = np.minimum((u * part.size).astype(np.int64), part.size - 1)
        weights = np.zeros((count, part.size))
        np.add.at(weights, (np.repeat(np.arange(count), bs), idx.reshape(-1)), coef_all[idx.reshape(-1)])
        out[start : start + count] = (weights @ feats) / bs + prob.l2 * x[None, :]
    return out
