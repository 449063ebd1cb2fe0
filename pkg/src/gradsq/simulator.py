"""Deterministic in-process simulation of bidirectional compressed SGD.

Each step: every worker draws a stochastic gradient and compresses it, the
master averages the compressed gradients in ascending worker order and
compresses the average, and all replicas apply the same update
x <- x - lr * g.  Every random draw is addressed by (seed, worker, step,
layer, side), so a trajectory is a pure function of its config and is
unchanged by worker-thread scheduling.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .compressors import ApplicationMode, CompressorSpec, apply_array, payload_bits
from .layered import LayeredVector
from .problems import ProblemSpec, _grad_array, _loss_array, stochastic_gradient_batch
from .rng import GRADIENT_SIDE, MASTER_SIDE, WORKER_SIDE, RngStream, derive_seed

__all__ = [
    "ScheduleSpec",
    "lr_at",
    "TrainConfig",
    "TrajectoryRecord",
    "Trajectory",
    "NonFiniteError",
    "run",
    "paired_run",
    "descent_gap_samples",
    "thread_cap",
]


@dataclass(frozen=True)
class ScheduleSpec:
    """Learning-rate schedule over a fixed step budget."""

    kind: str  # "constant" | "inv_sqrt_budget" | "piecewise_linear"
    eta: float | None = None
    c: float | None = None
    breakpoints: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self) -> None:
        if self.kind == "constant":
            if self.eta is None or self.eta < 0:
                raise ValueError("constant schedule requires eta >= 0")
        elif self.kind == "inv_sqrt_budget":
            if self.c is None or self.c < 0:
                raise ValueError("inv_sqrt_budget schedule requires c >= 0")
        elif self.kind == "piecewise_linear":
            bps = tuple((float(f), float(r)) for f, r in (self.breakpoints or ()))
            if len(bps) < 2:
                raise ValueError("piecewise_linear needs at least two breakpoints")
            fracs = [f for f, _ in bps]
            if any(not 0.0 <= f <= 1.0 for f in fracs) or any(b <= a for a, b in zip(fracs, fracs[1:])):
                raise ValueError("breakpoint fractions must be strictly increasing within [0, 1]")
            if any(r < 0 for _, r in bps):
                raise ValueError("rates must be nonnegative")
            object.__setattr__(self, "breakpoints", bps)
        else:
            raise ValueError(f"unknown schedule kind {self.kind!r}")


def lr_at(schedule: ScheduleSpec, k: int, total_steps: int) -> float:
    """Learning rate at step k of a total_steps budget."""
    if not 0 <= k <= total_steps:
        raise ValueError("step outside the budget")
    if schedule.kind == "constant":
        return float(schedule.eta)
    if schedule.kind == "inv_sqrt_budget":
        return float(schedule.c) / float(np.sqrt(total_steps))
    fracs = np.array([f for f, _ in schedule.breakpoints])
    rates = np.array([r for _, r in schedule.breakpoints])
    return float(np.interp(k / total_steps, fracs, rates))


@dataclass(frozen=True)
class TrainConfig:
    """Full specification of one simulated training run."""

    problem: ProblemSpec
    n_workers: int
    steps: int
    schedule: ScheduleSpec
    worker_spec: CompressorSpec
    worker_mode: ApplicationMode
    master_spec: CompressorSpec
    master_mode: ApplicationMode
    seed: int
    metrics_every: int = 10

    def __post_init__(self) -> None:
        if self.n_workers < 1 or self.steps < 1 or self.metrics_every < 1:
            raise ValueError("n_workers, steps and metrics_every must be >= 1")
        if self.problem.partitions is not None and len(self.problem.partitions) != self.n_workers:
            raise ValueError("problem was partitioned for a different worker count")


@dataclass(frozen=True)
class TrajectoryRecord:
    """State snapshot at step k, before the k-th update is applied.

    ``compress_err_sq`` and ``lr`` describe the round computed at this step;
    ``bits_up``/``bits_down`` are cumulative through this step's traffic.
    The final record (k = steps) reports a diagnostic round that is neither
    applied nor billed.
    """

    step: int
    loss: float
    grad_norm_sq: float
    compress_err_sq: float
    lr: float
    bits_up: int
    bits_down: int


@dataclass(frozen=True)
class Trajectory:
    records: tuple[TrajectoryRecord, ...]
    final_x: LayeredVector
    cesaro_grad_sq: float  # (1/K) sum over the K update steps of ||grad f(x_k)||^2
    cesaro_grad_l1: float  # same with the l1 norm (first power)
    min_grad_sq: float
    max_grad_sq: float
    total_bits_up: int
    total_bits_down: int
    mode_label: str
    seed: int


class NonFiniteError(RuntimeError):
    """A gradient, iterate or recorded loss left the finite range."""

    def __init__(self, step: int, trajectory: Trajectory):
        super().__init__(f"non-finite value encountered at step {step}")
        self.step = step
        self.trajectory = trajectory


def thread_cap(n_workers: int) -> int:
    """Worker threads for one round: min(n_workers, GRADSQ_THREADS or cpu count)."""
    raw = os.environ.get("GRADSQ_THREADS")
    if raw is None:
        cap = os.cpu_count() or 1
    else:
        try:
            cap = int(raw)
        except ValueError as exc:
            raise ValueError(f"GRADSQ_THREADS must be an integer, got {raw!r}") from exc
        if cap < 1:
            raise ValueError("GRADSQ_THREADS must be >= 1")
    return max(1, min(n_workers, cap))


def _mode_label(config: TrainConfig) -> str:
    if config.worker_mode.mode == config.master_mode.mode:
        return config.worker_mode.mode
    return "mixed"


def _master_round(config: TrainConfig, x: np.ndarray, step: int, pool, count_bits: bool):
    """One full communication round at state x.  Returns (g_tilde, bits_up, bits_down)."""
    prob = config.problem
    shape = prob.shape

    def one_worker(i: int) -> np.ndarray:
        g = stochastic_gradient_batch(
            prob, x, i, RngStream(config.seed, worker=i, step=step, side=GRADIENT_SIDE), 1
        )[0]
        return apply_array(
            config.worker_spec,
            config.worker_mode,
            shape,
            g,
            RngStream(config.seed, worker=i, step=step, side=WORKER_SIDE),
        )

    if pool is None:
        compressed = [one_worker(i) for i in range(config.n_workers)]
    else:
        compressed = list(pool.map(one_worker, range(config.n_workers)))

    acc = compressed[0].copy()
    for c in compressed[1:]:
        acc += c
    acc /= config.n_workers
    g_tilde = apply_array(
        config.master_spec,
        config.master_mode,
        shape,
        acc,
        RngStream(config.seed, worker=0, step=step, side=MASTER_SIDE),
    )
    bits_up = bits_down = 0
    if count_bits:
        bits_up = sum(payload_bits(config.worker_spec, c) for c in compressed)
        bits_down = payload_bits(config.master_spec, g_tilde)
    return g_tilde, bits_up, bits_down


def run(config: TrainConfig) -> Trajectory:
    """Execute the configured run; bitwise deterministic for fixed config."""
    prob = config.problem
    x = prob.initial_point.copy()
    total = config.steps
    threads = thread_cap(config.n_workers)
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    records: list[TrajectoryRecord] = []
    bits_up = bits_down = 0
    sum_gsq = sum_gl1 = 0.0
    min_gsq = np.inf
    max_gsq = 0.0
    seed = config.seed
    label = _mode_label(config)

    def partial() -> Trajectory:
        done = max(1, len_done)
        return Trajectory(
            records=tuple(records),
            final_x=LayeredVector(prob.shape, x),
            cesaro_grad_sq=sum_gsq / done,
            cesaro_grad_l1=sum_gl1 / done,
            min_grad_sq=float(min_gsq) if np.isfinite(min_gsq) else 0.0,
            max_grad_sq=max_gsq,
            total_bits_up=bits_up,
            total_bits_down=bits_down,
            mode_label=label,
            seed=seed,
        )

    len_done = 0
    try:
        for k in range(total):
            lr = lr_at(config.schedule, k, total)
            g_tilde, up, down = _master_round(config, x, k, pool, count_bits=True)
            grad = _grad_array(prob, x)
            gsq = float(np.dot(grad, grad))
            sum_gsq += gsq
            sum_gl1 += float(np.sum(np.abs(grad)))
            min_gsq = min(min_gsq, gsq)
            max_gsq = max(max_gsq, gsq)
            bits_up += up
            bits_down += down
            len_done = k + 1
            if k % config.metrics_every == 0:
                lossv = _loss_array(prob, x)
                err = g_tilde - grad
                records.append(
                    TrajectoryRecord(k, lossv, gsq, float(np.dot(err, err)), lr, bits_up, bits_down)
                )
                if not np.isfinite(lossv):
                    raise NonFiniteError(k, partial())
            x_next = x - lr * g_tilde
            if not (np.isfinite(gsq) and np.isfinite(g_tilde).all() and np.isfinite(x_next).all()):
                raise NonFiniteError(k, partial())
            x = x_next

        # Final snapshot at x_K with a diagnostic (unapplied, unbilled) round.
        g_tilde, _, _ = _master_round(config, x, total, pool, count_bits=False)
        grad = _grad_array(prob, x)
        gsq = float(np.dot(grad, grad))
        min_gsq = min(min_gsq, gsq)
        max_gsq = max(max_gsq, gsq)
        err = g_tilde - grad
        records.append(
            TrajectoryRecord(
                total,
                _loss_array(prob, x),
                gsq,
                float(np.dot(err, err)),
                lr_at(config.schedule, total, total),
                bits_up,
                bits_down,
            )
        )
    finally:
        if pool is not None:
            pool.shutdown()

    return Trajectory(
        records=tuple(records),
        final_x=LayeredVector(prob.shape, x),
        cesaro_grad_sq=sum_gsq / total,
        cesaro_grad_l1=sum_gl1 / total,
        min_grad_sq=float(min_gsq),
        max_grad_sq=float(max_gsq),
        total_bits_up=bits_up,
        total_bits_down=bits_down,
        mode_label=label,
        seed=seed,
    )


def paired_run(config: TrainConfig) -> tuple[Trajectory, Trajectory]:
    """Run the config under layerwise and entire-model application.

    Both runs share every stream identity, so stochastic-gradient draws are
    identical; only the compression mode differs.
    """
    if config.worker_mode.per_layer_overrides or config.master_mode.per_layer_overrides:
        raise ValueError("paired runs cannot carry per-layer overrides")
    out = []
    for mode_name in ("layerwise", "entire_model"):
        mode = ApplicationMode(mode_name)
        out.append(run(replace(config, worker_mode=mode, master_mode=mode)))
    return out[0], out[1]


def descent_gap_samples(
    config: TrainConfig,
    x: np.ndarray,
    replicates: int,
    step: int = 0,
) -> np.ndarray:
    """Per-replicate smoothness-descent slack at state x.

    Each replicate r reruns one communication round at x under an
    independently derived seed and evaluates
        t_r = lr*(g~^T grad) - (L*lr^2/2)*||g~||^2 - (f(x) - f(x - lr*g~)).
    The expected slack is <= 0 whenever the smoothness constant is valid,
    which is the per-step inequality chained by the convergence argument.
    """
    prob = config.problem
    lr = lr_at(config.schedule, step, config.steps)
    grad = _grad_array(prob, x)
    fx = _loss_array(prob, x)
    smooth = prob.smoothness
    out = np.empty(replicates)
    for r in range(replicates):
        cfg = replace(config, seed=derive_seed(config.seed, r))
        g_tilde, _, _ = _master_round(cfg, x, step, None, count_bits=False)
        inner = float(np.dot(g_tilde, grad))
        sq = float(np.dot(g_tilde, g_tilde))
        f_next = _loss_array(prob, x - lr * g_tilde)
        out[r] = lr * inner - 0.5 * smooth * lr * lr * sq - (fx - f_next)
    return out
