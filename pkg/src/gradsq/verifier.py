"""Statistical verification of the compression framework's guarantees.

Each check estimates one identity or inequality by exact enumeration on
small dimensions or by Monte Carlo sampling, and returns a self-contained
pass/fail report.  Tolerance conventions: deterministic identities at
relative 1e-12, one-sided Monte Carlo bounds at 3 standard errors,
two-sided equalities at 4 standard errors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace as dc_replace
from itertools import combinations
from typing import Callable, Sequence

import numpy as np

from . import backends
from .compressors import (
    ApplicationMode,
    CompressorSpec,
    ENTIRE_MODEL,
    LAYERWISE,
    RANDOMIZED_KINDS,
    apply_batch,
    declared_omega,
    kept_count,
    per_layer_omegas,
)
from .layered import BlockWeights, LayeredVector, LayerShape, norm_l1, norm_l2_sq, weighted_norm_sq
from .problems import NoiseModel, ProblemSpec, _grad_array, _local_grad_array, stochastic_gradient_batch
from .rng import DATA_SIDE, GRADIENT_SIDE, MASTER_SIDE, WORKER_SIDE, RngStream, derive_seed
from .simulator import NonFiniteError, TrainConfig, run

__all__ = [
    "VerificationReport",
    "VerifySettings",
    "GrowthEstimate",
    "DescentCharacterization",
    "RateFit",
    "make_corpus",
    "estimate_omega",
    "verify_lemma1",
    "verify_lemma2",
    "verify_lemma2_unbiased",
    "verify_lemma2_random_k",
    "verify_lemma2_layerwise_random_k",
    "verify_lemma2_sign",
    "verify_lemma3",
    "estimate_growth",
    "growth_report",
    "verify_trace_comparison",
    "verify_trace_comparison_random",
    "fit_rate",
    "stability_threshold",
    "default_suite",
]

_REL = 1e-12  # deterministic-identity tolerance


@dataclass(frozen=True)
class VerificationReport:
    """Outcome of one check; re-runnable from (name, seed, n_samples)."""

    name: str
    passed: bool
    estimates: tuple[float, ...]
    targets: tuple[float, ...]
    stderr: float
    rule: str
    n_samples: int
    seed: int

    def summary_line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        est = ", ".join(f"{v:.6g}" for v in self.estimates)
        tgt = ", ".join(f"{v:.6g}" for v in self.targets)
        return f"{status} {self.name}: estimate [{est}] target [{tgt}] se {self.stderr:.3g} ({self.rule})"


@dataclass(frozen=True)
class VerifySettings:
    """Parameters of the default check suite."""

    seed: int = 20240809
    n_samples: int = 100_000
    corpus_size: int = 50
    dims: tuple[int, ...] = (3, 5)


@dataclass(frozen=True)
class GrowthEstimate:
    """Empirical envelope E||g||_A^2 <= rho * ||grad||_A^2 + sigma_sq over the probes."""

    rho_hat: float
    sigma_sq_hat: float
    probes: tuple[LayeredVector, ...]


@dataclass(frozen=True)
class DescentCharacterization:
    """Exponent and norm of the inner-product lower bound for an operator pair."""

    alpha: float
    norm_kind: str  # "l2" | "l1" | "weighted" | "scaled_l2"
    residual_bound: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha <= 2.0:
            raise ValueError("alpha must lie in (0, 2]")
        if self.norm_kind not in ("l2", "l1", "weighted", "scaled_l2"):
            raise ValueError(f"unknown norm kind {self.norm_kind!r}")


@dataclass(frozen=True)
class RateFit:
    """Cesaro gradient averages across step budgets and their fitted decay."""

    budgets: tuple[int, ...]
    averages: tuple[float, ...]
    beta: float
    consistent: bool
    alpha: float
    norm_kind: str
    flagged: tuple[str, ...]
    seed: int


def _mean_se(stats: np.ndarray) -> tuple[float, float]:
    n = stats.size
    mean = float(np.mean(stats))
    if n < 2:
        return mean, 0.0
    return mean, float(np.std(stats, ddof=1) / math.sqrt(n))


def _is_randomized(spec: CompressorSpec, mode: ApplicationMode) -> bool:
    if spec.kind in RANDOMIZED_KINDS:
        return True
    if mode.per_layer_overrides:
        return any(s.kind in RANDOMIZED_KINDS for _, s in mode.per_layer_overrides)
    return False


def _composed_rows(
    worker_rows: Sequence[np.ndarray],
    worker_spec: CompressorSpec,
    worker_mode: ApplicationMode,
    master_spec: CompressorSpec,
    master_mode: ApplicationMode,
    shape: LayerShape,
    seed: int,
) -> np.ndarray:
    """Row-wise Q_M(mean_i Q_W(rows_i)) with draw t on substream t."""
    acc = np.zeros_like(worker_rows[0])
    for i, rows in enumerate(worker_rows):
        ws = RngStream(seed, worker=i, side=WORKER_SIDE)
        acc += apply_batch(worker_spec, worker_mode, shape, rows, ws)
    acc /= len(worker_rows)
    ms = RngStream(seed, worker=0, side=MASTER_SIDE)
    return apply_batch(master_spec, master_mode, shape, acc, ms)


def make_corpus(shape: LayerShape, count: int, seed: int) -> list[LayeredVector]:
    """Deterministic mixed-scale test vectors (never the zero vector)."""
    d = shape.total_dim
    out: list[LayeredVector] = []
    for i in range(count):
        stream = RngStream(seed, worker=i, side=DATA_SIDE)
        kind = i % 5
        g = stream.gaussians(d)
        if kind == 0:
            vals = g
        elif kind == 1:
            scale = 10.0 ** (4.0 * stream.uniforms(1)[0] - 2.0)
            vals = scale * g
        elif kind == 2:
            mask = stream.uniforms(d) < 0.6
            vals = np.where(mask, 0.0, g)
        elif kind == 3:
            vals = np.where(stream.uniforms(d) < 0.5, -1.0, 1.0)
        else:
            vals = 1e-3 * g
            vals[i % d] = 5.0
        if not np.any(vals):
            vals[0] = 1.0
        out.append(LayeredVector(shape, vals))
    return out


# ---------------------------------------------------------------------------
# Operator norm-inflation (energy) checks
# ---------------------------------------------------------------------------


def estimate_omega(
    spec: CompressorSpec,
    mode: ApplicationMode,
    corpus: Sequence[LayeredVector],
    n_samples: int,
    seed: int,
    name: str | None = None,
) -> VerificationReport:
    """Empirical inflation max_x E||Q(x)||^2 / ||x||^2 - 1, vs the declared constant.

    Deterministic operators are evaluated exactly (one application, zero
    standard error); randomized ones by Monte Carlo with n_samples draws.
    Zero vectors in the corpus are skipped.
    """
    if n_samples < 1000:
        raise ValueError("need at least 1e3 samples")
    if not corpus:
        raise ValueError("empty corpus")
    shape = corpus[0].shape
    omega = declared_omega(spec, mode, shape)
    randomized = _is_randomized(spec, mode)
    worst_ratio = -np.inf
    worst_se = 0.0
    ok = True
    used = 0
    for i, x in enumerate(corpus):
        base = norm_l2_sq(x)
        if base == 0.0:
            continue  # skipped with note: zero vectors carry no energy ratio
        used += 1
        draws = n_samples if randomized else 1
        rows = np.tile(x.values, (draws, 1))
        out = apply_batch(spec, mode, shape, rows, RngStream(derive_seed(seed, i), side=WORKER_SIDE))
        stats = np.einsum("ij,ij->i", out, out)
        mean, se = _mean_se(stats)
        ratio = mean / base - 1.0
        if ratio > worst_ratio:
            worst_ratio, worst_se = ratio, se / base
        if omega is not None:
            bound = (1.0 + omega) * base
            if mean > bound + 3.0 * se + _REL * abs(bound):
                ok = False
    if used == 0:
        raise ValueError("corpus contained only zero vectors")
    if omega is None:
        rule = "estimate only (no declared inflation constant)"
        passed = True
    else:
        rule = "for all x: mean ||Q(x)||^2 <= (1+omega)*||x||^2 + 3*se"
        passed = ok
    return VerificationReport(
        name=name or f"omega.{spec.kind}",
        passed=passed,
        estimates=(float(worst_ratio),),
        targets=(float(omega) if omega is not None else float("nan"),),
        stderr=float(worst_se),
        rule=rule,
        n_samples=n_samples if randomized else 1,
        seed=seed,
    )


def verify_lemma1(
    layer_specs: Sequence[CompressorSpec],
    x: LayeredVector,
    n_samples: int,
    seed: int,
    name: str = "lemma1",
) -> VerificationReport:
    """Layer-wise energy bound: E||Q(x)||^2 <= sum_j (1+omega_j)||x^j||^2 <= max_j (1+omega_j)||x||^2."""
    shape = x.shape
    if len(layer_specs) != shape.num_layers:
        raise ValueError("one spec per layer required")
    omegas = []
    for spec, dim in zip(layer_specs, shape.dims):
        om = spec.omega_for(dim)
        if om is None:
            raise ValueError(f"{spec.kind} has no declared inflation constant")
        omegas.append(om)
    mode = ApplicationMode("layerwise", per_layer_overrides={j: s for j, s in enumerate(layer_specs)})
    randomized = _is_randomized(layer_specs[0], mode)
    draws = n_samples if randomized else 1
    rows = np.tile(x.values, (draws, 1))
    out = apply_batch(layer_specs[0], mode, shape, rows, RngStream(seed, side=WORKER_SIDE))
    stats = np.einsum("ij,ij->i", out, out)
    mean, se = _mean_se(stats)
    middle = sum((1.0 + om) * float(np.dot(x.layer(j), x.layer(j))) for j, om in enumerate(omegas))
    right = max(1.0 + om for om in omegas) * norm_l2_sq(x)
    passed = mean <= middle + 3.0 * se + _REL * abs(middle) and middle <= right * (1.0 + _REL)
    return VerificationReport(
        name=name,
        passed=passed,
        estimates=(mean, middle, right),
        targets=(middle, right, right),
        stderr=se,
        rule="mean <= per-layer bound + 3*se and per-layer bound <= worst-layer bound",
        n_samples=draws,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Inner-product (descent direction) checks
# ---------------------------------------------------------------------------


def verify_lemma2_unbiased(
    worker_spec: CompressorSpec,
    worker_mode: ApplicationMode,
    master_spec: CompressorSpec,
    master_mode: ApplicationMode,
    grad: LayeredVector,
    n_workers: int,
    n_samples: int,
    seed: int,
    name: str = "lemma2.i",
) -> VerificationReport:
    """Unbiased pair: E[g~^T grad] equals ||grad||^2 (two-sided, 4 se)."""
    rows = [np.tile(grad.values, (n_samples, 1)) for _ in range(n_workers)]
    out = _composed_rows(rows, worker_spec, worker_mode, master_spec, master_mode, grad.shape, seed)
    stats = out @ grad.values
    mean, se = _mean_se(stats)
    target = norm_l2_sq(grad)
    passed = abs(mean - target) <= 4.0 * se + _REL * abs(target)
    return VerificationReport(
        name=name,
        passed=passed,
        estimates=(mean,),
        targets=(target,),
        stderr=se,
        rule="|mean - ||grad||^2| <= 4*se",
        n_samples=n_samples,
        seed=seed,
    )


def _enumerate_bidirectional_inner(g: np.ndarray, kept_w: int, kept_m: int) -> float:
    """Exact E[g~^T g] for one worker under unscaled random-k both sides."""
    d = g.size
    gsq = g * g
    total = 0.0
    count = 0
    for sw in combinations(range(d), kept_w):
        sw_set = set(sw)
        for sm in combinations(range(d), kept_m):
            total += sum(gsq[i] for i in sm if i in sw_set)
            count += 1
    return total / count


def _ratio_for_count(kept: int, dim: int) -> float:
    ratio = kept / dim
    if kept_count(ratio, dim) != kept:
        raise ValueError(f"cannot express kept count {kept} of {dim} as a ratio")
    return ratio


def verify_lemma2_random_k(
    grad: LayeredVector,
    kept_w: int,
    kept_m: int,
    exhaustive: bool = True,
    n_samples: int = 100_000,
    n_workers: int = 1,
    seed: int = 0,
    name: str = "lemma2.ii",
) -> VerificationReport:
    """Unscaled random-k pair: E[g~^T grad] = kept_w*kept_m/d^2 * ||grad||^2.

    Exhaustive subset enumeration for small d (error above d=12); Monte
    Carlo over the production operators otherwise.
    """
    d = grad.shape.total_dim
    if not (1 <= kept_w <= d and 1 <= kept_m <= d):
        raise ValueError("kept counts must lie in [1, d]")
    target = kept_w * kept_m / d**2 * norm_l2_sq(grad)
    if exhaustive:
        if d > 12:
            raise ValueError("exhaustive enumeration is limited to d <= 12")
        estimate = _enumerate_bidirectional_inner(grad.values, kept_w, kept_m)
        passed = abs(estimate - target) <= _REL * max(abs(target), 1e-300)
        return VerificationReport(
            name=name,
            passed=passed,
            estimates=(estimate,),
            targets=(target,),
            stderr=0.0,
            rule="|enumeration - analytic| <= 1e-12 rel",
            n_samples=0,
            seed=seed,
        )
    wspec = CompressorSpec("random_k", ratio=_ratio_for_count(kept_w, d))
    mspec = CompressorSpec("random_k", ratio=_ratio_for_count(kept_m, d))
    rows = [np.tile(grad.values, (n_samples, 1)) for _ in range(n_workers)]
    out = _composed_rows(rows, wspec, ENTIRE_MODEL, mspec, ENTIRE_MODEL, grad.shape, seed)
    stats = out @ grad.values
    mean, se = _mean_se(stats)
    passed = abs(mean - target) <= 4.0 * se + _REL * abs(target)
    return VerificationReport(
        name=name,
        passed=passed,
        estimates=(mean,),
        targets=(target,),
        stderr=se,
        rule="|mean - analytic| <= 4*se",
        n_samples=n_samples,
        seed=seed,
    )


def verify_lemma2_layerwise_random_k(
    grad: LayeredVector,
    worker_counts: Sequence[int],
    master_counts: Sequence[int],
    n_workers: int,
    n_samples: int,
    seed: int,
    name: str = "lemma2.iii",
) -> VerificationReport:
    """Layer-wise unscaled random-k pair: E[g~^T grad] = ||grad||^2 weighted by k_m*k_w/d_j^2."""
    shape = grad.shape
    if len(worker_counts) != shape.num_layers or len(master_counts) != shape.num_layers:
        raise ValueError("one kept count per layer per side required")

    def layer_mode(counts: Sequence[int]) -> ApplicationMode:
        overrides = {
            j: CompressorSpec("random_k", ratio=_ratio_for_count(c, shape.dims[j]))
            for j, c in enumerate(counts)
        }
        return ApplicationMode("layerwise", per_layer_overrides=overrides)

    wmode = layer_mode(worker_counts)
    mmode = layer_mode(master_counts)
    base = CompressorSpec("random_k", ratio=1.0)
    rows = [np.tile(grad.values, (n_samples, 1)) for _ in range(n_workers)]
    out = _composed_rows(rows, base, wmode, base, mmode, shape, seed)
    stats = out @ grad.values
    mean, se = _mean_se(stats)
    weights = BlockWeights.from_kept_counts(shape, master_counts, worker_counts)
    target = weighted_norm_sq(grad, weights)
    passed = abs(mean - target) <= 4.0 * se + _REL * abs(target)
    return VerificationReport(
        name=name,
        passed=passed,
        estimates=(mean,),
        targets=(target,),
        stderr=se,
        rule="|mean - block-weighted norm| <= 4*se",
        n_samples=n_samples,
        seed=seed,
    )


def verify_lemma2_sign(
    problem: ProblemSpec,
    x: LayeredVector,
    batch_sizes: Sequence[int],
    n_samples: int,
    seed: int,
    name: str = "lemma2.iv",
) -> VerificationReport:
    """Majority-vote sign pipeline: the deficit ||grad||_1 - E[g~^T grad] shrinks with batch size.

    The deficit is estimated at each batch size; the check passes when it is
    non-increasing up to combined 3-se noise.
    """
    if len(batch_sizes) < 2:
        raise ValueError("need at least two batch sizes")
    grad = _grad_array(problem, x.values)
    l1 = float(np.sum(np.abs(grad)))
    n_workers = problem.n_workers
    deficits: list[float] = []
    ses: list[float] = []
    for b_index, bs in enumerate(batch_sizes):
        prob_b = dc_replace(problem, noise=NoiseModel.minibatch(int(bs)))
        sub_seed = derive_seed(seed, b_index)
        vote = np.zeros((n_samples, problem.shape.total_dim))
        for i in range(n_workers):
            rows = stochastic_gradient_batch(
                prob_b, x.values, i, RngStream(sub_seed, worker=i, side=GRADIENT_SIDE), n_samples
            )
            vote += np.sign(rows)
        stats = np.sign(vote) @ grad
        mean, se = _mean_se(stats)
        deficits.append(l1 - mean)
        ses.append(se)
    passed = all(
        deficits[i + 1] <= deficits[i] + 3.0 * (ses[i] + ses[i + 1]) for i in range(len(deficits) - 1)
    )
    return VerificationReport(
        name=name,
        passed=passed,
        estimates=tuple(deficits),
        targets=tuple(float(b) for b in batch_sizes),
        stderr=max(ses),
        rule="deficit ||grad||_1 - E[g~^T grad] non-increasing in batch size (3*se slack)",
        n_samples=n_samples,
        seed=seed,
    )


def verify_lemma2(case: str, **kwargs) -> VerificationReport:
    """Dispatch to one of the inner-product characterisations."""
    table: dict[str, Callable[..., VerificationReport]] = {
        "unbiased": verify_lemma2_unbiased,
        "random_k": verify_lemma2_random_k,
        "layerwise_random_k": verify_lemma2_layerwise_random_k,
        "sign": verify_lemma2_sign,
    }
    if case not in table:
        raise ValueError(f"unknown case {case!r}; expected one of {sorted(table)}")
    return table[case](**kwargs)


# ---------------------------------------------------------------------------
# Energy upper bound for the full pipeline
# ---------------------------------------------------------------------------


def verify_lemma3(
    worker_spec: CompressorSpec,
    worker_mode: ApplicationMode,
    master_spec: CompressorSpec,
    master_mode: ApplicationMode,
    grad: LayeredVector,
    variances,
    n_workers: int,
    n_samples: int,
    seed: int,
    name: str = "lemma3",
    rho: float = 1.0,
) -> VerificationReport:
    """E||g~||^2 <= rho*||grad||_A^2 + Trace(A Sigma) for Gaussian worker noise.

    A is the block-diagonal product of the two sides' (1+omega) weights;
    requires declared inflation constants on both sides.
    """
    shape = grad.shape
    weights = BlockWeights.from_omegas(shape, per_layer_omegas(master_spec, master_mode, shape)) * (
        BlockWeights.from_omegas(shape, per_layer_omegas(worker_spec, worker_mode, shape))
    )
    d = shape.total_dim
    var = np.atleast_1d(np.asarray(variances, dtype=np.float64))
    if var.size == 1:
        var = np.full(d, float(var[0]))
    if var.size != d or (var < 0).any():
        raise ValueError("variances must be nonnegative, scalar or one per coordinate")
    sigma_sq = float(np.dot(weights.expand(), var))
    std = np.sqrt(var)
    rows = []
    for i in range(n_workers):
        z = backends.gaussian_rows(RngStream(seed, worker=i, side=GRADIENT_SIDE).key, n_samples, d)
        rows.append(grad.values[None, :] + std[None, :] * z)
    out = _composed_rows(rows, worker_spec, worker_mode, master_spec, master_mode, shape, seed)
    stats = np.einsum("ij,ij->i", out, out)
    mean, se = _mean_se(stats)
    bound = rho * weighted_norm_sq(grad, weights) + sigma_sq
    passed = mean <= bound + 3.0 * se + _REL * abs(bound)
    return VerificationReport(
        name=name,
        passed=passed,
        estimates=(mean,),
        targets=(bound,),
        stderr=se,
        rule="mean ||g~||^2 <= rho*||grad||_A^2 + Trace(A Sigma) + 3*se",
        n_samples=n_samples,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Stochastic-gradient growth envelope
# ---------------------------------------------------------------------------


def estimate_growth(
    problem: ProblemSpec,
    weights: BlockWeights,
    probes: Sequence[LayeredVector],
    n_samples: int,
    seed: int,
    worker: int = 0,
) -> GrowthEstimate:
    """Least empirical envelope E||g||_A^2 <= rho*||grad||_A^2 + sigma_sq over the probes.

    rho is the least-squares slope of the probe cloud (clamped nonnegative);
    sigma_sq the smallest intercept making the bound valid at every probe.
    Probes with zero gradient and zero noise are skipped.
    """
    if len(probes) < 10:
        raise ValueError("need at least 10 probe points")
    aw = weights.expand()
    energies = []
    grad_energies = []
    kept_probes = []
    for i, probe in enumerate(probes):
        g_local = _local_grad_array(problem, probe.values, worker)
        g_energy = float(np.dot(aw, g_local * g_local))
        rows = stochastic_gradient_batch(
            problem, probe.values, worker, RngStream(derive_seed(seed, i), side=GRADIENT_SIDE), n_samples
        )
        stats = (rows * rows) @ aw
        mean, _ = _mean_se(stats)
        if g_energy == 0.0 and mean == 0.0:
            continue  # deterministic zero-gradient probe carries no constraint
        energies.append(mean)
        grad_energies.append(g_energy)
        kept_probes.append(probe)
    if not kept_probes:
        raise ValueError("all probes were degenerate")
    e = np.asarray(energies)
    g = np.asarray(grad_energies)
    var = float(np.var(g))
    rho = max(0.0, float(np.cov(g, e, bias=True)[0, 1] / var)) if var > 0 else 0.0
    sigma_sq = max(0.0, float(np.max(e - rho * g)))
    return GrowthEstimate(rho_hat=rho, sigma_sq_hat=sigma_sq, probes=tuple(kept_probes))


def growth_report(
    problem: ProblemSpec,
    weights: BlockWeights,
    probes: Sequence[LayeredVector],
    n_samples: int,
    seed: int,
    expected_sigma_sq: float,
    name: str = "growth",
) -> VerificationReport:
    """Check that the fitted envelope recovers (rho=1, sigma_sq=Trace(A Sigma))."""
    est = estimate_growth(problem, weights, probes, n_samples, seed)
    aw = weights.expand()
    # Standard errors of the probe estimates drive the recovery tolerance.
    ses = []
    gs = []
    for i, probe in enumerate(est.probes):
        rows = stochastic_gradient_batch(
            problem, probe.values, 0, RngStream(derive_seed(seed, i), side=GRADIENT_SIDE), n_samples
        )
        stats = (rows * rows) @ aw
        _, se = _mean_se(stats)
        ses.append(se)
        g_local = _local_grad_array(problem, probe.values, 0)
        gs.append(float(np.dot(aw, g_local * g_local)))
    max_se = max(ses)
    spread = float(np.std(gs))
    slope_tol = max(5.0 * max_se / spread if spread > 0 else 0.0, 1e-9)
    sigma_tol = 3.0 * max_se + abs(est.rho_hat - 1.0) * max(gs) + _REL * max(expected_sigma_sq, 1.0)
    passed = abs(est.rho_hat - 1.0) <= slope_tol and abs(est.sigma_sq_hat - expected_sigma_sq) <= sigma_tol
    return VerificationReport(
        name=name,
        passed=passed,
        estimates=(est.rho_hat, est.sigma_sq_hat),
        targets=(1.0, expected_sigma_sq),
        stderr=max_se,
        rule="envelope recovers rho=1 and sigma_sq=Trace(A Sigma) within se-based tolerance",
        n_samples=n_samples,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Layer-wise vs entire-model noise-proxy comparison
# ---------------------------------------------------------------------------


def verify_trace_comparison(
    omegas_worker: Sequence[float],
    omegas_master: Sequence[float],
    shape: LayerShape,
    name: str = "trace",
    seed: int = 0,
) -> VerificationReport:
    """Per-layer noise proxy vs its worst-layer bound, in both trace conventions."""
    ow = np.asarray(omegas_worker, dtype=np.float64)
    om = np.asarray(omegas_master, dtype=np.float64)
    if ow.size != shape.num_layers or om.size != shape.num_layers:
        raise ValueError("one inflation constant per layer per side required")
    prod = (1.0 + om) * (1.0 + ow)
    dims = np.asarray(shape.dims, dtype=np.float64)
    block_sum = float(np.sum(prod))
    block_bound = shape.num_layers * float(np.max(prod))
    dim_sum = float(np.dot(dims, prod))
    dim_bound = shape.total_dim * float(np.max(prod))
    passed = block_sum <= block_bound * (1.0 + _REL) and dim_sum <= dim_bound * (1.0 + _REL)
    return VerificationReport(
        name=name,
        passed=passed,
        estimates=(block_sum, dim_sum),
        targets=(block_bound, dim_bound),
        stderr=0.0,
        rule="sum_j (1+om_j)(1+ow_j) <= L*max_j and dim-weighted sum <= d*max_j",
        n_samples=0,
        seed=seed,
    )


def verify_trace_comparison_random(
    n_draws: int,
    seed: int,
    name: str = "trace.random_weights",
    max_layers: int = 6,
    max_dim: int = 16,
    max_omega: float = 8.0,
) -> VerificationReport:
    """Both trace inequalities over randomly drawn layer counts, sizes, and constants."""
    failures_block = failures_dim = 0
    for t in range(n_draws):
        stream = RngStream(derive_seed(seed, t), side=DATA_SIDE)
        u = stream.uniforms(2 * max_layers + 2)
        n_layers = 1 + int(u[0] * max_layers)
        dims = tuple(1 + int(u[1 + j] * max_dim) for j in range(n_layers))
        ow = max_omega * u[1 + max_layers : 1 + max_layers + n_layers]
        om_u = stream.gaussians(n_layers) ** 2  # skewed positive draws
        report = verify_trace_comparison(ow, om_u, LayerShape(dims), seed=seed)
        block_sum, dim_sum = report.estimates
        block_bound, dim_bound = report.targets
        if block_sum > block_bound * (1.0 + _REL):
            failures_block += 1
        if dim_sum > dim_bound * (1.0 + _REL):
            failures_dim += 1
    passed = failures_block == 0 and failures_dim == 0
    return VerificationReport(
        name=name,
        passed=passed,
        estimates=(float(failures_block), float(failures_dim)),
        targets=(0.0, 0.0),
        stderr=0.0,
        rule=f"zero violations of either trace inequality over {n_draws} random weight sets",
        n_samples=n_draws,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Step-budget rate fits
# ---------------------------------------------------------------------------


def stability_threshold(problem: ProblemSpec, norm_equiv: float = 1.0, rho: float = 1.0) -> float:
    """Largest stable constant step size 2 / (L * C * rho)."""
    return 2.0 / (problem.smoothness * norm_equiv * rho)


def fit_rate(
    config: TrainConfig,
    budgets: Sequence[int],
    replications: int,
    characterization: DescentCharacterization | None = None,
    batch_sizes: Sequence[int] | None = None,
    grad_cap: float | None = None,
) -> RateFit:
    """Cesaro gradient average per step budget (mean over seeds) and its decay fit.

    The schedule must scale with the budget (or be constant); optional
    per-budget minibatch sizes support coupling the batch to the budget.
    Divergent replicates are excluded and flagged; replicates whose gradient
    norm exceeds ``grad_cap`` are flagged but kept.
    """
    budgets = [int(k) for k in budgets]
    if len(budgets) < 3 or any(b <= a for a, b in zip(budgets, budgets[1:])):
        raise ValueError("need at least 3 strictly increasing budgets")
    if batch_sizes is not None and len(batch_sizes) != len(budgets):
        raise ValueError("one batch size per budget required")
    char = characterization or DescentCharacterization(alpha=2.0, norm_kind="l2")
    if char.norm_kind not in ("l2", "l1"):
        raise ValueError("rate fits support the l2 (alpha=2) and l1 (alpha=1) averages")
    flagged: list[str] = []
    averages: list[float] = []
    for b_index, budget in enumerate(budgets):
        cfg = dc_replace(config, steps=budget, metrics_every=budget)
        if batch_sizes is not None:
            cfg = dc_replace(
                cfg, problem=dc_replace(cfg.problem, noise=NoiseModel.minibatch(int(batch_sizes[b_index])))
            )
        values = []
        for r in range(replications):
            run_cfg = dc_replace(cfg, seed=derive_seed(config.seed, r))
            try:
                traj = run(run_cfg)
            except NonFiniteError as exc:
                flagged.append(f"K={budget} replicate={r} diverged at step {exc.step}")
                continue
            if grad_cap is not None and math.sqrt(traj.max_grad_sq) > grad_cap:
                flagged.append(f"K={budget} replicate={r} exceeded gradient cap {grad_cap}")
            values.append(traj.cesaro_grad_sq if char.norm_kind == "l2" else traj.cesaro_grad_l1)
        if not values:
            flagged.append(f"K={budget} had no surviving replicates")
            averages.append(float("nan"))
        else:
            averages.append(float(np.mean(values)))
    avg = np.asarray(averages)
    finite = np.isfinite(avg) & (avg > 0)
    if finite.all():
        slope = np.polyfit(np.log(np.asarray(budgets, dtype=np.float64)), np.log(avg), 1)[0]
        beta = float(-slope)
    else:
        beta = float("nan")
    consistent = bool(
        finite.all() and all(b <= a for a, b in zip(avg, avg[1:])) and np.isfinite(beta) and beta >= 0.3
    )
    return RateFit(
        budgets=tuple(budgets),
        averages=tuple(float(a) for a in avg),
        beta=beta,
        consistent=consistent,
        alpha=char.alpha,
        norm_kind=char.norm_kind,
        flagged=tuple(flagged),
        seed=config.seed,
    )


# ---------------------------------------------------------------------------
# Default check suite
# ---------------------------------------------------------------------------


def default_suite(settings: VerifySettings) -> list[tuple[str, Callable[[], VerificationReport]]]:
    """The shipped catalog of checks, ordered and individually seeded."""
    from .problems import logistic_problem, quadratic_problem, synthetic_two_class

    shape = LayerShape(settings.dims)
    n = settings.n_samples
    checks: list[tuple[str, Callable[[], VerificationReport]]] = []

    def add(name: str, builder: Callable[[int], VerificationReport]) -> None:
        check_seed = derive_seed(settings.seed, len(checks))
        checks.append((name, lambda s=check_seed: builder(s)))

    corpus = make_corpus(shape, settings.corpus_size, derive_seed(settings.seed, 9000))
    probe = corpus[0]
    grad_vec = LayeredVector(shape, RngStream(settings.seed, side=DATA_SIDE).gaussians(shape.total_dim) + 0.5)

    for kind, params in (
        ("identity", {}),
        ("random_k", {"ratio": 0.5}),
        ("random_k_unbiased", {"ratio": 0.5}),
        ("top_k", {"ratio": 0.5}),
        ("threshold_v", {"threshold": 0.25}),
    ):
        spec = CompressorSpec(kind, **params)
        add(
            f"assumption5.{kind}",
            lambda s, spec=spec, kind=kind: estimate_omega(
                spec, ENTIRE_MODEL, corpus, n, s, name=f"assumption5.{kind}"
            ),
        )

    add(
        "lemma1.identity",
        lambda s: verify_lemma1([CompressorSpec("identity")] * shape.num_layers, probe, n, s, name="lemma1.identity"),
    )
    add(
        "lemma1.random_k_unbiased",
        lambda s: verify_lemma1(
            [CompressorSpec("random_k_unbiased", ratio=r) for r in (0.5, 0.25)][: shape.num_layers]
            if shape.num_layers == 2
            else [CompressorSpec("random_k_unbiased", ratio=0.5)] * shape.num_layers,
            probe,
            n,
            s,
            name="lemma1.random_k_unbiased",
        ),
    )

    for label, wspec, mspec in (
        ("terngrad", CompressorSpec("terngrad"), CompressorSpec("terngrad")),
        ("qsgd", CompressorSpec("qsgd", levels=4), CompressorSpec("qsgd", levels=4)),
        (
            "random_k_unbiased",
            CompressorSpec("random_k_unbiased", ratio=0.5),
            CompressorSpec("random_k_unbiased", ratio=0.5),
        ),
    ):
        add(
            f"lemma2.i.{label}",
            lambda s, w=wspec, m=mspec, label=label: verify_lemma2_unbiased(
                w, LAYERWISE, m, LAYERWISE, grad_vec, 2, n, s, name=f"lemma2.i.{label}"
            ),
        )

    add(
        "lemma2.ii.exact_pair",
        lambda s: verify_lemma2_random_k(
            LayeredVector(LayerShape((2,)), [1.0, 2.0]), 1, 1, exhaustive=True, seed=s, name="lemma2.ii.exact_pair"
        ),
    )

    def randomized_pairs(s: int) -> VerificationReport:
        worst = 0.0
        for case in range(20):
            stream = RngStream(derive_seed(s, case), side=DATA_SIDE)
            d = 2 + int(stream.uniforms(1)[0] * 5)
            g = LayeredVector(LayerShape((d,)), stream.gaussians(d) + 0.25)
            kw = 1 + int(stream.uniforms(2)[0] * d)
            km = 1 + int(stream.uniforms(2)[1] * d)
            rep = verify_lemma2_random_k(g, min(kw, d), min(km, d), exhaustive=True, seed=s)
            rel = abs(rep.estimates[0] - rep.targets[0]) / max(abs(rep.targets[0]), 1e-300)
            worst = max(worst, rel)
        return VerificationReport(
            name="lemma2.ii.randomized",
            passed=worst <= _REL,
            estimates=(worst,),
            targets=(0.0,),
            stderr=0.0,
            rule="max relative enumeration error over 20 random cases <= 1e-12",
            n_samples=20,
            seed=s,
        )

    add("lemma2.ii.randomized", randomized_pairs)

    add(
        "lemma2.iii.layerwise_random_k",
        lambda s: verify_lemma2_layerwise_random_k(
            LayeredVector(LayerShape((2, 4)), RngStream(s, side=DATA_SIDE).gaussians(6) + 0.5),
            worker_counts=(1, 1),
            master_counts=(1, 2),
            n_workers=2,
            n_samples=n,
            seed=s,
            name="lemma2.iii.layerwise_random_k",
        ),
    )

    def sign_deficit(s: int) -> VerificationReport:
        data = synthetic_two_class(384, (3, 3), margin=1.5, seed=derive_seed(s, 1))
        problem = logistic_problem((3, 3), data, n_workers=3, l2=1e-3, noise=NoiseModel.minibatch(16))
        x = LayeredVector(problem.shape, np.zeros(problem.shape.total_dim))
        return verify_lemma2_sign(problem, x, (16, 256, 4096), 20_000, s, name="lemma2.iv.sign_minibatch")

    add("lemma2.iv.sign_minibatch", sign_deficit)

    lemma3_cases = (
        ("identity_noiseless", CompressorSpec("identity"), LAYERWISE, CompressorSpec("identity"), LAYERWISE, 0.0),
        (
            "random_k_unbiased_gaussian",
            CompressorSpec("random_k_unbiased", ratio=0.5),
            LAYERWISE,
            CompressorSpec("random_k_unbiased", ratio=0.5),
            LAYERWISE,
            0.25,
        ),
        (
            "biased_random_k_gaussian",
            CompressorSpec("random_k", ratio=0.5),
            ENTIRE_MODEL,
            CompressorSpec("random_k", ratio=0.5),
            ENTIRE_MODEL,
            0.25,
        ),
        (
            "topk_threshold_gaussian",
            CompressorSpec("top_k", ratio=0.5),
            LAYERWISE,
            CompressorSpec("threshold_v", threshold=0.1),
            ENTIRE_MODEL,
            0.04,
        ),
        (
            "mixed_layerwise_gaussian",
            CompressorSpec("random_k_unbiased", ratio=0.25),
            LAYERWISE,
            CompressorSpec("identity"),
            LAYERWISE,
            0.5,
        ),
    )
    for label, wspec, wmode, mspec, mmode, var in lemma3_cases:
        add(
            f"lemma3.{label}",
            lambda s, w=wspec, wm=wmode, m=mspec, mm=mmode, v=var, label=label: verify_lemma3(
                w, wm, m, mm, grad_vec, v, 3, n, s, name=f"lemma3.{label}"
            ),
        )

    add("trace.random_weights", lambda s: verify_trace_comparison_random(1000, s))

    def growth_check(s: int) -> VerificationReport:
        var = 0.25
        problem = quadratic_problem(
            settings.dims,
            hessian_diag=np.linspace(1.0, 3.0, shape.total_dim),
            noise=NoiseModel.gaussian(np.full(shape.total_dim, var)),
        )
        weights = BlockWeights.from_omegas(shape, np.linspace(0.0, 1.0, shape.num_layers))
        probes = [
            LayeredVector(shape, 2.0 * RngStream(derive_seed(s, 100 + i), side=DATA_SIDE).gaussians(shape.total_dim))
            for i in range(12)
        ]
        expected = float(np.dot(weights.expand(), np.full(shape.total_dim, var)))
        return growth_report(problem, weights, probes, n, s, expected, name="growth.gaussian_envelope")

    add("growth.gaussian_envelope", growth_check)
    return checks
