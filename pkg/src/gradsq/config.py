"""Flat sectioned key-value run configuration.

Sections: [problem], [workers], [compressor.worker], [compressor.master],
[schedule], [run], [verify].  Every key is schema-checked; unknown sections
or keys, and keys that do not apply to the declared kind, are errors.
``emit_config`` re-serialises a parsed config in canonical order with
verbatim values, so emit(parse(.)) is byte-stable.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass

import numpy as np

from .compressors import ApplicationMode, CompressorSpec
from .problems import NoiseModel, load_csv_dataset, logistic_problem, mlp_problem, quadratic_problem, synthetic_two_class
from .simulator import ScheduleSpec, TrainConfig
from .verifier import VerifySettings

__all__ = ["ConfigError", "parse_config", "load_config_file", "emit_config", "build_train_config", "build_verify_settings"]


class ConfigError(ValueError):
    """Malformed, unknown, or inconsistent configuration input."""


_SECTIONS: dict[str, tuple[str, ...]] = {
    "problem": (
        "kind",
        "layers",
        "hessian",
        "linear",
        "x0",
        "data",
        "samples",
        "feature_scales",
        "margin",
        "data_seed",
        "l2",
        "hidden",
        "in_dim",
        "noise",
        "sigma_sq",
        "batch_size",
    ),
    "workers": ("n",),
    "compressor.worker": ("kind", "ratio", "threshold", "fraction", "levels", "mode"),
    "compressor.master": ("kind", "ratio", "threshold", "fraction", "levels", "mode"),
    "schedule": ("kind", "eta", "c", "breakpoints"),
    "run": ("steps", "seed", "metrics_every", "success_grad_sq"),
    "verify": ("seed", "n_samples", "corpus", "layers"),
}

_PROBLEM_KIND_KEYS = {
    "quadratic": {"kind", "layers", "hessian", "linear", "x0", "noise", "sigma_sq"},
    "logistic": {
        "kind",
        "layers",
        "x0",
        "data",
        "samples",
        "feature_scales",
        "margin",
        "data_seed",
        "l2",
        "noise",
        "sigma_sq",
        "batch_size",
    },
    "mlp": {"kind", "data", "samples", "margin", "data_seed", "hidden", "in_dim", "noise", "sigma_sq", "batch_size"},
}


def parse_config(text: str) -> dict[str, dict[str, str]]:
    """Parse and schema-check; returns {section: {key: raw value}}."""
    parser = configparser.ConfigParser(
        interpolation=None, strict=True, delimiters=("=",), inline_comment_prefixes=None
    )
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    out: dict[str, dict[str, str]] = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        allowed = _SECTIONS[section]
        body: dict[str, str] = {}
        for key, value in parser.items(section):
            if key not in allowed:
                raise ConfigError(f"unknown key '{key}' in section [{section}]")
            body[key] = value.strip()
        out[section] = body
    return out


def load_config_file(path: str) -> dict[str, dict[str, str]]:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    return parse_config(text)


def emit_config(parsed: dict[str, dict[str, str]]) -> str:
    """Canonical serialisation: schema section/key order, verbatim values."""
    buf = io.StringIO()
    first = True
    for section, keys in _SECTIONS.items():
        if section not in parsed:
            continue
        if not first:
            buf.write("\n")
        first = False
        buf.write(f"[{section}]\n")
        for key in keys:
            if key in parsed[section]:
                buf.write(f"{key} = {parsed[section][key]}\n")
    return buf.getvalue()


def _get(parsed, section, key, default=None, required=False):
    body = parsed.get(section, {})
    if key in body:
        return body[key]
    if required:
        raise ConfigError(f"missing required key '{key}' in section [{section}]")
    return default


def _parse_int(raw: str, where: str) -> int:
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"{where}: expected an integer, got {raw!r}") from exc


def _parse_float(raw: str, where: str) -> float:
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{where}: expected a number, got {raw!r}") from exc


def _parse_floats(raw: str, where: str) -> np.ndarray:
    try:
        return np.array([float(tok) for tok in raw.split(",") if tok.strip() != ""], dtype=np.float64)
    except ValueError as exc:
        raise ConfigError(f"{where}: expected a comma-separated number list, got {raw!r}") from exc


def _parse_ints(raw: str, where: str) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in raw.split(",") if tok.strip() != "")
    except ValueError as exc:
        raise ConfigError(f"{where}: expected a comma-separated integer list, got {raw!r}") from exc


def _parse_breakpoints(raw: str, where: str) -> tuple[tuple[float, float], ...]:
    points = []
    for tok in raw.split(","):
        tok = tok.strip()
        if not tok:
            continue
        if ":" not in tok:
            raise ConfigError(f"{where}: breakpoints are fraction:rate pairs, got {tok!r}")
        frac, rate = tok.split(":", 1)
        points.append((_parse_float(frac, where), _parse_float(rate, where)))
    return tuple(points)


def _scalar_or_list(raw: str | None, where: str, default: float = 0.0):
    if raw is None:
        return default
    values = _parse_floats(raw, where)
    return float(values[0]) if values.size == 1 else values


def _build_noise(parsed, dim_hint: int | None):
    kind = _get(parsed, "problem", "noise", default="none")
    if kind == "none":
        return None
    if kind == "gaussian":
        raw = _get(parsed, "problem", "sigma_sq", required=True)
        var = _parse_floats(raw, "[problem] sigma_sq")
        if (var < 0).any():
            raise ConfigError("[problem] sigma_sq must be nonnegative")
        if var.size == 1 and dim_hint is not None:
            var = np.full(dim_hint, float(var[0]))
        return NoiseModel.gaussian(var)
    if kind == "minibatch":
        bs = _parse_int(_get(parsed, "problem", "batch_size", required=True), "[problem] batch_size")
        return NoiseModel.minibatch(bs)
    raise ConfigError(f"[problem] noise must be none|gaussian|minibatch, got {kind!r}")


def _build_dataset(parsed, dims, kind: str):
    source = _get(parsed, "problem", "data", default="synthetic")
    if source == "synthetic":
        samples = _parse_int(_get(parsed, "problem", "samples", default="256"), "[problem] samples")
        margin = _parse_float(_get(parsed, "problem", "margin", default="1.5"), "[problem] margin")
        data_seed = _parse_int(_get(parsed, "problem", "data_seed", default="1"), "[problem] data_seed")
        scales_raw = _get(parsed, "problem", "feature_scales")
        scales = _parse_floats(scales_raw, "[problem] feature_scales") if scales_raw is not None else None
        try:
            return synthetic_two_class(samples, dims, feature_scales=scales, margin=margin, seed=data_seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    if source.startswith("csv:"):
        if kind == "logistic" and _get(parsed, "problem", "feature_scales") is not None:
            raise ConfigError("[problem] feature_scales applies to synthetic data only")
        try:
            return load_csv_dataset(source[4:])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    raise ConfigError(f"[problem] data must be 'synthetic' or 'csv:PATH', got {source!r}")


def _build_problem(parsed, n_workers: int):
    kind = _get(parsed, "problem", "kind", required=True)
    if kind not in _PROBLEM_KIND_KEYS:
        raise ConfigError(f"[problem] kind must be quadratic|logistic|mlp, got {kind!r}")
    allowed = _PROBLEM_KIND_KEYS[kind]
    for key in parsed.get("problem", {}):
        if key not in allowed:
            raise ConfigError(f"key '{key}' is not valid for problem kind '{kind}'")
    try:
        if kind == "quadratic":
            dims = _parse_ints(_get(parsed, "problem", "layers", required=True), "[problem] layers")
            dim = sum(dims)
            return quadratic_problem(
                dims,
                hessian_diag=_scalar_or_list(_get(parsed, "problem", "hessian", default="1"), "[problem] hessian"),
                linear=_scalar_or_list(_get(parsed, "problem", "linear"), "[problem] linear", default=0.0),
                x0=_scalar_or_list(_get(parsed, "problem", "x0"), "[problem] x0", default=0.0),
                noise=_build_noise(parsed, dim),
            )
        if kind == "logistic":
            dims = _parse_ints(_get(parsed, "problem", "layers", required=True), "[problem] layers")
            data = _build_dataset(parsed, dims, kind)
            return logistic_problem(
                dims,
                data,
                n_workers=n_workers,
                l2=_parse_float(_get(parsed, "problem", "l2", default="0.001"), "[problem] l2"),
                noise=_build_noise(parsed, sum(dims)),
                x0=_scalar_or_list(_get(parsed, "problem", "x0"), "[problem] x0", default=0.0),
            )
        in_dim = _parse_int(_get(parsed, "problem", "in_dim", required=True), "[problem] in_dim")
        hidden = _parse_int(_get(parsed, "problem", "hidden", required=True), "[problem] hidden")
        data = _build_dataset(parsed, (in_dim,), kind)
        return mlp_problem(
            in_dim,
            hidden,
            data,
            n_workers=n_workers,
            noise=_build_noise(parsed, None),
            init_seed=_parse_int(_get(parsed, "problem", "data_seed", default="1"), "[problem] data_seed"),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"[problem]: {exc}") from exc


def _build_compressor(parsed, section: str) -> tuple[CompressorSpec, ApplicationMode]:
    kind = _get(parsed, section, "kind", default="identity")
    kwargs = {}
    raw = _get(parsed, section, "ratio")
    if raw is not None:
        kwargs["ratio"] = _parse_float(raw, f"[{section}] ratio")
    raw = _get(parsed, section, "threshold")
    if raw is not None:
        kwargs["threshold"] = _parse_float(raw, f"[{section}] threshold")
    raw = _get(parsed, section, "fraction")
    if raw is not None:
        kwargs["fraction"] = _parse_float(raw, f"[{section}] fraction")
    raw = _get(parsed, section, "levels")
    if raw is not None:
        kwargs["levels"] = _parse_int(raw, f"[{section}] levels")
    mode_name = _get(parsed, section, "mode", default="layerwise")
    try:
        return CompressorSpec(kind, **kwargs), ApplicationMode(mode_name)
    except ValueError as exc:
        raise ConfigError(f"[{section}]: {exc}") from exc


def _build_schedule(parsed) -> ScheduleSpec:
    kind = _get(parsed, "schedule", "kind", default="constant")
    try:
        if kind == "constant":
            return ScheduleSpec("constant", eta=_parse_float(_get(parsed, "schedule", "eta", required=True), "[schedule] eta"))
        if kind == "inv_sqrt_budget":
            return ScheduleSpec("inv_sqrt_budget", c=_parse_float(_get(parsed, "schedule", "c", required=True), "[schedule] c"))
        if kind == "piecewise_linear":
            raw = _get(parsed, "schedule", "breakpoints", required=True)
            return ScheduleSpec("piecewise_linear", breakpoints=_parse_breakpoints(raw, "[schedule] breakpoints"))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"[schedule]: {exc}") from exc
    raise ConfigError(f"[schedule] kind must be constant|inv_sqrt_budget|piecewise_linear, got {kind!r}")


def build_train_config(parsed: dict[str, dict[str, str]], seed_override: int | None = None) -> TrainConfig:
    n_workers = _parse_int(_get(parsed, "workers", "n", default="1"), "[workers] n")
    problem = _build_problem(parsed, n_workers)
    worker_spec, worker_mode = _build_compressor(parsed, "compressor.worker")
    master_spec, master_mode = _build_compressor(parsed, "compressor.master")
    schedule = _build_schedule(parsed)
    steps = _parse_int(_get(parsed, "run", "steps", required=True), "[run] steps")
    seed = _parse_int(_get(parsed, "run", "seed", default="0"), "[run] seed")
    metrics_every = _parse_int(_get(parsed, "run", "metrics_every", default="10"), "[run] metrics_every")
    if seed_override is not None:
        seed = seed_override
    try:
        return TrainConfig(
            problem=problem,
            n_workers=n_workers,
            steps=steps,
            schedule=schedule,
            worker_spec=worker_spec,
            worker_mode=worker_mode,
            master_spec=master_spec,
            master_mode=master_mode,
            seed=seed,
            metrics_every=metrics_every,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def success_threshold(parsed: dict[str, dict[str, str]]) -> float | None:
    raw = _get(parsed, "run", "success_grad_sq")
    return None if raw is None else _parse_float(raw, "[run] success_grad_sq")


def build_verify_settings(parsed: dict[str, dict[str, str]], seed_override: int | None = None) -> VerifySettings:
    defaults = VerifySettings()
    seed = _parse_int(_get(parsed, "verify", "seed", default=str(defaults.seed)), "[verify] seed")
    if seed_override is not None:
        seed = seed_override
    n_samples = _parse_int(_get(parsed, "verify", "n_samples", default=str(defaults.n_samples)), "[verify] n_samples")
    corpus = _parse_int(_get(parsed, "verify", "corpus", default=str(defaults.corpus_size)), "[verify] corpus")
    raw_dims = _get(parsed, "verify", "layers")
    dims = _parse_ints(raw_dims, "[verify] layers") if raw_dims is not None else defaults.dims
    if n_samples < 1000:
        raise ConfigError("[verify] n_samples must be >= 1000")
    if corpus < 1:
        raise ConfigError("[verify] corpus must be >= 1")
    if any(d < 1 for d in dims) or not dims:
        raise ConfigError("[verify] layers must be positive integers")
    return VerifySettings(seed=seed, n_samples=n_samples, corpus_size=corpus, dims=tuple(dims))
