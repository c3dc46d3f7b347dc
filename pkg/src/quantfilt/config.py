"""TOML experiment configuration.

A config file has sections [model], [quantizer], [bench], [tuning], and
one [variants.<name>] table per estimator variant.  Every key outside the
model/quantizer definition has a default, so a minimal file only needs
those two sections plus at least one variant.  ``load_config`` also
resolves bundled preset names (currently "paper_iv", the benchmark
study's setup).
"""

from __future__ import annotations

import os
import sys
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .bench import ExperimentConfig, VariantSpec
from .gaussian_filters import UkfConfig
from .model import LinearSSM, Quantizer

__all__ = ["load_config", "render_config", "preset_path"]

_TUNING_DEFAULTS = {
    "gl_order": 10,
    "rho": None,
    "eps": None,
    "ukf_alpha": 1.0,
    "ukf_kappa": 0.0,
    "ukf_beta": 2.0,
    "rwm_variance": 100.0,
    "mt_iters": 20,
    "gsf_max_components": 50,
    "gss_components": 10,
}

_BENCH_DEFAULTS = {"n": 200, "runs": 1000, "master_seed": 20211123}


def preset_path(name: str) -> str:
    return os.path.join(os.path.dirname(__file__), "presets", f"{name}.toml")


class ConfigError(ValueError):
    """Raised for unparseable or inconsistent configuration files."""


def _model_from_table(tab: dict) -> LinearSSM:
    try:
        return LinearSSM(
            A=tab["a"], B=tab["b"], C=tab["c"], D=tab["d"],
            Q=tab["q"], R=tab["r"], mu1=tab["mu1"], P1=tab["p1"],
        )
    except KeyError as exc:
        raise ConfigError(f"[model] is missing key {exc}") from exc


def _quantizer_from_table(tab: dict) -> Quantizer:
    kind = tab.get("kind")
    if kind == "ilq":
        if "step" not in tab:
            raise ConfigError("[quantizer] kind='ilq' needs 'step'")
        return Quantizer.uniform(tab["step"])
    if kind == "flq":
        if "thresholds" not in tab or "levels" not in tab:
            raise ConfigError("[quantizer] kind='flq' needs 'thresholds' and 'levels'")
        return Quantizer.finite(tab["thresholds"], tab["levels"])
    raise ConfigError("[quantizer] kind must be 'ilq' or 'flq'")


def _variant_from_table(name: str, tab: dict) -> VariantSpec:
    if "algorithm" not in tab:
        raise ConfigError(f"[variants.{name}] is missing 'algorithm'")
    return VariantSpec(
        algorithm=tab["algorithm"],
        move=tab.get("move"),
        resampling=tab.get("resampling"),
        particles=tab.get("particles"),
    )


def _apply_overrides(data: dict, overrides: dict) -> None:
    for dotted, value in overrides.items():
        parts = dotted.split(".")
        node = data
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value


def load_config(path: str, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Load an experiment config from a TOML file or bundled preset name.

    ``overrides`` maps dotted keys (e.g. "bench.runs") onto replacement
    values applied before validation.
    """
    if not os.path.exists(path) and os.path.exists(preset_path(path)):
        path = preset_path(path)
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if overrides:
        _apply_overrides(data, overrides)

    if "model" not in data or "quantizer" not in data:
        raise ConfigError("config needs [model] and [quantizer] sections")
    model = _model_from_table(data["model"])
    quantizer = _quantizer_from_table(data["quantizer"])

    bench = {**_BENCH_DEFAULTS, **data.get("bench", {})}
    tuning = {**_TUNING_DEFAULTS, **data.get("tuning", {})}
    unknown = set(tuning) - set(_TUNING_DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown [tuning] keys: {sorted(unknown)}")

    variants = tuple(
        _variant_from_table(name, tab)
        for name, tab in data.get("variants", {}).items()
    )
    if not variants:
        raise ConfigError("config defines no [variants.*] sections")

    try:
        return ExperimentConfig(
            model=model,
            quantizer=quantizer,
            variants=variants,
            N=int(bench["n"]),
            runs=int(bench["runs"]),
            master_seed=int(bench["master_seed"]),
            gl_order=int(tuning["gl_order"]),
            rho=tuning["rho"],
            eps=tuning["eps"],
            ukf=UkfConfig(
                alpha=float(tuning["ukf_alpha"]),
                kappa=float(tuning["ukf_kappa"]),
                beta=float(tuning["ukf_beta"]),
            ),
            rwm_variance=float(tuning["rwm_variance"]),
            mt_iters=int(tuning["mt_iters"]),
            gsf_max_components=int(tuning["gsf_max_components"]),
            gss_components=int(tuning["gss_components"]),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return f'"{v}"'
    if hasattr(v, "tolist"):
        v = v.tolist()
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot render {type(v)} as TOML")


def render_config(cfg: ExperimentConfig) -> str:
    """Render the effective configuration (defaults resolved) as TOML."""
    m = cfg.model
    lines = ["[model]"]
    for key, val in (
        ("a", m.A), ("b", m.B), ("c", m.C), ("d", m.D),
        ("q", m.Q), ("r", m.R), ("mu1", m.mu1), ("p1", m.P1),
    ):
        lines.append(f"{key} = {_toml_value(val)}")
    lines.append("")
    lines.append("[quantizer]")
    q = cfg.quantizer
    lines.append(f'kind = "{q.kind}"')
    if q.kind == "ilq":
        lines.append(f"step = {_toml_value(q.step)}")
    else:
        lines.append(f"thresholds = {_toml_value(q.thresholds)}")
        lines.append(f"levels = {_toml_value(q.levels)}")
    lines.append("")
    lines.append("[bench]")
    lines.append(f"n = {cfg.N}")
    lines.append(f"runs = {cfg.runs}")
    lines.append(f"master_seed = {cfg.master_seed}")
    lines.append("")
    lines.append("[tuning]")
    lines.append(f"gl_order = {cfg.gl_order}")
    if cfg.rho is not None:
        lines.append(f"rho = {_toml_value(cfg.rho)}")
    if cfg.eps is not None:
        lines.append(f"eps = {_toml_value(cfg.eps)}")
    lines.append(f"ukf_alpha = {_toml_value(cfg.ukf.alpha)}")
    lines.append(f"ukf_kappa = {_toml_value(cfg.ukf.kappa)}")
    lines.append(f"ukf_beta = {_toml_value(cfg.ukf.beta)}")
    lines.append(f"rwm_variance = {_toml_value(cfg.rwm_variance)}")
    lines.append(f"mt_iters = {cfg.mt_iters}")
    lines.append(f"gsf_max_components = {cfg.gsf_max_components}")
    lines.append(f"gss_components = {cfg.gss_components}")
    for v in cfg.variants:
        name = v.filter_label.lower().replace("(", "-").replace(")", "")
        lines.append("")
        lines.append(f"[variants.{name}]")
        lines.append(f'algorithm = "{v.algorithm}"')
        if v.algorithm == "pf":
            lines.append(f'move = "{v.move}"')
            lines.append(f'resampling = "{v.resampling}"')
            lines.append(f"particles = {v.particles}")
    return "\n".join(lines) + "\n"
