"""INI experiment configs and run manifests.

Schema (all sections optional except ``[experiment]``)::

    [experiment]
    mode = theorem            ; or corollary
    n_values = 2048, 8192, 32768
    replications = 100
    t = 0.1                   ; level (theorem mode)
    p = 0.5                   ; probability (corollary mode)
    weight = one              ; one | f | a nonnegative constant
    grid_factor = 0.25        ; grid spacing = grid_factor * h
    quantile_tol = 1e-6
    seed_base = 0
    use_oracle_field = false

    [model]
    name = gaussian2d         ; every other key is a model parameter
    sigma = 1.0
    ; bump_mixture: centers = -1.5, 0; 1.5, 0   weights = 0.5, 0.5   radius = 1

    [kernel]
    name = epanechnikov

    [bandwidth]               ; h = c * n^-gamma
    c = 1.0
    gamma = 0.2

    [alpha]                   ; alpha_n = c * n^-gamma (corollary mode)
    c = 1.0
    gamma = 0.15              ; default (1 - k * bandwidth gamma) / 4
"""

from __future__ import annotations

import configparser
import hashlib
import json
import platform
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .experiment import ConfigError, ExperimentConfig
from .kernels import BandwidthSchedule

_EXPERIMENT_KEYS = {
    "mode", "n_values", "replications", "t", "p", "weight", "grid_factor",
    "quantile_tol", "seed_base", "use_oracle_field",
}
_SECTIONS = {"experiment", "model", "kernel", "bandwidth", "alpha"}


def _parse_param(text: str):
    text = text.strip()
    if ";" in text:
        return [[float(v) for v in part.split(",")] for part in text.split(";") if part.strip()]
    if "," in text:
        return [float(v) for v in text.split(",")]
    try:
        return float(text)
    except ValueError:
        return text


def _format_param(value) -> str:
    if isinstance(value, (list, tuple)) and value and isinstance(value[0], (list, tuple)):
        return "; ".join(", ".join(repr(float(v)) for v in row) for row in value)
    if isinstance(value, (list, tuple)):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    unknown = set(cp.sections()) - _SECTIONS
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    if not cp.has_section("experiment"):
        raise ConfigError("config needs an [experiment] section")
    exp = cp["experiment"]
    extra = set(exp) - _EXPERIMENT_KEYS
    if extra:
        raise ConfigError(f"unknown [experiment] keys: {sorted(extra)}")
    try:
        cfg = ExperimentConfig(
            mode=exp.get("mode", "theorem"),
            n_values=tuple(int(v) for v in exp.get("n_values", "2048, 8192, 32768").split(",")),
            replications=exp.getint("replications", 100),
            t=exp.getfloat("t") if "t" in exp else None,
            p=exp.getfloat("p") if "p" in exp else None,
            grid_factor=exp.getfloat("grid_factor", 0.25),
            quantile_tol=exp.getfloat("quantile_tol", 1e-6),
            seed_base=exp.getint("seed_base", 0),
            use_oracle_field=exp.getboolean("use_oracle_field", False),
        )
        weight = exp.get("weight", "one").strip()
        cfg.weight = weight if weight in ("one", "f") else float(weight)
        if cp.has_section("model"):
            model = dict(cp["model"])
            cfg.model = model.pop("name", cfg.model)
            cfg.model_params = {k: _parse_param(v) for k, v in model.items()}
        if cp.has_section("kernel"):
            cfg.kernel = cp["kernel"].get("name", cfg.kernel)
        if cp.has_section("bandwidth"):
            bw = cp["bandwidth"]
            cfg.schedule = BandwidthSchedule(bw.getfloat("c", 1.0), bw.getfloat("gamma", 0.2))
        if cp.has_section("alpha"):
            al = cp["alpha"]
            cfg.alpha_c = al.getfloat("c", 1.0)
            cfg.alpha_gamma = al.getfloat("gamma") if "gamma" in al else None
    except ValueError as exc:
        raise ConfigError(f"invalid config value: {exc}") from exc
    return cfg


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text(encoding="utf-8"))


def config_to_dict(cfg: ExperimentConfig) -> dict[str, dict[str, str]]:
    exp = {
        "mode": cfg.mode,
        "n_values": ", ".join(str(n) for n in cfg.n_values),
        "replications": str(cfg.replications),
        "weight": cfg.weight if isinstance(cfg.weight, str) else repr(float(cfg.weight)),
        "grid_factor": repr(cfg.grid_factor),
        "quantile_tol": repr(cfg.quantile_tol),
        "seed_base": str(cfg.seed_base),
        "use_oracle_field": str(cfg.use_oracle_field).lower(),
    }
    if cfg.t is not None:
        exp["t"] = repr(cfg.t)
    if cfg.p is not None:
        exp["p"] = repr(cfg.p)
    out = {
        "experiment": exp,
        "model": {"name": cfg.model, **{k: _format_param(v) for k, v in cfg.model_params.items()}},
        "kernel": {"name": cfg.kernel},
        "bandwidth": {"c": repr(cfg.schedule.c), "gamma": repr(cfg.schedule.gamma)},
        "alpha": {"c": repr(cfg.alpha_c)},
    }
    if cfg.alpha_gamma is not None:
        out["alpha"]["gamma"] = repr(cfg.alpha_gamma)
    return out


def serialize_config(cfg: ExperimentConfig) -> str:
    if callable(cfg.weight):
        raise ConfigError("callable weights cannot be written to a config file")
    cp = configparser.ConfigParser()
    cp.read_dict(config_to_dict(cfg))
    lines = []
    for section in cp.sections():
        lines.append(f"[{section}]")
        lines.extend(f"{k} = {v}" for k, v in cp[section].items())
        lines.append("")
    return "\n".join(lines)


def config_hash(cfg: ExperimentConfig) -> str:
    """SHA-256 of the canonical config; independent of key order in the file."""
    canon = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def write_manifest(out_dir, cfg: ExperimentConfig, outputs: dict) -> Path:
    manifest = {
        "config_hash": config_hash(cfg),
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "versions": {
            "kdelevel": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "outputs": {k: str(v) for k, v in outputs.items()},
    }
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path
