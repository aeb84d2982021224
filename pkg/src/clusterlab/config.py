"""Experiment configuration: parsing, defaults and validation."""

from __future__ import annotations

import copy
import json
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .metric_symbols import ZOO


class ConfigError(ValueError):
    """Validation failure; ``problems`` holds one message per offending field."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("\n".join(self.problems))


@dataclass
class ExperimentConfig:
    experiment: str
    metric: str = "flat"
    metric_params: dict = field(default_factory=dict)
    metrics: Optional[list] = None
    lambda_list: Optional[list] = None
    n_x: Optional[int] = None
    n_grid: Optional[int] = None
    dt: Optional[float] = None
    theta_list: Optional[list] = None
    p_list: Optional[list] = None
    m: Optional[int] = None
    draws: Optional[int] = None
    seed: int = 0
    output_dir: str = "results"
    plot: bool = True

    def to_dict(self) -> dict:
        """Canonical form with every default filled in; infinities as the string "inf"."""
        d = asdict(self)
        if d["p_list"] is not None:
            d["p_list"] = ["inf" if math.isinf(p) else p for p in d["p_list"]]
        return d


FIELD_NAMES = {f.name for f in fields(ExperimentConfig)}


def _parse_p(v):
    if isinstance(v, str) and v.strip().lower() in ("inf", "infinity"):
        return math.inf
    return float(v)


def parse_text(text: str, suffix: str = ".toml") -> dict:
    """Raw dict from TOML or JSON text; parse errors become ConfigError with the line."""
    try:
        if suffix == ".json" or text.lstrip().startswith("{"):
            return json.loads(text)
        return tomllib.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError([f"line {e.lineno}: {e.msg}"]) from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError([f"config: {e}"]) from None


def from_dict(raw: dict, registry: dict) -> ExperimentConfig:
    """Validate a raw mapping and fill experiment defaults."""
    problems = []
    if not isinstance(raw, dict):
        raise ConfigError(["config: top level must be a table/object"])
    unknown = sorted(set(raw) - FIELD_NAMES)
    for k in unknown:
        problems.append(f"{k}: unknown field")
    name = raw.get("experiment")
    if name is None:
        problems.append("experiment: missing")
    elif name not in registry:
        problems.append(f"experiment: {name!r} not in registry ({', '.join(sorted(registry))})")
    if name not in registry:
        raise ConfigError(problems)
    entry = registry[name]
    merged = copy.deepcopy(dict(entry.defaults))
    merged.update({k: v for k, v in raw.items() if k in FIELD_NAMES})
    cfg = ExperimentConfig(experiment=name)
    for k, v in merged.items():
        if k != "experiment":
            setattr(cfg, k, v)
    problems += _check(cfg)
    problems += entry.check(cfg) if entry.check else []
    if problems:
        raise ConfigError(problems)
    return cfg


def _check(cfg: ExperimentConfig) -> list:
    out = []
    if cfg.metric not in ZOO:
        out.append(f"metric: {cfg.metric!r} not in zoo ({', '.join(sorted(ZOO))})")
    if not isinstance(cfg.metric_params, dict):
        out.append("metric_params: must be a table")
    if cfg.metrics is not None:
        for m in cfg.metrics:
            if m not in ZOO:
                out.append(f"metrics: {m!r} not in zoo")
    if cfg.lambda_list is not None:
        if not isinstance(cfg.lambda_list, list) or not cfg.lambda_list:
            out.append("lambda_list: must be a non-empty list")
        elif any(not isinstance(v, (int, float)) or v <= 0 for v in cfg.lambda_list):
            out.append("lambda_list: entries must be positive numbers")
    for key in ("n_x", "n_grid", "draws", "m"):
        v = getattr(cfg, key)
        if v is not None and (not isinstance(v, int) or isinstance(v, bool) or v < (0 if key == "m" else 1)):
            out.append(f"{key}: must be a {'non-negative' if key == 'm' else 'positive'} integer")
    if cfg.n_x is not None and isinstance(cfg.n_x, int) and cfg.n_x & (cfg.n_x - 1):
        out.append("n_x: must be a power of two")
    if cfg.dt is not None and (not isinstance(cfg.dt, (int, float)) or cfg.dt <= 0):
        out.append("dt: must be positive")
    if cfg.dt is not None and cfg.lambda_list and isinstance(cfg.dt, (int, float)):
        if any(cfg.dt > 0.5 / lam for lam in cfg.lambda_list if isinstance(lam, (int, float)) and lam > 0):
            out.append("dt: must not exceed 0.5/lambda for every lambda")
    if cfg.theta_list is not None and (not cfg.theta_list or any(not isinstance(v, (int, float)) or v < 2 for v in cfg.theta_list)):
        out.append("theta_list: multiples of lambda^(-1/3), each >= 2")
    if cfg.p_list is not None:
        try:
            cfg.p_list = [_parse_p(p) for p in cfg.p_list]
            if any(p < 2 for p in cfg.p_list):
                out.append("p_list: entries must be >= 2")
        except (TypeError, ValueError):
            out.append("p_list: entries must be numbers or 'inf'")
    if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool) or not 0 <= cfg.seed < 2 ** 64:
        out.append("seed: must be an integer in [0, 2^64)")
    return out


def load_config(path, registry: dict) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError([f"config: cannot read {path}: {e.strerror}"]) from None
    return from_dict(parse_text(text, p.suffix.lower()), registry)
