"""One JSON configuration for the whole pipeline.

Sections map one-to-one onto the stage configs::

    {"seed": 0,
     "filter": {"tau_c": 0.5, "tau_v": 2.0},
     "solver": {"window_size": 8, ...},
     "joint": {"theta_th_deg": 10.0, ...},
     "refine": {"iters": 500, "lr": 0.001, "loss": {"kind": "tukey", "param": 0.01}, ...}}

Every key is optional; unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ArtikinError
from .geometry import RobustLoss
from .joints import JointConfig
from .refine import RefineConfig
from .segmentation import SolverConfig
from .tracks import FilterConfig

CONFIG_ENV = "ARTIKIN_CONFIG"


class ConfigError(ArtikinError):
    """Bad configuration file (reported as a usage error)."""


@dataclass(frozen=True)
class PipelineConfig:
    filter: FilterConfig = field(default_factory=FilterConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    joint: JointConfig = field(default_factory=JointConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    seed: int = 0

    def to_dict(self) -> dict:
        d = {"seed": self.seed}
        for name in ("filter", "solver", "joint", "refine"):
            sub = dataclasses.asdict(getattr(self, name))
            d[name] = sub
        return d


SECTIONS = {"filter": FilterConfig, "solver": SolverConfig, "joint": JointConfig, "refine": RefineConfig}


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}; allowed: {sorted(names)}")
    kw = {}
    for k, v in data.items():
        if k == "loss":
            if not isinstance(v, dict) or set(v) - {"kind", "param"}:
                raise ConfigError(f"{where}.loss: expected {{'kind', 'param'}}")
            try:
                v = RobustLoss(v.get("kind", "tukey"), float(v.get("param", 0.01)))
            except ValueError as exc:
                raise ConfigError(f"{where}.loss: {exc}") from None
        elif isinstance(v, (dict, list)) or v is None:
            raise ConfigError(f"{where}.{k}: expected a scalar")
        kw[k] = v
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_from_dict(d: dict) -> PipelineConfig:
    if not isinstance(d, dict):
        raise ConfigError("config: expected a JSON object")
    unknown = sorted(set(d) - set(SECTIONS) - {"seed"})
    if unknown:
        raise ConfigError(f"config: unknown key(s) {unknown}; allowed: {sorted(SECTIONS) + ['seed']}")
    seed = d.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("config.seed: expected an integer")
    parts = {name: _build(cls, d.get(name, {}), f"config.{name}") for name, cls in SECTIONS.items()}
    # the global seed drives every stochastic stage unless a section sets its own
    for name in ("solver", "joint"):
        if "seed" not in d.get(name, {}):
            parts[name] = replace(parts[name], seed=seed)
    return PipelineConfig(seed=seed, **parts)


def load_config(path=None) -> PipelineConfig:
    """Read ``path``, else the file named by ``$ARTIKIN_CONFIG``, else defaults."""
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return PipelineConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path}: invalid JSON at line {exc.lineno} column {exc.colno}") from None
    return config_from_dict(d)
