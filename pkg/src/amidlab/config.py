"""Experiment configuration: a small ``[section]`` / ``key = value`` format.

The stdlib ``configparser`` does not report line numbers for unknown keys or
bad values, so the format is parsed here directly.  Every key maps onto a
field of one of the config dataclasses and is type-checked against the
field's default.

Defaults (all overridable):

``[data]``   GenConfig fields, plus ``k_u = 0.25``
``[model]``  d = 16, T = 8, encoder = gru, mim_input = encoded, n_slots = 64, p_min = 0.05
``[mim]``    enabled = true, k = 0.7, similarity_weight = 0
``[train]``  lambda1 = 0.01, lambda2..5 = 1e-4, lambda_p = 1, lr_phase1 = 1e-3,
             lr_phase2 = 1e-5, Q = 200, Q_prime = 50, batch_size = 64, ...
``[eval]``   num_negatives = 199, k = 10, pool_size = 63
``[run]``    seeds = 0,1,2,3,4; objectives = dr; mim = true
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .datagen import ConfigError, GenConfig
from .dre import OBJECTIVES, TrainConfig
from .model import ModelConfig

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


@dataclass
class DataSection:
    gen: GenConfig = field(default_factory=GenConfig)
    k_u: float = 0.25


@dataclass
class EvalConfig:
    num_negatives: int = 199
    k: int = 10
    pool_size: int = 63

    def validate(self) -> None:
        if self.num_negatives < 1 or self.k < 1 or self.pool_size < 0:
            raise ConfigError("eval needs num_negatives >= 1, k >= 1 and pool_size >= 0")


@dataclass
class RunConfig:
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    objectives: list[str] = field(default_factory=lambda: ["dr"])
    mim: list[bool] = field(default_factory=lambda: [True])

    def validate(self) -> None:
        if not self.seeds:
            raise ConfigError("run.seeds must name at least one seed")
        bad = [o for o in self.objectives if o not in OBJECTIVES]
        if bad or not self.objectives:
            raise ConfigError(f"run.objectives must be drawn from {OBJECTIVES}")
        if not self.mim:
            raise ConfigError("run.mim must list at least one setting")


@dataclass
class ExperimentConfig:
    data: DataSection = field(default_factory=DataSection)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def validate(self) -> None:
        self.data.gen.validate()
        if not 0.0 <= self.data.k_u <= 1.0:
            raise ConfigError("data.k_u must lie in [0, 1]")
        self.model.validate()
        self.train.validate()
        self.eval.validate()
        self.run.validate()

    def variants(self) -> list[tuple[str, bool]]:
        return [(obj, mim) for obj in self.run.objectives for mim in self.run.mim]


def _targets(cfg: ExperimentConfig) -> dict[str, dict[str, tuple[object, str]]]:
    """section -> key -> (owner object, attribute name)."""
    out: dict[str, dict[str, tuple[object, str]]] = {}
    out["data"] = {f.name: (cfg.data.gen, f.name) for f in dataclasses.fields(GenConfig)}
    out["data"]["k_u"] = (cfg.data, "k_u")
    out["model"] = {
        name: (cfg.model, name) for name in ("d", "T", "encoder", "mim_input", "n_slots", "p_min")
    }
    out["mim"] = {
        "enabled": (cfg.model, "use_mim"),
        "k": (cfg.model, "k"),
        "similarity_weight": (cfg.model, "similarity_weight"),
    }
    out["train"] = {f.name: (cfg.train, f.name) for f in dataclasses.fields(TrainConfig)}
    out["eval"] = {f.name: (cfg.eval, f.name) for f in dataclasses.fields(EvalConfig)}
    out["run"] = {f.name: (cfg.run, f.name) for f in dataclasses.fields(RunConfig)}
    return out


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in _TRUE:
        return True
    if low in _FALSE:
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _convert(text: str, like):
    if isinstance(like, bool):
        return _parse_bool(text)
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    if isinstance(like, str):
        return text
    if isinstance(like, list):
        item = like[0] if like else ""
        return [_convert(part.strip(), item) for part in text.split(",") if part.strip()]
    raise TypeError(f"unsupported field type {type(like).__name__}")


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    cfg = ExperimentConfig()
    targets = _targets(cfg)
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in targets:
                raise ConfigError(f"{source}: unknown section [{section}] at line {lineno}")
            continue
        if "=" not in line:
            raise ConfigError(f"{source}: expected 'key = value' at line {lineno}")
        key, value = (part.strip() for part in line.split("=", 1))
        if section is None:
            raise ConfigError(f"{source}: key {key} at line {lineno} is outside any section")
        if key not in targets[section]:
            raise ConfigError(f"unknown key {key} at line {lineno}")
        owner, attr = targets[section][key]
        try:
            setattr(owner, attr, _convert(value, getattr(owner, attr)))
        except ValueError as exc:
            raise ConfigError(f"{source}: bad value for {section}.{key} at line {lineno}: {exc}") from None
    cfg.validate()
    return cfg


def parse_config(path: str | Path | None) -> ExperimentConfig:
    """Read a config file; ``None`` gives the documented defaults."""
    if path is None:
        cfg = ExperimentConfig()
        cfg.validate()
        return cfg
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text, str(path))
