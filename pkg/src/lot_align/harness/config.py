"""Experiment configuration: one JSON document, versioned, strict about keys."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from ..fusion.train import TrainConfig
from .synth import SyntheticSpec

SCHEMA = "lot_align.experiment/1"
PROTOCOLS = ("complete", "inter_missing", "proportional_missing")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSettings:
    embed: int = 16
    hidden: int = 32


@dataclass(frozen=True)
class ExperimentConfig:
    protocol: str = "complete"
    synthetic: SyntheticSpec | None = field(default_factory=SyntheticSpec)
    data_path: str | None = None
    folds: int = 5
    ratio: float = 0.0
    ratios: tuple[float, ...] | None = None
    missing_modality: str = "oct"
    ablation: bool = False
    seed: int = 0
    model: ModelSettings = field(default_factory=ModelSettings)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"unknown protocol {self.protocol!r}; expected one of {PROTOCOLS}")
        if (self.synthetic is None) == (self.data_path is None):
            raise ConfigError("give exactly one of data.synthetic or data.path")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")
        if self.missing_modality not in ("fundus", "oct"):
            raise ConfigError(f"missing_modality must be 'fundus' or 'oct', got {self.missing_modality!r}")
        if self.ratios is not None:
            object.__setattr__(self, "ratios", tuple(float(r) for r in self.ratios))
            if not self.ratios:
                raise ConfigError("ratios must not be empty")
        for r in self.ratio_grid():
            if not 0.0 <= r <= 1.0:
                raise ConfigError(f"ratio {r} outside [0, 1]")
        if not self.train.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    def ratio_grid(self) -> tuple[float, ...]:
        if self.protocol != "proportional_missing":
            return (0.0,)
        return self.ratios if self.ratios is not None else (float(self.ratio),)

    def to_dict(self) -> dict:
        data = {"synthetic": self.synthetic.to_dict()} if self.synthetic else {"path": self.data_path}
        train = asdict(self.train)
        train["loss_weights"] = list(train["loss_weights"])
        return {
            "schema": SCHEMA,
            "protocol": self.protocol,
            "data": data,
            "folds": self.folds,
            "ratio": self.ratio,
            "ratios": list(self.ratios) if self.ratios is not None else None,
            "missing_modality": self.missing_modality,
            "ablation": self.ablation,
            "seed": self.seed,
            "model": asdict(self.model),
            "train": train,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        _reject_unknown(d, {f.name for f in fields(cls)} - {"synthetic", "data_path"} | {"schema", "data"}, "config")
        if d.get("schema") != SCHEMA:
            raise ConfigError(f"schema must be {SCHEMA!r}, got {d.get('schema')!r}")
        kw = {k: v for k, v in d.items() if k not in ("schema", "data", "model", "train")}
        data = d.get("data", {"synthetic": {}})
        _reject_unknown(data, {"synthetic", "path"}, "data")
        kw["synthetic"] = _build(SyntheticSpec, data["synthetic"], "data.synthetic") if "synthetic" in data else None
        kw["data_path"] = data.get("path")
        kw["model"] = _build(ModelSettings, d.get("model", {}), "model")
        train = dict(d.get("train", {}))
        if "loss_weights" in train:
            train["loss_weights"] = tuple(train["loss_weights"])
        kw["train"] = _build(TrainConfig, train, "train")
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def with_overrides(self, **kw) -> ExperimentConfig:
        return replace(self, **kw)


def _reject_unknown(d: dict, allowed: set, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    extra = sorted(set(d) - allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(extra)}")


def _build(cls, d: dict, where: str):
    _reject_unknown(d, {f.name for f in fields(cls)}, where)
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return ExperimentConfig.from_dict(raw)
