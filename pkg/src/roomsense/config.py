"""Run configuration: nested frozen dataclasses with JSON round-tripping.

Every tunable of the pipeline lives here with its default. ``to_dict`` /
``from_dict`` round-trip exactly, and ``flat_fields`` lists dotted names
(``features.nmfd.K``, ``svm.cbox`` ...) that the CLI exposes as flags.
"""
from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataError
from .features import FeatureConfig
from .gmm import GmmConfig
from .nmfd import NmfdConfig


@dataclass(frozen=True)
class SynthConfig:
    rooms_per_label: int = 4
    clips_per_room: int = 25
    buildings: int = 3
    duration_s: float = 3.0
    sample_rate: int = 16000


@dataclass(frozen=True)
class SvmConfig:
    cbox: tuple = tuple(2.0**k for k in range(-3, 8))
    gamma: tuple = tuple(2.0**k for k in range(-9, 2))
    folds: int = 5
    tol: float = 1e-3


@dataclass(frozen=True)
class FusionConfig:
    alpha: float = 0.10
    omega: float = 4.0
    score_components: int = 4


@dataclass(frozen=True)
class TrainConfig:
    # room-grouped folds inside the training set that produce held-out scores
    # for Platt scaling, the EER threshold and the score distributions
    inner_folds: int = 3


@dataclass(frozen=True)
class EvalConfig:
    folds: int = 4
    alphas: tuple = tuple(round(0.05 * i, 2) for i in range(21))
    test_buildings: tuple = ("B3",)
    confidence_target: float = 0.99
    clip_budget: int = 30


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    synth: SynthConfig = field(default_factory=SynthConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    gmm: GmmConfig = field(default_factory=GmmConfig)
    svm: SvmConfig = field(default_factory=SvmConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @property
    def nmfd(self) -> NmfdConfig:
        return self.features.nmfd


def to_dict(cfg) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        out[f.name] = to_dict(v) if dataclasses.is_dataclass(v) else (list(v) if isinstance(v, tuple) else v)
    return out


def _coerce(tp, value, name):
    origin = typing.get_origin(tp)
    if tp is tuple or origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise DataError(f"config field {name} expects a list")
        return tuple(value)
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise DataError(f"config field {name} expects a number")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise DataError(f"config field {name} expects an integer")
        return value
    if tp is str and not isinstance(value, str):
        raise DataError(f"config field {name} expects a string")
    return value


def from_dict(cls, data: dict, prefix: str = ""):
    if not isinstance(data, dict):
        raise DataError(f"config section {prefix or '<root>'} must be an object")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise DataError(f"unknown config fields: {sorted(prefix + k for k in unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        tp = hints[f.name]
        if dataclasses.is_dataclass(tp):
            kwargs[f.name] = from_dict(tp, data[f.name], f"{prefix}{f.name}.")
        else:
            kwargs[f.name] = _coerce(tp, data[f.name], prefix + f.name)
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise DataError(f"invalid config section {prefix or '<root>'}: {exc}") from exc


def flat_fields(cls=RunConfig, prefix: str = ""):
    """(dotted name, type, default) for every leaf field."""
    hints = typing.get_type_hints(cls)
    default = cls()
    for f in dataclasses.fields(cls):
        tp = hints[f.name]
        if dataclasses.is_dataclass(tp):
            yield from flat_fields(tp, f"{prefix}{f.name}.")
        else:
            yield prefix + f.name, tp, getattr(default, f.name)


def with_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    """Apply {"a.b.c": value} overrides on top of ``cfg``."""
    data = to_dict(cfg)
    for dotted, value in overrides.items():
        node = data
        *path, leaf = dotted.split(".")
        for key in path:
            node = node.get(key) if isinstance(node, dict) else None
        if not isinstance(node, dict) or leaf not in node:
            raise DataError(f"unknown config field: {dotted}")
        node[leaf] = list(value) if isinstance(value, tuple) else value
    return from_dict(RunConfig, data)


def dumps(cfg: RunConfig) -> str:
    return json.dumps(to_dict(cfg), indent=2, sort_keys=True) + "\n"


def load(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    return from_dict(RunConfig, data)
