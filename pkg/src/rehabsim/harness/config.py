"""Experiment configuration: frozen dataclasses, strict JSON loading, hashing."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import types
import typing
from dataclasses import dataclass
from pathlib import Path

from ..context import ContextThresholds, PolicySettings
from ..control import ReferenceTrajectory
from ..patient import DisturbanceConfig, PatientMode, PatientParams

SCENARIOS = ("f1", "f2", "f3", "f4", "f5", "f6", "rate", "custom")
PRESET_NAMES = ("rigid", "soft", "adaptive")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModeSpan:
    """Patient mode active on cycles [start, stop)."""

    mode: str
    start: int
    stop: int

    def __post_init__(self) -> None:
        PatientMode(self.mode)
        if not 0 <= self.start < self.stop:
            raise ConfigError(f"bad mode span [{self.start}, {self.stop})")


@dataclass(frozen=True)
class SensorSettings:
    enabled: bool = True
    noise_rel: float = 0.05
    corr_time: float = 0.05


@dataclass(frozen=True)
class EstimatorSettings:
    omega_c: float = 10.0
    zeta: float = 0.7
    # prediction horizon as a fraction of the control period
    lead_fraction: float = 0.5


@dataclass(frozen=True)
class AdaptSettings:
    k0: float = 8000.0
    c0: float = 40.0
    delta_k: float = 800.0
    delta_c: float = 2.0
    eta: float = 1.0
    rho: float = 0.5
    window: int = 10
    freeze_start: int | None = None
    freeze_stop: int | None = None
    # learner energy from phase-randomized force (control arm)
    surrogate: bool = False
    anneal_cycles: float | None = None
    anneal_power: float = 1.0
    anneal_floor: float = 0.0


@dataclass(frozen=True)
class ContextSettings:
    enabled: bool = False
    policy: bool = False
    thresholds: ContextThresholds = ContextThresholds()
    policy_settings: PolicySettings = PolicySettings()
    baseline_window: int = 10
    var_cycles: int = 3


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str = "custom"
    seed: int = 0
    n_seeds: int = 10
    cycles: int = 50
    presets: tuple[str, ...] = ("adaptive",)
    schedule: tuple[ModeSpan, ...] = ()
    disturbance: DisturbanceConfig = DisturbanceConfig()
    dt_phys: float = 0.001
    output_dir: str = "runs"
    patient: PatientParams = PatientParams()
    calibrate: bool = True
    reference: ReferenceTrajectory = ReferenceTrajectory()
    sensors: SensorSettings = SensorSettings()
    estimator: EstimatorSettings = EstimatorSettings()
    adaptation: AdaptSettings = AdaptSettings()
    context: ContextSettings = ContextSettings()
    m_eff: float = 1.0
    lever: float = 0.15
    # impulses are suppressed before this cycle (lets a protocol disturb a trained controller)
    disturbance_start: int = 0

    def __post_init__(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.cycles < 1 or self.n_seeds < 1:
            raise ConfigError("cycles and n_seeds must be >= 1")
        if not 0 <= self.disturbance_start < self.cycles:
            raise ConfigError("disturbance_start must be a cycle index inside the episode")
        for p in self.presets:
            if p not in PRESET_NAMES:
                raise ConfigError(f"unknown preset {p!r}")
        for span in self.schedule:
            if span.stop > self.cycles:
                raise ConfigError(f"mode span {span} exceeds {self.cycles} cycles")
        if not 0 < self.dt_phys <= 1.0 / 120.0:
            raise ConfigError("dt_phys must lie in (0, 1/120] s")

    def mode_per_cycle(self) -> list[PatientMode]:
        modes = [PatientMode.STABLE] * self.cycles
        for span in self.schedule:
            for n in range(span.start, span.stop):
                modes[n] = PatientMode(span.mode)
        return modes


def _plain(value):
    if dataclasses.is_dataclass(value):
        return {f.name: _plain(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, (tuple, list)):
        return [_plain(v) for v in value]
    return value


def to_dict(config) -> dict:
    return _plain(config)


def run_dict(config: ExperimentConfig) -> dict:
    """What a run persists: everything except where it was written."""
    data = to_dict(config)
    data.pop("output_dir", None)
    return data


def config_hash(config: ExperimentConfig) -> str:
    """sha256 over the canonical JSON, output_dir excluded."""
    data = run_dict(config)
    blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _build(tp, value, path: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected an object")
        return from_dict(tp, value, path)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _build(inner[0], value, path)
    if origin is tuple:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list")
        return tuple(_build(args[0], v, f"{path}[{i}]") for i, v in enumerate(value))
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer")
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string")
        return value
    return value


def from_dict(cls, data: dict, path: str = "config"):
    """Build dataclass ``cls`` from a dict; unknown keys are an error."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {', '.join(unknown)}")
    kwargs = {k: _build(hints[k], v, f"{path}.{k}") for k, v in data.items()}
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _deep_update(base: dict, new: dict, path: str) -> dict:
    out = dict(base)
    for key, value in new.items():
        if key not in out:
            raise ConfigError(f"{path}: unknown key {key}")
        if isinstance(value, dict) and isinstance(out[key], dict):
            out[key] = _deep_update(out[key], value, f"{path}.{key}")
        else:
            out[key] = value
    return out


def overlay(config: ExperimentConfig, data: dict) -> ExperimentConfig:
    """``config`` with the (possibly nested, possibly partial) fields of ``data``."""
    return from_dict(ExperimentConfig, _deep_update(to_dict(config), data, "config"))


def set_path(data: dict, dotted: str, value) -> dict:
    """Copy of nested ``data`` with ``dotted`` (e.g. "adaptation.delta_k") set."""
    head, _, rest = dotted.partition(".")
    out = dict(data)
    out[head] = set_path(dict(out.get(head) or {}), rest, value) if rest else value
    return out


def config_from_data(data: dict, defaults=None) -> ExperimentConfig:
    """Config from a JSON object; ``scenario`` and ``seed`` are mandatory.

    Fields left out take the protocol defaults from ``defaults(scenario)``.
    """
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    for key in ("scenario", "seed"):
        if key not in data:
            raise ConfigError(f"config: missing mandatory key {key!r}")
    if not isinstance(data["scenario"], str) or data["scenario"] not in SCENARIOS:
        raise ConfigError(f"config.scenario: unknown scenario {data['scenario']!r}")
    base = ExperimentConfig(scenario=data["scenario"]) if defaults is None else defaults(data["scenario"])
    return overlay(base, data)


def read_json(path: str | Path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def load_config(path: str | Path, defaults=None) -> ExperimentConfig:
    return config_from_data(read_json(path), defaults)
