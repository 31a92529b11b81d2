"""Experiment configuration: dataclasses with strict JSON (de)serialization."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .cdope import CDF_ESTIMATORS
from .errors import OpevalError
from .fitting.dice import PRESETS
from .mdp import canonical_json
from .ope.confidence import METHODS

BASES = ("optimal", "myopic", "uniform_q", "pessimal")
DEFAULT_CANDIDATE_BASES = ("optimal", "myopic", "pessimal")
HEADS = ("epsilon_greedy", "softmax")
WEIGHT_SOURCES = ("alm", "empirical", "oracle", "mwl")
ENV_KINDS = ("random", "chain2", "loop")
CRITERIA = ("policy_value", "lower_bound", "lower_quartile", "cvar")
OPE_ESTIMATORS = (
    "DM", "TIS", "PDIS", "DR", "SNTIS", "SNPDIS", "SNDR",
    "SM-IS", "SM-DR", "SM-SNIS", "SM-SNDR",
    "SAM-IS", "SAM-DR", "SAM-SNIS", "SAM-SNDR",
    "DRL", "SOPE-SAM-IS", "SOPE-SAM-DR", "SOPE-SM-IS", "SOPE-SM-DR",
)


class ConfigError(OpevalError):
    """Invalid experiment configuration; the message starts with the offending path."""


@dataclass(frozen=True)
class EnvConfig:
    kind: str = "random"
    n_states: int = 5
    n_actions: int = 3
    horizon: int = 10
    discount: float = 0.95
    reward_noise: str = "gaussian"
    noise_sigma: float = 0.1
    seed: Optional[int] = None   # None: derived from the master seed

    def validate(self, path: str) -> None:
        _choice(self.kind, ENV_KINDS, f"{path}.kind")
        _choice(self.reward_noise, ("none", "gaussian", "bernoulli"), f"{path}.reward_noise")
        _positive(self.n_states, f"{path}.n_states")
        _positive(self.n_actions, f"{path}.n_actions")
        _positive(self.horizon, f"{path}.horizon")
        if not 0.0 < self.discount <= 1.0:
            raise ConfigError(f"{path}.discount: must lie in (0, 1]")


@dataclass(frozen=True)
class PolicyGroupConfig:
    bases: tuple = ("optimal",)
    head: str = "epsilon_greedy"
    params: tuple = (0.3, 0.5, 0.7)

    def validate(self, path: str) -> None:
        if not self.bases:
            raise ConfigError(f"{path}.bases: must not be empty")
        for i, b in enumerate(self.bases):
            _choice(b, BASES, f"{path}.bases[{i}]")
        _choice(self.head, HEADS, f"{path}.head")
        if not self.params:
            raise ConfigError(f"{path}.params: must not be empty")
        for i, p in enumerate(self.params):
            ok = 0.0 <= p <= 1.0 if self.head == "epsilon_greedy" else p > 0
            if not ok:
                raise ConfigError(f"{path}.params[{i}]: {p} is out of range for {self.head}")


@dataclass(frozen=True)
class DataConfig:
    n_datasets: int = 10
    n_trajectories: int = 1000

    def validate(self, path: str) -> None:
        _positive(self.n_datasets, f"{path}.n_datasets")
        if self.n_trajectories < 4:
            raise ConfigError(f"{path}.n_trajectories: need at least 4 trajectories")


@dataclass(frozen=True)
class FitConfig:
    weights: str = "alm"
    alm_preset: str = "BestDICE"
    alm_max_iters: int = 20000
    kernel_bandwidth: float = 1.0
    mwl_max_trajectories: int = 200

    def validate(self, path: str) -> None:
        _choice(self.weights, WEIGHT_SOURCES, f"{path}.weights")
        _choice(self.alm_preset, tuple(PRESETS), f"{path}.alm_preset")
        if self.alm_max_iters < 0:
            raise ConfigError(f"{path}.alm_max_iters: must be >= 0")
        if not self.kernel_bandwidth > 0:
            raise ConfigError(f"{path}.kernel_bandwidth: must be positive")
        _positive(self.mwl_max_trajectories, f"{path}.mwl_max_trajectories")


@dataclass(frozen=True)
class OpeConfig:
    estimators: tuple = OPE_ESTIMATORS
    sope_k: int = 2
    drl_folds: int = 2
    ci_method: str = "bootstrap"
    alpha: float = 0.05
    bootstrap_b: int = 100

    def validate(self, path: str) -> None:
        if len(set(self.estimators)) != len(self.estimators):
            raise ConfigError(f"{path}.estimators: duplicate estimator names")
        for i, e in enumerate(self.estimators):
            _choice(e, OPE_ESTIMATORS, f"{path}.estimators[{i}]")
        if self.sope_k < 0:
            raise ConfigError(f"{path}.sope_k: must be >= 0")
        if self.drl_folds < 2:
            raise ConfigError(f"{path}.drl_folds: must be >= 2")
        _choice(self.ci_method, METHODS, f"{path}.ci_method")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"{path}.alpha: must lie in (0, 1)")
        _positive(self.bootstrap_b, f"{path}.bootstrap_b")


@dataclass(frozen=True)
class CdopeConfig:
    estimators: tuple = CDF_ESTIMATORS
    scale_min: float = 0.0
    scale_max: float = 10.0
    n_partition: int = 20
    risk_alpha: float = 0.3
    truth_rollouts: int = 10000

    def validate(self, path: str) -> None:
        if len(set(self.estimators)) != len(self.estimators):
            raise ConfigError(f"{path}.estimators: duplicate estimator names")
        for i, e in enumerate(self.estimators):
            _choice(e, CDF_ESTIMATORS, f"{path}.estimators[{i}]")
        if not self.scale_min < self.scale_max:
            raise ConfigError(f"{path}.scale_max: must exceed scale_min")
        _positive(self.n_partition, f"{path}.n_partition")
        if not 0.0 < self.risk_alpha < 0.5:
            raise ConfigError(f"{path}.risk_alpha: must lie in (0, 0.5)")
        if self.truth_rollouts < 2:
            raise ConfigError(f"{path}.truth_rollouts: must be >= 2")


@dataclass(frozen=True)
class OpsConfig:
    criteria: tuple = CRITERIA
    relative_safety_criteria: float = 1.0
    include_oracle: bool = True

    def validate(self, path: str) -> None:
        for i, c in enumerate(self.criteria):
            _choice(c, CRITERIA, f"{path}.criteria[{i}]")


@dataclass(frozen=True)
class ExperimentConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    behavior: PolicyGroupConfig = field(default_factory=PolicyGroupConfig)
    candidates: PolicyGroupConfig = field(
        default_factory=lambda: PolicyGroupConfig(bases=DEFAULT_CANDIDATE_BASES, params=(0.3, 0.5, 0.7)))
    data: DataConfig = field(default_factory=DataConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    ope: OpeConfig = field(default_factory=OpeConfig)
    cdope: CdopeConfig = field(default_factory=CdopeConfig)
    ops: OpsConfig = field(default_factory=OpsConfig)
    seed: int = 12345

    def validate(self) -> "ExperimentConfig":
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if hasattr(value, "validate"):
                value.validate(f.name)
        names = behavior_names(self) + candidate_names(self)
        if len(set(names)) != len(names):
            raise ConfigError("candidates: policy names must be unique (duplicate base/param pairs)")
        return self

    def to_dict(self) -> dict:
        return _to_plain(dataclasses.asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def with_seed(self, seed: Optional[int]) -> "ExperimentConfig":
        return self if seed is None else dataclasses.replace(self, seed=int(seed))

    def hash(self) -> str:
        return hashlib.sha256(canonical_json(self.to_dict()).encode()).hexdigest()

    @classmethod
    def from_dict(cls, doc) -> "ExperimentConfig":
        return _build(cls, doc, "config").validate()

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} does not exist") from None
        except json.JSONDecodeError as err:
            raise ConfigError(f"config file {path}: invalid JSON ({err})") from None
        return cls.from_dict(doc)


def policy_label(base: str, head: str, param: float) -> str:
    tag = "eps" if head == "epsilon_greedy" else "temp"
    return f"{base}_{tag}_{param:g}"


def behavior_names(cfg: ExperimentConfig) -> list[str]:
    g = cfg.behavior
    return [f"behavior_{policy_label(b, g.head, p)}" for b in g.bases for p in g.params]


def candidate_names(cfg: ExperimentConfig) -> list[str]:
    g = cfg.candidates
    return [policy_label(b, g.head, p) for b in g.bases for p in g.params]


# -- helpers ------------------------------------------------------------------
def _choice(value, options, path):
    if value not in options:
        raise ConfigError(f"{path}: {value!r} is not one of {list(options)}")


def _positive(value, path):
    if value < 1:
        raise ConfigError(f"{path}: must be >= 1")


def _to_plain(obj):
    if isinstance(obj, dict):
        return {k: _to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    return obj


def _check_type(value, hint, path):
    origin = typing.get_origin(hint)
    if origin is typing.Union:
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if value is None:
            return None
        return _check_type(value, args[0], path)
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if hint is tuple:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        return tuple(value)
    return value


def _build(cls, doc, path):
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected an object")
    hints = typing.get_type_hints(cls)
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - set(fields))
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}: unknown key (allowed: {sorted(fields)})")
    kwargs = {}
    for name, value in doc.items():
        hint = hints[name]
        sub = f"{path}.{name}"
        if dataclasses.is_dataclass(hint):
            kwargs[name] = _build(hint, value, sub)
        else:
            kwargs[name] = _check_type(value, hint, sub)
            if hint is tuple:
                elem = type(getattr(cls(), name)[0]) if getattr(cls(), name) else None
                if elem is float:
                    kwargs[name] = tuple(_check_type(v, float, f"{sub}[{i}]") for i, v in enumerate(value))
                elif elem is str:
                    kwargs[name] = tuple(_check_type(v, str, f"{sub}[{i}]") for i, v in enumerate(value))
    return cls(**kwargs)
