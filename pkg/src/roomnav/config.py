"""Run configuration: one YAML file, full defaults, dotted-path overrides."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields
from typing import Any

import yaml

from .rlcore.policy import ArchConfig, ConfigError
from .rlcore.ppo import PpoConfig
from .simworld import EnvParams

CONFIG_VERSION = 1


@dataclass(frozen=True)
class EnvironmentConfig:
    template: str = "full"
    step_len: float = 0.4
    n_headings: int = 16
    agent_radius: float = 0.25
    success_radius: float = 1.0
    max_steps: int = 500
    soft_termination: bool = True
    objects: str = "single"          # single | multiple
    n_distractors: int = 5           # used when objects == multiple
    holdout_plans: int = -1          # -1: 30 when >= 60 plans, else ceil(0.23 * total)

    def params(self) -> EnvParams:
        return EnvParams(step_len=self.step_len, n_headings=self.n_headings, agent_radius=self.agent_radius,
                         success_radius=self.success_radius, max_steps=self.max_steps)

    @property
    def distractors(self) -> int:
        return self.n_distractors if self.objects == "multiple" else 0


@dataclass(frozen=True)
class RlConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    epochs: int = 4
    minibatches: int = 4
    lr: float = 2.5e-4
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    max_grad_norm: float = 0.5
    rollout_len: int = 128
    n_workers: int = 8
    total_steps: int = 1_000_000
    arch: ArchConfig = ArchConfig()
    plans: str = "train"             # static | train | holdout | all

    @property
    def ppo(self) -> PpoConfig:
        names = {f.name for f in fields(PpoConfig)}
        return PpoConfig(**{k: getattr(self, k) for k in names})


@dataclass(frozen=True)
class HierarchyConfig:
    c: int = 50
    scheme: str = "coverage"         # coverage | frozen
    enhance: str = "oracle"          # oracle | none (ablation)
    meta_steps: int = 50_000
    abstract_horizon: int = 14
    meta_ppo: PpoConfig = PpoConfig(lr=1e-3, rollout_len=28, n_workers=16, minibatches=4, epochs=4,
                                    entropy_coef=0.01)
    controller: str = ""             # checkpoint path for the frozen scheme


@dataclass(frozen=True)
class GaConfig:
    dataset_size: int = 100_000
    threshold: float = 0.5
    objects: str = "train"           # train | holdout | all
    n_distractors: int = 5
    episode_len: int = 32
    near_spawn_prob: float = 0.5
    visible_pixels: int = 20
    epochs: int = 12
    patience: int = 3
    batch_size: int = 128
    lr: float = 1e-3
    val_fraction: float = 0.2


@dataclass(frozen=True)
class EvalConfig:
    runs: int = 10
    episodes: int = 100
    split: str = "static"            # static | train | holdout | all
    objects: str = "single"
    instructions: str = "train"      # train | holdout


@dataclass(frozen=True)
class SeedsConfig:
    plans: int = 7
    env: int = 1
    train: int = 2
    meta: int = 3
    ga_data: int = 4
    ga_train: int = 5
    eval: int = 6


@dataclass(frozen=True)
class PathsConfig:
    out_dir: str = "runs"


@dataclass(frozen=True)
class RunConfig:
    environment: EnvironmentConfig = EnvironmentConfig()
    rl: RlConfig = RlConfig()
    hierarchy: HierarchyConfig = HierarchyConfig()
    ga: GaConfig = GaConfig()
    eval: EvalConfig = EvalConfig()
    seeds: SeedsConfig = SeedsConfig()
    paths: PathsConfig = PathsConfig()
    version: int = CONFIG_VERSION

    def to_dict(self) -> dict:
        return _to_plain(self)

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def validate(self) -> "RunConfig":
        env = self.environment
        for name in ("step_len", "success_radius", "agent_radius"):
            if getattr(env, name) <= 0:
                raise ConfigError(f"environment.{name}", "must be > 0")
        if env.max_steps <= 0:
            raise ConfigError("environment.max_steps", "must be > 0")
        if env.objects not in ("single", "multiple"):
            raise ConfigError("environment.objects", f"expected single|multiple, got {env.objects!r}")
        if env.template not in ("full", "mini"):
            raise ConfigError("environment.template", f"expected full|mini, got {env.template!r}")
        self.rl.ppo.validate("rl")
        self.hierarchy.meta_ppo.validate("hierarchy.meta_ppo")
        if self.rl.plans not in ("static", "train", "holdout", "all"):
            raise ConfigError("rl.plans", f"unknown split {self.rl.plans!r}")
        if self.hierarchy.c < 1:
            raise ConfigError("hierarchy.c", "must be >= 1")
        if self.hierarchy.scheme not in ("coverage", "frozen"):
            raise ConfigError("hierarchy.scheme", f"expected coverage|frozen, got {self.hierarchy.scheme!r}")
        if self.hierarchy.enhance not in ("oracle", "none"):
            raise ConfigError("hierarchy.enhance", f"expected oracle|none, got {self.hierarchy.enhance!r}")
        if not 0.0 <= self.ga.threshold <= 1.0:
            raise ConfigError("ga.threshold", "must be in [0, 1]")
        if not 0.0 < self.ga.val_fraction < 1.0:
            raise ConfigError("ga.val_fraction", "must be in (0, 1)")
        if self.ga.objects not in ("train", "holdout", "all"):
            raise ConfigError("ga.objects", f"unknown object set {self.ga.objects!r}")
        if self.eval.split not in ("static", "train", "holdout", "all"):
            raise ConfigError("eval.split", f"unknown split {self.eval.split!r}")
        if self.eval.runs < 1 or self.eval.episodes < 1:
            raise ConfigError("eval.runs", "runs and episodes must be >= 1")
        if self.eval.instructions not in ("train", "holdout"):
            raise ConfigError("eval.instructions", f"unknown instruction set {self.eval.instructions!r}")
        return self


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, tuple):
        return [_to_plain(v) for v in obj]
    return obj


def _build(base, data: Any, path: str):
    if not isinstance(data, dict):
        raise ConfigError(path or "<root>", f"expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in fields(base)}
    kwargs = {}
    for key, value in data.items():
        sub = f"{path}.{key}" if path else key
        if key not in known:
            raise ConfigError(sub, "unknown field")
        default = getattr(base, key)
        if dataclasses.is_dataclass(default):
            if type(default) is ArchConfig:
                try:
                    kwargs[key] = ArchConfig.from_dict({**default.to_dict(), **value})
                except TypeError as e:
                    raise ConfigError(sub, str(e)) from None
            else:
                kwargs[key] = _build(default, value, sub)
        else:
            kwargs[key] = _coerce(default, value, sub)
    return dataclasses.replace(base, **kwargs) if kwargs else base


def _coerce(default, value, path):
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0", "yes", "no"):
            return value.lower() in ("true", "1", "yes")
        raise ConfigError(path, f"expected a boolean, got {value!r}")
    try:
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if isinstance(default, float):
            return float(value)
    except (TypeError, ValueError):
        raise ConfigError(path, f"expected {type(default).__name__}, got {value!r}") from None
    return str(value)


def from_dict(data: dict) -> RunConfig:
    return _build(RunConfig(), data or {}, "").validate()


def load_config(path=None, overrides=()) -> RunConfig:
    """Read YAML (or defaults when ``path`` is None) and apply ``a.b=value`` overrides."""
    data: dict = {}
    if path:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "override must look like section.field=value")
        key, raw = item.split("=", 1)
        node = data
        parts = key.strip().split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = yaml.safe_load(raw)
    return from_dict(data)


def dump_config(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# roomnav run configuration v{CONFIG_VERSION} (hash {cfg.hash()})\n")
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=False)
