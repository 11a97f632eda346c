"""Experiment configuration: typed sections, strict key checking, TOML snapshots.

A config file is TOML with four sections::

    [experiment]  task sequence, method, budgets, seeds
    [sac]         learner hyperparameters
    [nbsp]        masking and replay settings
    [identify]    skill-neuron identification settings

Unknown keys are rejected with a suggestion of the closest valid key.
"""

from __future__ import annotations

import dataclasses
import difflib
import hashlib
import json
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from nbsp.envs import make_task
from nbsp.errors import ConfigError
from nbsp.sac import SacConfig

METHODS = ("nbsp", "base", "mask_only", "replay_only", "random_selection", "actor_only", "critic_only")
DEFAULT_BUDGET = {"pointmass": 60_000, "gridworld": 30_000}


@dataclass
class ExperimentSection:
    tasks: list = field(default_factory=lambda: ["pointmass/goal-east", "pointmass/goal-west"])
    cycles: int = 2
    method: str = "nbsp"
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    budget: int = 0  # 0 selects the family default
    init_steps: int = 1000
    warmup: str = "per_task"
    replay_ratio: int = 2
    eval_interval: int = 2000
    eval_episodes: int = 20
    early_stop_window: int = 10
    early_stop_threshold: float = 0.9
    buffer_size: int = 100_000
    persistent_buffer: bool = False
    reset_temperature: bool = False
    reset_optimizers: bool = True
    log_interval: int = 100
    checkpoints: bool = True


@dataclass
class NbspSection:
    proportion: float = 0.2
    alpha_mask: float = 0.2
    replay_interval: int = 10
    store_size: int = 10_000
    prior_capacity: int = 0  # 0 means store_size x number of segments
    merge_rule: str = "min"


@dataclass
class IdentifySection:
    steps: int = 5000
    mode: str = "stochastic"
    scope: str = "per_network"
    second_pass: str = "fresh"


@dataclass
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    sac: SacConfig = field(default_factory=SacConfig)
    nbsp: NbspSection = field(default_factory=NbspSection)
    identify: IdentifySection = field(default_factory=IdentifySection)

    SECTIONS = ("experiment", "sac", "nbsp", "identify")

    # -- derived ------------------------------------------------------------

    @property
    def task_specs(self):
        return [make_task(name) for name in self.experiment.tasks]

    @property
    def segments(self) -> list[str]:
        return list(self.experiment.tasks) * self.experiment.cycles

    @property
    def budget(self) -> int:
        if self.experiment.budget > 0:
            return self.experiment.budget
        family = self.task_specs[0].family
        return DEFAULT_BUDGET[family]

    @property
    def prior_capacity(self) -> int:
        if self.nbsp.prior_capacity > 0:
            return self.nbsp.prior_capacity
        return max(1, self.nbsp.store_size * len(self.segments))

    # -- validation -----------------------------------------------------------

    def validate(self) -> "ExperimentConfig":
        e, n, i, s = self.experiment, self.nbsp, self.identify, self.sac
        if not e.tasks:
            raise ConfigError("experiment.tasks: the task sequence must not be empty")
        specs = self.task_specs
        if len({t.family for t in specs}) != 1:
            raise ConfigError("experiment.tasks: all tasks must come from one family")
        _choice("experiment.method", e.method, METHODS)
        _choice("experiment.warmup", e.warmup, ("per_task", "global"))
        _choice("nbsp.merge_rule", n.merge_rule, ("min", "latest"))
        _choice("identify.mode", i.mode, ("stochastic", "deterministic"))
        _choice("identify.scope", i.scope, ("per_network", "pooled"))
        _choice("identify.second_pass", i.second_pass, ("fresh", "same"))
        for key, value, lo in (("experiment.cycles", e.cycles, 1), ("experiment.replay_ratio", e.replay_ratio, 1),
                               ("experiment.eval_interval", e.eval_interval, 1),
                               ("experiment.eval_episodes", e.eval_episodes, 1),
                               ("experiment.early_stop_window", e.early_stop_window, 1),
                               ("nbsp.replay_interval", n.replay_interval, 1), ("identify.steps", i.steps, 1),
                               ("sac.batch_size", s.batch_size, 1), ("experiment.init_steps", e.init_steps, 0),
                               ("nbsp.store_size", n.store_size, 0), ("experiment.budget", e.budget, 0)):
            if value < lo:
                raise ConfigError(f"{key} must be >= {lo}, got {value}")
        if not 0.0 < n.proportion <= 1.0:
            raise ConfigError(f"nbsp.proportion must lie in (0, 1], got {n.proportion}")
        if not 0.0 <= n.alpha_mask <= 1.0:
            raise ConfigError(f"nbsp.alpha_mask must lie in [0, 1], got {n.alpha_mask}")
        if not 0.0 < s.tau <= 1.0:
            raise ConfigError(f"sac.tau must lie in (0, 1], got {s.tau}")
        if e.init_steps and e.init_steps < s.batch_size:
            raise ConfigError("experiment.init_steps must be 0 or at least sac.batch_size")
        if e.buffer_size < s.batch_size:
            raise ConfigError("experiment.buffer_size must be at least sac.batch_size")
        return self

    # -- serialization ----------------------------------------------------------

    def as_dict(self) -> dict:
        out = {}
        for name in self.SECTIONS:
            section = dataclasses.asdict(getattr(self, name))
            out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in section.items()}
        return out

    def hash(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_toml(self) -> str:
        lines = []
        for name, section in self.as_dict().items():
            lines.append(f"[{name}]")
            for key, value in section.items():
                lines.append(f"{key} = {_toml_value(value)}")
            lines.append("")
        return "\n".join(lines)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        cfg = cls()
        for section_name, values in data.items():
            if section_name not in cls.SECTIONS:
                raise ConfigError(_unknown("section", section_name, cls.SECTIONS))
            if not isinstance(values, dict):
                raise ConfigError(f"[{section_name}] must be a table")
            section = getattr(cfg, section_name)
            types = {f.name: f for f in fields(section)}
            for key, value in values.items():
                if key not in types:
                    raise ConfigError(_unknown(f"key in [{section_name}]", key, list(types)))
                setattr(section, key, _coerce(section_name, key, value, getattr(section, key)))
        return cfg.validate()

    @classmethod
    def from_toml(cls, text: str) -> "ExperimentConfig":
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config is not valid TOML: {exc}") from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_toml(Path(path).read_text())

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        """Copy with ``section__key=value`` style or bare-key overrides."""
        data = self.as_dict()
        for key, value in overrides.items():
            if value is None:
                continue
            if "__" in key:
                section, name = key.split("__", 1)
            else:
                section = next((s for s in self.SECTIONS if key in data[s]), None)
                name = key
                if section is None:
                    all_keys = [k for s in self.SECTIONS for k in data[s]]
                    raise ConfigError(_unknown("key", key, all_keys))
            data.setdefault(section, {})[name] = value
        return ExperimentConfig.from_dict(data)


def _choice(key, value, allowed):
    if value not in allowed:
        raise ConfigError(f"{key}: {value!r} is not one of {', '.join(allowed)}")


def _unknown(kind, name, valid) -> str:
    msg = f"unknown {kind} {name!r}"
    close = difflib.get_close_matches(name, list(valid), n=1, cutoff=0.6)
    if close:
        msg += f"; did you mean {close[0]!r}?"
    return msg + f" (accepted: {', '.join(valid)})"


def _coerce(section, key, value, default):
    where = f"{section}.{key}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} expects true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} expects an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} expects a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where} expects a string, got {value!r}")
        return value
    if isinstance(default, (list, tuple)):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where} expects a list, got {value!r}")
        return tuple(value) if isinstance(default, tuple) else list(value)
    return value


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise TypeError(f"cannot write {value!r} to TOML")


PRESETS = {
    "nbsp-pointmass-2task": {"experiment": {"tasks": ["pointmass/goal-east", "pointmass/goal-west"]}},
    "nbsp-gridworld-2task": {"experiment": {"tasks": ["gridworld/goal-east", "gridworld/goal-west"]}},
    "nbsp-pointmass-4task": {"experiment": {
        "tasks": ["pointmass/goal-east", "pointmass/goal-north", "pointmass/goal-west", "pointmass/goal-south"]}},
    "smoke": {"experiment": {"tasks": ["pointmass/goal-east", "pointmass/goal-west"], "cycles": 1, "budget": 3000,
                             "init_steps": 500, "eval_interval": 1000, "eval_episodes": 5, "seeds": [0]},
              "identify": {"steps": 300}, "nbsp": {"store_size": 500}},
}


def preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(_unknown("preset", name, list(PRESETS)))
    return ExperimentConfig.from_dict(json.loads(json.dumps(PRESETS[name])))
