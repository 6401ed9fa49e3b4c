"""Experiment configuration: dataclass, YAML loading and validation.

Every validation error names the offending field with a dotted path so a
bad config fails with one actionable message.
"""

import dataclasses
from dataclasses import dataclass, field

import yaml

from .methods import method_names
from .training import TrainerConfig

WORLD_NAMES = ("wide", "complex")


class ConfigError(ValueError):
    """Bad experiment configuration; the message starts with the field path."""


@dataclass
class ExperimentConfig:
    master_seed: int = 0
    n_trials: int = 5
    n_test_rollouts: int = 100
    methods: list = field(default_factory=method_names)
    worlds: list = field(default_factory=lambda: list(WORLD_NAMES))
    test_every_iteration: bool = False
    out: str = "results"
    trainer: dict = field(default_factory=dict)
    world_overrides: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    sweep_method: str = "MHGP-BDI"
    sweep_world: str = "wide"
    sweep_trials: int = 1

    def validate(self):
        _check_int(self.master_seed, "master_seed", minimum=0)
        _check_int(self.n_trials, "n_trials", minimum=1)
        _check_int(self.n_test_rollouts, "n_test_rollouts", minimum=0)
        _check_int(self.sweep_trials, "sweep_trials", minimum=1)
        if not isinstance(self.test_every_iteration, bool):
            raise ConfigError("test_every_iteration: expected a boolean")
        _check_name_list(self.methods, "methods", method_names())
        _check_name_list(self.worlds, "worlds", WORLD_NAMES)
        if self.sweep_method not in method_names():
            raise ConfigError(f"sweep_method: unknown method {self.sweep_method!r}")
        if self.sweep_world not in WORLD_NAMES:
            raise ConfigError(f"sweep_world: unknown world {self.sweep_world!r}")
        _check_trainer_fields(self.trainer, "trainer")
        if not isinstance(self.world_overrides, dict):
            raise ConfigError("world_overrides: expected a mapping")
        for world, overrides in self.world_overrides.items():
            if world not in WORLD_NAMES:
                raise ConfigError(f"world_overrides.{world}: unknown world")
            _check_trainer_fields(overrides, f"world_overrides.{world}")
        if not isinstance(self.sweep, dict):
            raise ConfigError("sweep: expected a mapping of field -> list")
        for name, values in self.sweep.items():
            if name not in _trainer_fields():
                raise ConfigError(f"sweep.{name}: not a trainer field")
            if not isinstance(values, list) or not values:
                raise ConfigError(f"sweep.{name}: expected a non-empty list")
        return self


def _trainer_fields():
    return {f.name: f for f in dataclasses.fields(TrainerConfig)}


def _check_int(value, path, minimum=None):
    if not isinstance(value, int) or isinstance(value, bool):
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{path}: must be >= {minimum}, got {value}")


def _check_name_list(values, path, allowed):
    if not isinstance(values, list) or not values:
        raise ConfigError(f"{path}: expected a non-empty list of names")
    for i, name in enumerate(values):
        if name not in allowed:
            raise ConfigError(
                f"{path}[{i}]: unknown name {name!r}; "
                f"choose from {', '.join(allowed)}")


def _check_trainer_fields(mapping, path):
    if not isinstance(mapping, dict):
        raise ConfigError(f"{path}: expected a mapping of trainer fields")
    known = _trainer_fields()
    for name, value in mapping.items():
        if name not in known:
            raise ConfigError(f"{path}.{name}: not a trainer field")
        if isinstance(value, bool) or not isinstance(value, (int, float, str,
                                                             type(None))):
            raise ConfigError(f"{path}.{name}: expected a scalar, got {value!r}")


def load_config(path):
    """Read a YAML experiment config; unknown keys are rejected."""
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("top level: expected a mapping")
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"{key}: unknown field")
    return ExperimentConfig(**raw).validate()
