"""Experiment configuration files.

Configs are YAML documents with sections dynamics_model / algorithm /
overrides / agent / optimizer. The sentinel "???" marks fields (model input
and output sizes) that are completed at runtime from the environment's
shapes. Unknown keys are rejected with their full key path.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import yaml

from .algorithms import PETSConfig
from .envs import ENV_CLASSES, TERMINATION_FNS
from .planning import CEMConfig

SENTINEL = "???"


class ConfigError(ValueError):
    """Invalid configuration; message names the offending key path."""


_SCHEMA = {
    "dynamics_model": {
        "num_layers": int,
        "hid_size": int,
        "in_size": (int, str),
        "out_size": (int, str),
        "ensemble_size": int,
        "elite_count": int,
        "use_silu": bool,
        "deterministic": bool,
        "propagation_method": str,
        "lr": float,
    },
    "algorithm": {
        "initial_exploration_steps": int,
        "learned_rewards": bool,
        "target_is_delta": bool,
        "normalize": bool,
    },
    "overrides": {
        "env": str,
        "term_fn": str,
        "trial_length": int,
        "num_trials": int,
        "model_batch_size": int,
        "validation_ratio": float,
        "model_retrain_interval": int,
        "retrain_at_trial_start": bool,
        "num_epochs": int,
        "patience": int,
        "buffer_capacity": int,
        "record_walltime": bool,
        "stop_on_return": float,
    },
    "agent": {
        "horizon": int,
        "particles": int,
    },
    "optimizer": {
        "population": int,
        "elite_count": int,
        "iterations": int,
        "initial_var": float,
        "alpha": float,
        "return_mean_elites": bool,
    },
}


@dataclass
class RunConfig:
    """Resolved configuration document (one dict per section)."""

    dynamics_model: dict = field(default_factory=dict)
    algorithm: dict = field(default_factory=dict)
    overrides: dict = field(default_factory=dict)
    agent: dict = field(default_factory=dict)
    optimizer: dict = field(default_factory=dict)

    @property
    def env_name(self) -> str:
        return self.overrides.get("env", "cartpole_continuous")


def _check_section(name: str, section: dict) -> None:
    schema = _SCHEMA[name]
    for key, value in section.items():
        if key not in schema:
            raise ConfigError(f"unknown key {name}.{key}")
        expected = schema[key]
        if isinstance(expected, tuple):
            ok = isinstance(value, expected)
        elif expected is float:
            ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        elif expected is int:
            ok = isinstance(value, int) and not isinstance(value, bool)
        else:
            ok = isinstance(value, expected)
        if not ok:
            raise ConfigError(
                f"bad value for {name}.{key}: {value!r} (expected "
                f"{getattr(expected, '__name__', expected)})")


def load_config(path) -> RunConfig:
    with open(path) as f:
        doc = yaml.safe_load(f)
    if not isinstance(doc, dict):
        raise ConfigError(f"config root must be a mapping, got {type(doc).__name__}")
    for section in doc:
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section {section}")
    cfg = RunConfig(**{k: dict(doc.get(k) or {}) for k in _SCHEMA})
    for name in _SCHEMA:
        _check_section(name, getattr(cfg, name))
    env_name = cfg.env_name
    if env_name not in ENV_CLASSES:
        raise ConfigError(f"overrides.env: unknown environment {env_name!r}")
    term = cfg.overrides.get("term_fn")
    if term is not None and term not in TERMINATION_FNS:
        raise ConfigError(f"overrides.term_fn: unknown function {term!r}")
    resolve_sentinels(cfg)
    return cfg


def resolve_sentinels(cfg: RunConfig) -> None:
    """Replace "???" in-place using the selected environment's shapes."""
    spec = ENV_CLASSES[cfg.env_name].spec
    learned_rewards = cfg.algorithm.get("learned_rewards", False)
    resolved = {
        "in_size": spec.obs_dim + spec.act_dim,
        "out_size": spec.obs_dim + (1 if learned_rewards else 0),
    }
    for key, value in resolved.items():
        current = cfg.dynamics_model.get(key, SENTINEL)
        if current == SENTINEL:
            cfg.dynamics_model[key] = value
        elif current != value:
            raise ConfigError(
                f"dynamics_model.{key}: {current} conflicts with the "
                f"environment shape {value}")


def to_pets_config(cfg: RunConfig, seed: int = 0) -> PETSConfig:
    dm, alg, ov, ag = (cfg.dynamics_model, cfg.algorithm, cfg.overrides,
                       cfg.agent)
    cem_kwargs = dict(cfg.optimizer)
    cem = CEMConfig(**cem_kwargs) if cem_kwargs else CEMConfig(
        population=250, elite_count=25, iterations=5, initial_var=0.25)
    pets = PETSConfig(
        env=cfg.env_name,
        cem=cem,
        seed=seed,
    )
    mapping = [
        (dm, {"ensemble_size": "ensemble_size", "elite_count": "elite_count",
              "deterministic": "deterministic", "num_layers": "num_layers",
              "hid_size": "hid_size", "use_silu": "use_silu",
              "propagation_method": "propagation_method", "lr": "lr"}),
        (alg, {"initial_exploration_steps": "initial_exploration_steps",
               "learned_rewards": "learned_rewards",
               "target_is_delta": "target_is_delta",
               "normalize": "normalize"}),
        (ov, {"trial_length": "trial_length", "num_trials": "num_trials",
              "model_batch_size": "model_batch_size",
              "validation_ratio": "validation_ratio",
              "model_retrain_interval": "model_retrain_interval",
              "retrain_at_trial_start": "retrain_at_trial_start",
              "num_epochs": "num_epochs", "patience": "patience",
              "buffer_capacity": "buffer_capacity",
              "record_walltime": "record_walltime",
              "stop_on_return": "stop_on_return"}),
        (ag, {"horizon": "horizon", "particles": "particles"}),
    ]
    valid_fields = {f.name for f in fields(PETSConfig)}
    for section, keys in mapping:
        for src, dst in keys.items():
            if src in section:
                assert dst in valid_fields
                setattr(pets, dst, section[src])
    pets.validate()
    return pets


def save_config_snapshot(cfg: RunConfig, path) -> None:
    doc = {name: getattr(cfg, name) for name in _SCHEMA}
    with open(path, "w") as f:
        yaml.safe_dump(doc, f, sort_keys=True)
