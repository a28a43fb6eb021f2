"""Experiment configuration files.

A single JSON document with sections mirroring the module configs. Every
field has a default; unknown keys are rejected with the offending path so a
typo cannot silently fall back to a default.

Defaults at a glance (overridable per run):
  seed 0, workers 1
  env: 2 links of 0.5 m / 1 kg, damping 0.1, gains 10, dt_sim 5 ms,
       dt_ctrl 30 ms, 4 s episodes, target switch 1 s, control cost 0.01
  networks: policy/value hidden (100, 60); discriminator hidden (100, 100)
  trpo: kl_radius 0.01, cg 10 iters / 0.1 damping, gamma 0.995, lambda 0.97,
        4000 samples per iteration (20000 selects the full-budget regime),
        value fit 25 epochs at 0.01, 10 backtracks, normalized advantages,
        500 iterations, reward z-filtering on, checkpoints every 50
  gail: 300 iterations, 5 discriminator updates per iteration at 1e-3 on
        256-row minibatches, reward clip 10, END_EFFECTOR_TARGET mask,
        2 s context switching, discriminator input z-filtering on
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

from .arm import ArmConfig
from .gail import GailConfig
from .trpo import TrpoConfig


class ConfigError(ValueError):
    """Malformed experiment configuration (maps to CLI exit code 2)."""


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    workers: int = 1
    env: ArmConfig = dataclasses.field(default_factory=ArmConfig)
    policy_hidden: tuple[int, ...] = (100, 60)
    value_hidden: tuple[int, ...] = (100, 60)
    disc_hidden: tuple[int, ...] = (100, 100)
    trpo: TrpoConfig = dataclasses.field(default_factory=TrpoConfig)
    trpo_iterations: int = 500
    filter_rewards: bool = True
    checkpoint_interval: int = 50
    gail: GailConfig = dataclasses.field(default_factory=GailConfig)

    def __post_init__(self):
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.trpo_iterations < 0:
            raise ConfigError("trpo.iterations must be >= 0")
        if self.checkpoint_interval < 1:
            raise ConfigError("trpo.checkpoint_interval must be >= 1")


_NETWORK_KEYS = {"policy_hidden", "value_hidden", "discriminator_hidden"}
_TRPO_EXTRA_KEYS = {"iterations", "filter_rewards", "checkpoint_interval"}
_TOP_KEYS = {"seed", "workers", "env", "networks", "trpo", "gail"}


def _section(data: dict, name: str, allowed: set[str]) -> dict:
    if not isinstance(data, dict):
        raise ConfigError(f"section {name!r} must be an object")
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {name}: {sorted(unknown)}; allowed: {sorted(allowed)}")
    return data


def _tuplify(value):
    return tuple(value) if isinstance(value, list) else value


def from_dict(data: dict) -> ExperimentConfig:
    data = _section(data, "<top level>", _TOP_KEYS)
    env_keys = {f.name for f in dataclasses.fields(ArmConfig)}
    trpo_keys = {f.name for f in dataclasses.fields(TrpoConfig)} | {"lambda"} | _TRPO_EXTRA_KEYS
    gail_keys = {f.name for f in dataclasses.fields(GailConfig)}

    env_raw = {k: _tuplify(v) for k, v in _section(data.get("env", {}), "env", env_keys).items()}
    nets_raw = _section(data.get("networks", {}), "networks", _NETWORK_KEYS)
    trpo_raw = dict(_section(data.get("trpo", {}), "trpo", trpo_keys))
    gail_raw = _section(data.get("gail", {}), "gail", gail_keys)

    if "lambda" in trpo_raw:
        trpo_raw["lam"] = trpo_raw.pop("lambda")
    iterations = trpo_raw.pop("iterations", 500)
    filter_rewards = trpo_raw.pop("filter_rewards", True)
    checkpoint_interval = trpo_raw.pop("checkpoint_interval", 50)

    try:
        return ExperimentConfig(
            seed=int(data.get("seed", 0)),
            workers=int(data.get("workers", 1)),
            env=ArmConfig(**env_raw),
            policy_hidden=tuple(nets_raw.get("policy_hidden", (100, 60))),
            value_hidden=tuple(nets_raw.get("value_hidden", (100, 60))),
            disc_hidden=tuple(nets_raw.get("discriminator_hidden", (100, 100))),
            trpo=TrpoConfig(**trpo_raw),
            trpo_iterations=int(iterations),
            filter_rewards=bool(filter_rewards),
            checkpoint_interval=int(checkpoint_interval),
            gail=GailConfig(**gail_raw),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str, *, seed=None, workers=None) -> ExperimentConfig:
    """Load, validate, and optionally override seed/worker count."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    if seed is not None:
        data["seed"] = seed
    if workers is not None:
        data["workers"] = workers
    return from_dict(data)


def to_dict(config: ExperimentConfig) -> dict:
    """Fully-resolved plain-JSON form (the hashing and checkpoint canon)."""
    return {
        "seed": config.seed,
        "workers": config.workers,
        "env": dataclasses.asdict(config.env),
        "networks": {
            "policy_hidden": list(config.policy_hidden),
            "value_hidden": list(config.value_hidden),
            "discriminator_hidden": list(config.disc_hidden),
        },
        "trpo": {**dataclasses.asdict(config.trpo),
                 "iterations": config.trpo_iterations,
                 "filter_rewards": config.filter_rewards,
                 "checkpoint_interval": config.checkpoint_interval},
        "gail": dataclasses.asdict(config.gail),
    }


def config_hash(config: ExperimentConfig) -> str:
    canon = json.dumps(to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()
