"""Run configuration: every hyperparameter plus engine knobs, loadable from a
single YAML (or JSON) file. Unknown keys are rejected so typos fail fast.

Fields whose names end in remarks like "inert" exist to mirror the published
hyperparameter tables verbatim; they are parsed and dumped but have no
operational effect in this engine (the docstrings of the owning modules say
why).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import yaml

from .neat import NeatConfig


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    # run control
    master_seed: int = 0
    mode: str = "epoet-sac"  # epoet | epoet-sac | sac-only
    total_iterations: int = 300
    data_dir: str = "runs"
    checkpoint_interval: int = 15
    num_workers: int = 10
    checkpoint_replay_buffer: bool = True

    # terrain
    resolution: int = 64
    coarse_resolution: int = 8
    elevation_init: float = 1.0
    elevation_step: float = 0.01
    bowl_weight: float = 0.3
    cppn_weight: float = 0.7
    bowl_threshold_init: float = 0.0
    bowl_threshold_step: float = 0.001
    world_size: float = 10.0

    # walker
    trajectory_length: int = 2000
    finish_bonus: float = 100.0
    v_target: float = 0.4
    penalty_torso: float = 0.01
    penalty_accel: float = 0.01
    penalty_y: float = 0.01
    penalty_zvel: float = 0.01
    penalty_ctrl: float = 0.001

    # evolution strategies (per-pair optimizer)
    es_activation: str = "tanh"
    es_hidden_shape: list = field(default_factory=lambda: [40, 40])
    es_samples_per_step: int = 500
    es_batch_size: int = 1  # alias of the original distributed chunking; inert
    batches_per_chunk: int = 256  # alias of the original distributed chunking; inert
    learning_rate_init: float = 0.01
    learning_rate_floor: float = 0.001
    learning_rate_decay: float = 0.9999
    noise_std_init: float = 0.02
    noise_std_floor: float = 0.01
    noise_std_decay: float = 0.999
    weight_update_method: str = "adam"

    # poet orchestration
    max_num_envs: int = 40
    iterations_before_transfer: int = 15
    mutation_interval: int = 75
    adjust_interval: int = 5  # PATA-EC refresh cadence alias; inert (always refreshed)
    mc_lower: float = 500.0
    mc_upper: float = 3000.0
    repro_threshold: float = 2000.0
    max_children: int = 8
    pata_ec_k: int = 5
    eval_rollouts: int = 1
    transfer_rollouts: int = 1

    # soft actor-critic
    sac_activation: str = "relu"
    sac_hidden_shape: list = field(default_factory=lambda: [256, 256])
    sac_batch_size: int = 256
    sac_policy_lr: float = 3e-4
    sac_value_lr: float = 3e-4
    sac_alpha_lr: float = 3e-4
    tau: float = 0.95
    discount: float = 0.99
    reward_scale: float = 5.0
    replay_buffer_size: int = 1_000_000
    sac_env_steps_per_iter: int = 250
    sac_pretrain_updates: int = 500
    sac_eval_episodes: int = 1
    automatic_entropy_tuning: bool = True
    reparameterization: bool = True
    use_soft_update: bool = True
    target_hard_update_period: int = 1000  # superseded by the soft update; inert
    pretrain_epoch: int = 1  # table alias with no resolved meaning; inert
    opt_epochs: int = 10  # table alias; inert (one update per environment step)

    # evaluation protocol
    eval_runs_per_env: int = 5
    difficulty_quantiles: list = field(default_factory=lambda: [1 / 3, 2 / 3])

    # terrain evolution (CPPN-NEAT)
    neat: NeatConfig = field(default_factory=NeatConfig)

    def __post_init__(self):
        if self.mode not in ("epoet", "epoet-sac", "sac-only"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.es_samples_per_step % 2 != 0:
            raise ConfigError("es_samples_per_step must be even (mirrored sampling)")
        if self.num_workers < 1:
            raise ConfigError("num_workers must be >= 1")

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in dataclasses.fields(cls)}

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config document must be a mapping")
        unknown = [k for k in data if k not in cls.field_names()]
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        data = dict(data)
        if "neat" in data and not isinstance(data["neat"], NeatConfig):
            try:
                data["neat"] = NeatConfig.from_dict(data["neat"] or {})
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        try:
            return cls(**data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config file {path}: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["neat"] = self.neat.to_dict()
        return out

    def dump(self, path: str) -> None:
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)

    def with_overrides(self, overrides: dict[str, str]) -> "RunConfig":
        """Apply CLI --set key=value pairs with type coercion against the
        current field values. Dotted keys address the neat sub-config."""
        data = self.to_dict()
        for key, raw in overrides.items():
            target = data
            name = key
            if key.startswith("neat."):
                target = data["neat"]
                name = key.split(".", 1)[1]
            if name not in target:
                raise ConfigError(f"unknown config key {key!r}")
            target[name] = _coerce(raw, target[name])
        return RunConfig.from_dict(data)


def _coerce(raw: str, current):
    if isinstance(current, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"cannot parse boolean from {raw!r}")
    if isinstance(current, int) and not isinstance(current, bool):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, list):
        value = yaml.safe_load(raw)
        if not isinstance(value, list):
            raise ConfigError(f"expected a list for {raw!r}")
        return value
    return raw
