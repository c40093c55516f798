"""Run configuration: one flat record covering algorithm, environment,
optimization, and evaluation settings."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

ALGOS = ("mbvd", "qmix", "vdn", "qmix-rs", "qmix-ls")
ENVS = ("matrix", "pred_prey", "tabular")

_DEFAULT_PAYOFF = [[3.0, 6.0, 1.0], [6.0, 10.0, 2.0], [1.0, 2.0, 0.0]]


@dataclass
class RunConfig:
    # experiment selection
    algo: str = "mbvd"
    env: str = "pred_prey"
    seed: int = 0

    # optimization
    lr: float = 5e-4
    rmsprop_smoothing: float = 0.99
    rmsprop_eps: float = 1e-5
    gamma: float = 0.99
    batch_size: int = 32
    buffer_capacity: int = 5000
    target_update_episodes: int = 200
    grad_clip: float = 10.0
    train_ratio: int = 1

    # exploration
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    anneal_steps: int = 50_000

    # imagination / mixer
    k: int = 3
    alpha: float = 0.3
    per_agent_latent: int = 8
    hidden_dim: int = 64
    mixer_embed_dim: int = 32
    hypernet_hidden: int = 64
    model_width: int = 128
    aggregator_hidden: int = 64

    # run budget and evaluation
    total_env_steps: int = 200_000
    eval_every: int = 10_000
    eval_episodes: int = 32
    checkpoint_every: int = 0  # env steps between extra checkpoints; 0 = final only
    torch_threads: int = 1

    # environment parameters
    n_agents: int = 2
    episode_limit: Optional[int] = None  # None = per-environment default
    payoff: list = field(default_factory=lambda: [row[:] for row in _DEFAULT_PAYOFF])
    matrix_repeats: int = 1
    grid_size: int = 7
    sight_radius: int = 2
    n_prey: int = 1
    capture_bonus: float = 10.0
    shaping_coeff: float = 0.1
    prey_move_prob: float = 1.0
    tabular_nodes: int = 6
    tabular_actions: int = 3
    tabular_structure_seed: int = 0

    def validate(self) -> "RunConfig":
        if self.algo not in ALGOS:
            raise ValueError(f"unknown algo {self.algo!r}; choose from {ALGOS}")
        if self.env not in ENVS:
            raise ValueError(f"unknown env {self.env!r}; choose from {ENVS}")
        if self.k < 1:
            raise ValueError(f"rollout horizon k must be >= 1, got {self.k}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not 0.0 <= self.epsilon_end <= self.epsilon_start <= 1.0:
            raise ValueError("need 0 <= epsilon_end <= epsilon_start <= 1")
        for name in ("batch_size", "buffer_capacity", "target_update_episodes", "anneal_steps",
                     "per_agent_latent", "hidden_dim", "eval_episodes", "train_ratio", "n_agents"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.env == "matrix" and self.n_agents != 2:
            raise ValueError("the matrix game is a 2-agent environment")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **overrides) -> "RunConfig":
        return dataclasses.replace(self, **overrides)


_FIELD_NAMES = tuple(f.name for f in dataclasses.fields(RunConfig))


def config_from_dict(data: dict) -> RunConfig:
    unknown = sorted(set(data) - set(_FIELD_NAMES))
    if unknown:
        raise ValueError(
            f"unknown config key(s) {unknown}; valid keys: {sorted(_FIELD_NAMES)}"
        )
    return RunConfig(**data).validate()


def load_config(path, overrides: Optional[dict] = None) -> RunConfig:
    """Read a flat JSON config file and apply overrides on top."""
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise ValueError("config file must hold a flat JSON object")
    if overrides:
        data.update(overrides)
    return config_from_dict(data)


def save_config(config: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
