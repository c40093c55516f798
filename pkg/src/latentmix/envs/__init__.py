from .base import (
    CapacityError,
    DecPomdpEnv,
    EnvSpec,
    EpisodeRecord,
    StepResult,
    TabularDynamics,
    brute_force_optimal_return,
    discretize_action_space,
)
from .grid import PredatorPreyEnv
from .matrix import MatrixGameEnv
from .tabular import TabularEnv

_GRID_DEFAULT_LIMIT = 40
_TABULAR_DEFAULT_LIMIT = 8


def make_env(config) -> DecPomdpEnv:
    """Build the environment selected by a RunConfig."""
    if config.env == "matrix":
        limit = config.episode_limit or config.matrix_repeats
        return MatrixGameEnv(payoff=config.payoff, repeats=limit)
    if config.env == "pred_prey":
        return PredatorPreyEnv(
            n_agents=config.n_agents,
            grid_size=config.grid_size,
            sight_radius=config.sight_radius,
            n_prey=config.n_prey,
            episode_limit=config.episode_limit or _GRID_DEFAULT_LIMIT,
            capture_bonus=config.capture_bonus,
            shaping_coeff=config.shaping_coeff,
            prey_move_prob=config.prey_move_prob,
        )
    if config.env == "tabular":
        return TabularEnv(
            n_nodes=config.tabular_nodes,
            n_agents=config.n_agents,
            n_actions=config.tabular_actions,
            episode_limit=config.episode_limit or _TABULAR_DEFAULT_LIMIT,
            structure_seed=config.tabular_structure_seed,
        )
    raise ValueError(f"unknown env {config.env!r}")


__all__ = [
    "CapacityError",
    "DecPomdpEnv",
    "EnvSpec",
    "EpisodeRecord",
    "StepResult",
    "TabularDynamics",
    "brute_force_optimal_return",
    "discretize_action_space",
    "MatrixGameEnv",
    "PredatorPreyEnv",
    "TabularEnv",
    "make_env",
]
