"""Cooperative multi-agent Q-learning with value-decomposition mixers whose
conditioning can include an aggregated latent imagination rollout."""

from .agents import RecurrentQNet, epsilon_at, select_actions
from .config import RunConfig, config_from_dict, load_config
from .envs import (
    EnvSpec,
    EpisodeRecord,
    MatrixGameEnv,
    PredatorPreyEnv,
    StepResult,
    TabularEnv,
    brute_force_optimal_return,
    discretize_action_space,
    make_env,
)
from .imagination import GaussianLatent, ImaginationModule, ImaginedRollout, kl_balanced, kl_gaussian
from .learner import Learner, LossBreakdown, fit_imagination, latent_prediction_errors
from .mixers import QmixMixer, VdnMixer, check_igm
from .replay import Batch, ReplayBuffer, collate
from .runner import evaluate, run_episode, train_run

__version__ = "0.1.0"

__all__ = [
    "Batch",
    "EnvSpec",
    "EpisodeRecord",
    "GaussianLatent",
    "ImaginationModule",
    "ImaginedRollout",
    "Learner",
    "LossBreakdown",
    "MatrixGameEnv",
    "PredatorPreyEnv",
    "QmixMixer",
    "RecurrentQNet",
    "ReplayBuffer",
    "RunConfig",
    "StepResult",
    "TabularEnv",
    "VdnMixer",
    "brute_force_optimal_return",
    "check_igm",
    "collate",
    "config_from_dict",
    "discretize_action_space",
    "epsilon_at",
    "evaluate",
    "fit_imagination",
    "kl_balanced",
    "kl_gaussian",
    "latent_prediction_errors",
    "load_config",
    "make_env",
    "run_episode",
    "select_actions",
    "train_run",
]
