"""Dec-POMDP environment interface, enumeration oracle, and action discretizer.

All built-in environments are deterministic given the seed passed to
``reset``: replaying a stored action sequence reproduces the identical
reward sequence.
"""
from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional

import numpy as np

# Upper bound on (state, joint-action) pairs the exhaustive oracle will touch.
MAX_ORACLE_PAIRS = 1_000_000


class CapacityError(RuntimeError):
    """Raised when an exhaustive enumeration would exceed its size budget."""


@dataclass(frozen=True)
class EnvSpec:
    """Static shape information for one environment instance."""

    n_agents: int
    n_actions: int
    obs_dim: int
    state_dim: int
    episode_limit: int
    has_action_mask: bool

    def __post_init__(self):
        for name in ("n_agents", "n_actions", "obs_dim", "state_dim", "episode_limit"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"EnvSpec.{name} must be >= 1, got {getattr(self, name)}")


@dataclass
class StepResult:
    """One environment transition as seen by the agents.

    obs: [n_agents, obs_dim] float32, state: [state_dim] float32,
    avail_actions: [n_agents, n_actions] bool with at least one True per row.
    """

    obs: np.ndarray
    state: np.ndarray
    reward: float
    done: bool
    avail_actions: np.ndarray

    def __post_init__(self):
        if not np.isfinite(self.reward):
            raise ValueError("reward must be finite")
        if not self.avail_actions.any(axis=1).all():
            raise ValueError("every avail_actions row needs at least one feasible action")


@dataclass
class EpisodeRecord:
    """One stored trajectory.

    Observation-side arrays hold T+1 entries (initial plus one per step);
    action-side arrays hold T entries. ``done`` is 1.0 exactly at the last
    step, whether the episode terminated naturally or hit the limit.
    """

    obs: np.ndarray      # [T+1, n_agents, obs_dim]
    states: np.ndarray   # [T+1, state_dim]
    avail: np.ndarray    # [T+1, n_agents, n_actions] bool
    actions: np.ndarray  # [T, n_agents] int64
    rewards: np.ndarray  # [T] float32
    done: np.ndarray     # [T] float32

    @property
    def length(self) -> int:
        return self.actions.shape[0]

    @property
    def total_reward(self) -> float:
        return float(self.rewards.sum())

    def validate(self) -> None:
        t = self.length
        assert self.obs.shape[0] == t + 1 and self.states.shape[0] == t + 1
        assert self.avail.shape[0] == t + 1
        assert np.count_nonzero(self.done) == 1 and self.done[-1] == 1.0
        taken = np.take_along_axis(self.avail[:t], self.actions[..., None], axis=2)
        assert bool(taken.all()), "stored action violates stored availability mask"


class DecPomdpEnv(ABC):
    """Shared-reward multi-agent environment with per-agent partial views.

    Subclasses set ``self.spec`` in ``__init__`` and keep ``self._done`` /
    ``self._avail`` current; ``_guard_step`` enforces the usage contract.
    """

    spec: EnvSpec

    def __init__(self):
        self._done = True
        self._avail: Optional[np.ndarray] = None
        self.success: Optional[bool] = None

    @abstractmethod
    def reset(self, seed: int) -> StepResult:
        """Start a new episode; deterministic per seed."""

    @abstractmethod
    def step(self, joint_action: np.ndarray) -> StepResult:
        """Advance one step. ``joint_action`` is one int per agent."""

    def _guard_step(self, joint_action: np.ndarray) -> np.ndarray:
        joint_action = np.asarray(joint_action, dtype=np.int64)
        if self._done:
            raise ValueError("step() called on a finished episode; call reset() first")
        if joint_action.shape != (self.spec.n_agents,):
            raise ValueError(f"expected {self.spec.n_agents} actions, got shape {joint_action.shape}")
        if (joint_action < 0).any() or (joint_action >= self.spec.n_actions).any():
            raise ValueError("action index out of range")
        if not np.take_along_axis(self._avail, joint_action[:, None], axis=1).all():
            raise ValueError(f"joint action {joint_action.tolist()} violates the availability mask")
        return joint_action


@dataclass(frozen=True)
class TabularDynamics:
    """Deterministic enumerable model: next_state/reward/terminal indexed by
    (state, joint-action); joint actions are raveled with the first agent as
    the most significant digit."""

    n_states: int
    n_agents: int
    n_actions: int
    start_state: int
    next_state: np.ndarray  # [S, A**n] int64
    reward: np.ndarray      # [S, A**n] float64
    terminal: np.ndarray    # [S, A**n] bool

    def joint_index(self, actions) -> int:
        return int(np.ravel_multi_index(tuple(np.asarray(actions)), (self.n_actions,) * self.n_agents))


def brute_force_optimal_return(env_or_dynamics, horizon: int, gamma: float) -> float:
    """Exact optimal expected discounted return by backward induction over
    joint actions. Works on anything exposing ``dynamics() -> TabularDynamics``."""
    if isinstance(env_or_dynamics, TabularDynamics):
        dyn = env_or_dynamics
    else:
        getter = getattr(env_or_dynamics, "dynamics", None)
        if getter is None:
            raise ValueError(f"{type(env_or_dynamics).__name__} is not enumerable (no dynamics())")
        dyn = getter()
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    n_joint = dyn.n_actions ** dyn.n_agents
    if dyn.n_states * n_joint > MAX_ORACLE_PAIRS:
        raise CapacityError(
            f"{dyn.n_states} states x {n_joint} joint actions exceeds the oracle budget of {MAX_ORACLE_PAIRS}"
        )
    value = np.zeros(dyn.n_states)
    for _ in range(horizon):
        future = np.where(dyn.terminal, 0.0, value[dyn.next_state])
        value = (dyn.reward + gamma * future).max(axis=1)
    return float(value[dyn.start_state])


def discretize_action_space(k: int) -> np.ndarray:
    """K equally spaced atomic actions spanning [-1, 1].

    The integer-valued numerator keeps the set exactly symmetric about 0.
    """
    if k < 2:
        raise ValueError(f"need at least 2 atomic actions, got {k}")
    j = np.arange(k, dtype=np.float64)
    return (2.0 * j - (k - 1)) / (k - 1)
