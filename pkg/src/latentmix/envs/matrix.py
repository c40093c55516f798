"""Cooperative two-player matrix game, one-shot or repeated."""
from __future__ import annotations

import numpy as np

from .base import DecPomdpEnv, EnvSpec, StepResult, TabularDynamics

# Monotone payoff (both orderings 1 > 0 > 2) with a unique optimum of 10 at
# the joint action (1, 1), so no mixer is asked to represent a non-monotone
# surface and zero-initialized greedy play is not optimal by accident.
DEFAULT_PAYOFF = ((3.0, 6.0, 1.0), (6.0, 10.0, 2.0), (1.0, 2.0, 0.0))


class MatrixGameEnv(DecPomdpEnv):
    """Both agents pick a row/column index and share the payoff.

    The game is stateless: observations are zero vectors and the global
    state is the normalized round counter (constant 0 for one-shot play).
    """

    def __init__(self, payoff=DEFAULT_PAYOFF, repeats: int = 1, obs_dim: int = 1):
        super().__init__()
        self.payoff = np.asarray(payoff, dtype=np.float64)
        if self.payoff.ndim != 2 or self.payoff.shape[0] != self.payoff.shape[1]:
            raise ValueError("payoff must be a square matrix")
        if repeats < 1:
            raise ValueError("repeats must be >= 1")
        self.repeats = repeats
        self.spec = EnvSpec(
            n_agents=2,
            n_actions=self.payoff.shape[0],
            obs_dim=obs_dim,
            state_dim=1,
            episode_limit=repeats,
            has_action_mask=False,
        )
        self._t = 0
        self._total = 0.0

    def _result(self, reward: float, done: bool) -> StepResult:
        return StepResult(
            obs=np.zeros((2, self.spec.obs_dim), dtype=np.float32),
            state=np.array([self._t / self.repeats], dtype=np.float32),
            reward=reward,
            done=done,
            avail_actions=np.ones((2, self.spec.n_actions), dtype=bool),
        )

    def reset(self, seed: int) -> StepResult:
        del seed  # stateless game, nothing to randomize
        self._t = 0
        self._total = 0.0
        self._done = False
        self.success = None
        res = self._result(0.0, False)
        self._avail = res.avail_actions
        return res

    def step(self, joint_action) -> StepResult:
        joint_action = self._guard_step(joint_action)
        reward = float(self.payoff[joint_action[0], joint_action[1]])
        self._t += 1
        self._total += reward
        self._done = self._t >= self.repeats
        if self._done:
            self.success = bool(self._total >= self.repeats * self.payoff.max() - 1e-9)
        return self._result(reward, self._done)

    def dynamics(self) -> TabularDynamics:
        n = self.spec.n_actions
        flat = self.payoff.reshape(-1)
        states = self.repeats
        return TabularDynamics(
            n_states=states,
            n_agents=2,
            n_actions=n,
            start_state=0,
            next_state=np.minimum(np.arange(states) + 1, states - 1)[:, None].repeat(n * n, axis=1),
            reward=np.tile(flat, (states, 1)),
            terminal=np.tile(np.arange(states)[:, None] == states - 1, (1, n * n)),
        )
