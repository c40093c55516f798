"""Tiny enumerable Dec-POMDP with randomly generated deterministic tables."""
from __future__ import annotations

import numpy as np

from .base import DecPomdpEnv, EnvSpec, StepResult, TabularDynamics


class TabularEnv(DecPomdpEnv):
    """Node-hopping game: the joint action deterministically selects the next
    node and a shared reward drawn once from ``structure_seed``.

    Every episode starts at node 0 and runs exactly ``episode_limit`` steps.
    Observations and state are the one-hot of the current node, so the
    environment is enumerable and the backward-induction oracle applies.
    """

    def __init__(
        self,
        n_nodes: int = 6,
        n_agents: int = 2,
        n_actions: int = 3,
        episode_limit: int = 8,
        structure_seed: int = 0,
    ):
        super().__init__()
        rng = np.random.default_rng(structure_seed)
        n_joint = n_actions ** n_agents
        self._next = rng.integers(n_nodes, size=(n_nodes, n_joint))
        self._reward = rng.uniform(0.0, 1.0, size=(n_nodes, n_joint)).round(3)
        self.spec = EnvSpec(
            n_agents=n_agents,
            n_actions=n_actions,
            obs_dim=n_nodes,
            state_dim=n_nodes,
            episode_limit=episode_limit,
            has_action_mask=False,
        )
        self._node = 0
        self._t = 0

    def _result(self, reward: float, done: bool) -> StepResult:
        onehot = np.zeros(self.spec.state_dim, dtype=np.float32)
        onehot[self._node] = 1.0
        return StepResult(
            obs=np.tile(onehot, (self.spec.n_agents, 1)),
            state=onehot,
            reward=reward,
            done=done,
            avail_actions=np.ones((self.spec.n_agents, self.spec.n_actions), dtype=bool),
        )

    def reset(self, seed: int) -> StepResult:
        del seed  # dynamics are fixed by structure_seed and the start node
        self._node = 0
        self._t = 0
        self._done = False
        self.success = None
        res = self._result(0.0, False)
        self._avail = res.avail_actions
        return res

    def step(self, joint_action) -> StepResult:
        joint_action = self._guard_step(joint_action)
        j = int(np.ravel_multi_index(tuple(joint_action), (self.spec.n_actions,) * self.spec.n_agents))
        reward = float(self._reward[self._node, j])
        self._node = int(self._next[self._node, j])
        self._t += 1
        self._done = self._t >= self.spec.episode_limit
        return self._result(reward, self._done)

    def dynamics(self) -> TabularDynamics:
        n_joint = self.spec.n_actions ** self.spec.n_agents
        return TabularDynamics(
            n_states=self._next.shape[0],
            n_agents=self.spec.n_agents,
            n_actions=self.spec.n_actions,
            start_state=0,
            next_state=self._next.copy(),
            reward=self._reward.copy(),
            terminal=np.zeros((self._next.shape[0], n_joint), dtype=bool),
        )
