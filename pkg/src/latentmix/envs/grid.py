"""Partially observable predator-prey grid with wall-aware action masks."""
from __future__ import annotations

import numpy as np

from .base import DecPomdpEnv, EnvSpec, StepResult

STAY, UP, DOWN, LEFT, RIGHT = range(5)
_MOVES = np.array([[0, 0], [-1, 0], [1, 0], [0, -1], [0, 1]])


class PredatorPreyEnv(DecPomdpEnv):
    """Predators (the agents) chase randomly walking prey on a square grid.

    Each agent sees a (2*sight+1)^2 window of predator/prey/out-of-bounds
    channels plus its own normalized position; it cannot tell which predator
    it is. The shared reward is a distance-shaping term (the summed decrease
    of each active prey's distance to its nearest predator) plus a bonus per
    capture; a prey is captured when a predator ends the step on its cell.
    Moving off-grid is excluded by the availability mask rather than being a
    no-op. ``prey_move_prob`` scales the prey random walk; 0 gives a fully
    deterministic environment.
    """

    def __init__(
        self,
        n_agents: int = 2,
        grid_size: int = 7,
        sight_radius: int = 2,
        n_prey: int = 1,
        episode_limit: int = 40,
        capture_bonus: float = 10.0,
        shaping_coeff: float = 0.1,
        prey_move_prob: float = 1.0,
    ):
        super().__init__()
        if grid_size < 2 or n_agents < 1 or n_prey < 1:
            raise ValueError("need grid_size >= 2, n_agents >= 1, n_prey >= 1")
        if n_agents + n_prey > grid_size * grid_size:
            raise ValueError("more entities than grid cells")
        if not 0.0 <= prey_move_prob <= 1.0:
            raise ValueError("prey_move_prob must lie in [0, 1]")
        self.grid_size = grid_size
        self.sight_radius = sight_radius
        self.n_prey = n_prey
        self.capture_bonus = capture_bonus
        self.shaping_coeff = shaping_coeff
        self.prey_move_prob = prey_move_prob
        window = 2 * sight_radius + 1
        self.spec = EnvSpec(
            n_agents=n_agents,
            n_actions=5,
            obs_dim=3 * window * window + 2,
            state_dim=2 * n_agents + 3 * n_prey,
            episode_limit=episode_limit,
            has_action_mask=True,
        )
        self._rng = np.random.default_rng(0)
        self._pred = np.zeros((n_agents, 2), dtype=np.int64)
        self._prey = np.zeros((n_prey, 2), dtype=np.int64)
        self._alive = np.ones(n_prey, dtype=bool)
        self._t = 0

    # -- geometry helpers ---------------------------------------------------

    def _valid_moves(self, pos: np.ndarray) -> np.ndarray:
        dest = pos[None, :] + _MOVES
        return ((dest >= 0) & (dest < self.grid_size)).all(axis=1)

    def _avail_mask(self) -> np.ndarray:
        return np.stack([self._valid_moves(p) for p in self._pred])

    def _potential(self, pred: np.ndarray, prey: np.ndarray, alive: np.ndarray) -> float:
        total = 0.0
        for j in range(self.n_prey):
            if alive[j]:
                total += float(np.abs(pred - prey[j]).sum(axis=1).min())
        return total

    def _observations(self) -> np.ndarray:
        r = self.sight_radius
        window = 2 * r + 1
        obs = np.zeros((self.spec.n_agents, 3, window, window), dtype=np.float32)
        scale = max(self.grid_size - 1, 1)
        for a in range(self.spec.n_agents):
            top_left = self._pred[a] - r
            for p in self._pred:
                rel = p - top_left
                if (0 <= rel).all() and (rel < window).all():
                    obs[a, 0, rel[0], rel[1]] += 1.0
            for j in range(self.n_prey):
                if not self._alive[j]:
                    continue
                rel = self._prey[j] - top_left
                if (0 <= rel).all() and (rel < window).all():
                    obs[a, 1, rel[0], rel[1]] += 1.0
            rows = top_left[0] + np.arange(window)
            cols = top_left[1] + np.arange(window)
            outside = ((rows < 0) | (rows >= self.grid_size))[:, None] | (
                (cols < 0) | (cols >= self.grid_size)
            )[None, :]
            obs[a, 2] = outside.astype(np.float32)
        flat = obs.reshape(self.spec.n_agents, -1)
        own = (self._pred / scale).astype(np.float32)
        return np.concatenate([flat, own], axis=1)

    def _state(self) -> np.ndarray:
        scale = max(self.grid_size - 1, 1)
        pred = (self._pred / scale).reshape(-1)
        prey = np.where(self._alive[:, None], self._prey / scale, 0.0).reshape(-1)
        return np.concatenate([pred, prey, self._alive.astype(np.float64)]).astype(np.float32)

    def _result(self, reward: float, done: bool) -> StepResult:
        avail = self._avail_mask()
        self._avail = avail
        return StepResult(
            obs=self._observations(),
            state=self._state(),
            reward=reward,
            done=done,
            avail_actions=avail,
        )

    # -- environment API ----------------------------------------------------

    def reset(self, seed: int) -> StepResult:
        self._rng = np.random.default_rng(seed)
        cells = self._rng.choice(self.grid_size * self.grid_size, size=self.spec.n_agents + self.n_prey, replace=False)
        coords = np.stack(np.unravel_index(cells, (self.grid_size, self.grid_size)), axis=1)
        self._pred = coords[: self.spec.n_agents].astype(np.int64)
        self._prey = coords[self.spec.n_agents:].astype(np.int64)
        self._alive = np.ones(self.n_prey, dtype=bool)
        self._t = 0
        self._done = False
        self.success = None
        return self._result(0.0, False)

    def step(self, joint_action) -> StepResult:
        joint_action = self._guard_step(joint_action)
        alive_before = self._alive.copy()
        phi_before = self._potential(self._pred, self._prey, alive_before)

        self._pred = self._pred + _MOVES[joint_action]
        for j in range(self.n_prey):
            if not self._alive[j] or self.prey_move_prob == 0.0:
                continue
            if self.prey_move_prob < 1.0 and self._rng.random() >= self.prey_move_prob:
                continue
            options = np.flatnonzero(self._valid_moves(self._prey[j]))
            move = options[self._rng.integers(len(options))]
            self._prey[j] = self._prey[j] + _MOVES[move]

        captured = 0
        for j in range(self.n_prey):
            if self._alive[j] and (self._pred == self._prey[j]).all(axis=1).any():
                self._alive[j] = False
                captured += 1

        phi_after = self._potential(self._pred, self._prey, alive_before)
        reward = self.shaping_coeff * (phi_before - phi_after) + self.capture_bonus * captured

        self._t += 1
        all_caught = not self._alive.any()
        self._done = all_caught or self._t >= self.spec.episode_limit
        if self._done:
            self.success = all_caught
        return self._result(reward, self._done)
