"""Episode replay buffer and padded time-major batching."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
import torch

from .envs.base import EpisodeRecord


class ReplayBuffer:
    """FIFO ring of whole episodes with uniform without-replacement sampling."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._episodes: deque[EpisodeRecord] = deque(maxlen=capacity)
        self.total_added = 0

    def __len__(self) -> int:
        return len(self._episodes)

    def add(self, episode: EpisodeRecord) -> None:
        self._episodes.append(episode)
        self.total_added += 1

    def sample(self, batch_size: int, rng: np.random.Generator) -> List[EpisodeRecord]:
        if batch_size > len(self._episodes):
            raise ValueError(f"asked for {batch_size} episodes but buffer holds {len(self._episodes)}")
        idx = rng.choice(len(self._episodes), size=batch_size, replace=False)
        return [self._episodes[int(i)] for i in idx]


@dataclass
class Batch:
    """Padded time-major episode batch.

    Observation-side tensors span T+1 points; action-side tensors span T
    steps. ``step_mask`` is 1 for real steps; padded availability rows are
    all-true so masked argmax stays well defined.
    """

    obs: torch.Tensor      # [T+1, B, n_agents, obs_dim]
    state: torch.Tensor    # [T+1, B, state_dim]
    avail: torch.Tensor    # [T+1, B, n_agents, n_actions] bool
    actions: torch.Tensor  # [T, B, n_agents] int64
    reward: torch.Tensor   # [T, B]
    done: torch.Tensor     # [T, B]
    step_mask: torch.Tensor  # [T, B]

    @property
    def max_t(self) -> int:
        return self.actions.shape[0]

    @property
    def batch_size(self) -> int:
        return self.actions.shape[1]

    def point_mask(self) -> torch.Tensor:
        """[T+1, B] mask of real observation points: the initial point plus
        one point after every real step."""
        ones = torch.ones(1, self.batch_size, dtype=self.step_mask.dtype, device=self.step_mask.device)
        return torch.cat([ones, self.step_mask], dim=0)

    def to(self, dtype: torch.dtype) -> "Batch":
        cast = lambda t: t.to(dtype) if t.is_floating_point() else t
        return Batch(**{name: cast(getattr(self, name)) for name in self.__dataclass_fields__})


def collate(episodes: Sequence[EpisodeRecord], dtype: torch.dtype = torch.float32) -> Batch:
    max_t = max(ep.length for ep in episodes)
    b = len(episodes)
    n, obs_dim = episodes[0].obs.shape[1:]
    state_dim = episodes[0].states.shape[1]
    n_actions = episodes[0].avail.shape[2]

    obs = np.zeros((max_t + 1, b, n, obs_dim), dtype=np.float32)
    state = np.zeros((max_t + 1, b, state_dim), dtype=np.float32)
    avail = np.ones((max_t + 1, b, n, n_actions), dtype=bool)
    actions = np.zeros((max_t, b, n), dtype=np.int64)
    reward = np.zeros((max_t, b), dtype=np.float32)
    done = np.zeros((max_t, b), dtype=np.float32)
    step_mask = np.zeros((max_t, b), dtype=np.float32)

    for i, ep in enumerate(episodes):
        t = ep.length
        obs[: t + 1, i] = ep.obs
        state[: t + 1, i] = ep.states
        avail[: t + 1, i] = ep.avail
        actions[:t, i] = ep.actions
        reward[:t, i] = ep.rewards
        done[:t, i] = ep.done
        step_mask[:t, i] = 1.0

    return Batch(
        obs=torch.from_numpy(obs).to(dtype),
        state=torch.from_numpy(state).to(dtype),
        avail=torch.from_numpy(avail),
        actions=torch.from_numpy(actions),
        reward=torch.from_numpy(reward).to(dtype),
        done=torch.from_numpy(done).to(dtype),
        step_mask=torch.from_numpy(step_mask).to(dtype),
    )
