"""Shared-parameter recurrent per-agent Q-network and action selection."""
from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

# Applied to unavailable actions before any max/argmax.
MASK_SENTINEL = -1e9


class RecurrentQNet(nn.Module):
    """One network shared by all agents: linear encoder, GRU core, linear
    Q head. Inputs are obs + last-action one-hot + agent-id one-hot."""

    def __init__(self, obs_dim: int, n_actions: int, n_agents: int, hidden_dim: int = 64):
        super().__init__()
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.n_agents = n_agents
        self.hidden_dim = hidden_dim
        in_dim = obs_dim + n_actions + n_agents
        self.fc_in = nn.Linear(in_dim, hidden_dim)
        self.rnn = nn.GRUCell(hidden_dim, hidden_dim)
        self.fc_out = nn.Linear(hidden_dim, n_actions)

    def init_hidden(self, rows: int) -> torch.Tensor:
        weight = self.fc_in.weight
        return torch.zeros(rows, self.hidden_dim, dtype=weight.dtype, device=weight.device)

    def forward(self, obs, last_action, agent_id, hidden):
        """One recurrent step over any leading batch shape.

        obs [..., obs_dim], last_action [..., n_actions], agent_id
        [..., n_agents], hidden [..., hidden_dim] -> (q, next_hidden).
        """
        for name, tensor, width in (
            ("obs", obs, self.obs_dim),
            ("last_action", last_action, self.n_actions),
            ("agent_id", agent_id, self.n_agents),
            ("hidden", hidden, self.hidden_dim),
        ):
            if tensor.shape[-1] != width:
                raise ValueError(f"{name} must have last dim {width}, got {tensor.shape[-1]}")
        x = torch.cat([obs, last_action, agent_id], dim=-1)
        lead = x.shape[:-1]
        x = F.elu(self.fc_in(x))
        h = self.rnn(x.reshape(-1, self.hidden_dim), hidden.reshape(-1, self.hidden_dim))
        h = h.reshape(*lead, self.hidden_dim)
        return self.fc_out(h), h

    def q_values(self, hidden: torch.Tensor) -> torch.Tensor:
        """Q head applied to an existing hidden state."""
        return self.fc_out(hidden)


def masked_q(q: torch.Tensor, avail: torch.Tensor) -> torch.Tensor:
    return q.masked_fill(~avail, MASK_SENTINEL)


def greedy_actions(q: torch.Tensor, avail=None) -> torch.Tensor:
    """Argmax over available actions; ties break to the lowest index."""
    if avail is not None:
        q = masked_q(q, avail)
    return q.argmax(dim=-1)


def select_actions(q, avail, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    """Per-agent epsilon-greedy over the availability mask.

    q [n_agents, n_actions] (tensor or array), avail bool of the same shape.
    Exploring agents draw uniformly from their available actions.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    q = np.asarray(q.detach() if isinstance(q, torch.Tensor) else q, dtype=np.float64)
    avail = np.asarray(avail, dtype=bool)
    if not avail.any(axis=1).all():
        raise ValueError("an agent has no available action")
    actions = np.where(avail, q, MASK_SENTINEL).argmax(axis=1)
    for a in range(q.shape[0]):
        if rng.random() < epsilon:
            options = np.flatnonzero(avail[a])
            actions[a] = options[rng.integers(len(options))]
    return actions.astype(np.int64)


def epsilon_at(env_step: int, anneal_steps: int = 50_000, start: float = 1.0, end: float = 0.05) -> float:
    """Linear anneal from start to end over anneal_steps, constant after."""
    if env_step < 0:
        raise ValueError("env_step must be non-negative")
    if env_step >= anneal_steps:
        return end
    frac = env_step / anneal_steps
    return start + (end - start) * frac
