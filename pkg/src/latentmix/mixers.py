"""Value-decomposition mixers and the individual-global-max checker."""
from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .envs.base import CapacityError

MAX_IGM_JOINT_ACTIONS = 100_000


class VdnMixer(nn.Module):
    """Additive decomposition: the joint value is the sum of agent values."""

    cond_dim = 0

    def forward(self, chosen_q: torch.Tensor, cond=None) -> torch.Tensor:
        return chosen_q.sum(dim=-1)


class QmixMixer(nn.Module):
    """Monotonic two-layer mixer whose weights are produced by hypernetworks
    of the conditioning vector; absolute values keep every weight
    non-negative, so the joint value never decreases in any agent value."""

    def __init__(self, n_agents: int, cond_dim: int, embed_dim: int = 32, hypernet_hidden: int = 64):
        super().__init__()
        self.n_agents = n_agents
        self.cond_dim = cond_dim
        self.embed_dim = embed_dim
        self.hyper_w1 = nn.Sequential(
            nn.Linear(cond_dim, hypernet_hidden),
            nn.ELU(),
            nn.Linear(hypernet_hidden, n_agents * embed_dim),
        )
        self.hyper_b1 = nn.Linear(cond_dim, embed_dim)
        self.hyper_w2 = nn.Sequential(
            nn.Linear(cond_dim, hypernet_hidden),
            nn.ELU(),
            nn.Linear(hypernet_hidden, embed_dim),
        )
        self.hyper_b2 = nn.Sequential(
            nn.Linear(cond_dim, hypernet_hidden),
            nn.ELU(),
            nn.Linear(hypernet_hidden, 1),
        )

    def forward(self, chosen_q: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        """chosen_q [..., n_agents], cond [..., cond_dim] -> q_tot [...]."""
        if chosen_q.shape[-1] != self.n_agents or cond.shape[-1] != self.cond_dim:
            raise ValueError(
                f"expected chosen_q[..., {self.n_agents}] and cond[..., {self.cond_dim}], "
                f"got {tuple(chosen_q.shape)} and {tuple(cond.shape)}"
            )
        lead = chosen_q.shape[:-1]
        q = chosen_q.reshape(-1, 1, self.n_agents)
        c = cond.reshape(-1, self.cond_dim)
        w1 = self.hyper_w1(c).abs().view(-1, self.n_agents, self.embed_dim)
        b1 = self.hyper_b1(c).view(-1, 1, self.embed_dim)
        hidden = F.elu(torch.bmm(q, w1) + b1)
        w2 = self.hyper_w2(c).abs().view(-1, self.embed_dim, 1)
        b2 = self.hyper_b2(c).view(-1, 1, 1)
        return (torch.bmm(hidden, w2) + b2).view(lead)


def check_igm(mixer: nn.Module, q_matrix: torch.Tensor, cond) -> bool:
    """True iff the joint greedy action of the mixed value equals the tuple
    of per-agent greedy actions (ties to the lowest index on both sides).

    Enumerates all n_actions ** n_agents joint actions.
    """
    q_matrix = torch.as_tensor(q_matrix)
    n_agents, n_actions = q_matrix.shape
    n_joint = n_actions ** n_agents
    if n_joint > MAX_IGM_JOINT_ACTIONS:
        raise CapacityError(f"{n_joint} joint actions exceed the budget of {MAX_IGM_JOINT_ACTIONS}")

    local = tuple(int(i) for i in q_matrix.argmax(dim=-1))

    # Lexicographic enumeration makes argmax's first-hit tie-break pick the
    # lowest-index joint tuple.
    grids = np.stack(np.meshgrid(*[np.arange(n_actions)] * n_agents, indexing="ij"), axis=-1)
    joints = torch.as_tensor(grids.reshape(n_joint, n_agents))
    chosen = q_matrix.unsqueeze(0).expand(n_joint, -1, -1).gather(2, joints.unsqueeze(-1)).squeeze(-1)
    chosen = chosen.to(q_matrix.dtype)
    if getattr(mixer, "cond_dim", 0):
        cond = torch.as_tensor(cond, dtype=q_matrix.dtype).reshape(1, -1).expand(n_joint, -1)
        totals = mixer(chosen, cond)
    else:
        totals = mixer(chosen, None)
    joint = tuple(int(i) for i in joints[int(totals.argmax())])
    return joint == local
