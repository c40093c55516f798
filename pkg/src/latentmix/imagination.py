"""Latent world model: posterior encoder/decoder over joint agent hiddens,
an action-conditioned prior transition (itself a small VAE), a feasible-action
head, deterministic greedy rollouts, and the recurrent rollout aggregator.

Training uses reparameterized samples; rollout generation is fully
deterministic and works from distribution means only.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .agents import RecurrentQNet, greedy_actions

LOG_STD_MIN = -10.0
LOG_STD_MAX = 2.0


@dataclass
class GaussianLatent:
    """Diagonal Gaussian over a latent state."""

    mean: torch.Tensor
    log_std: torch.Tensor

    @property
    def std(self) -> torch.Tensor:
        return self.log_std.exp()

    def sample(self, generator: Optional[torch.Generator] = None) -> torch.Tensor:
        eps = torch.randn(self.mean.shape, generator=generator, dtype=self.mean.dtype, device=self.mean.device)
        return self.mean + self.std * eps

    def detach(self) -> "GaussianLatent":
        return GaussianLatent(self.mean.detach(), self.log_std.detach())


def standard_normal_like(dist: GaussianLatent) -> GaussianLatent:
    return GaussianLatent(torch.zeros_like(dist.mean), torch.zeros_like(dist.log_std))


def kl_gaussian(q: GaussianLatent, p: GaussianLatent) -> torch.Tensor:
    """Analytic KL(q || p) for diagonal Gaussians, summed over the last dim."""
    if q.mean.shape[-1] != p.mean.shape[-1]:
        raise ValueError(f"latent dims differ: {q.mean.shape[-1]} vs {p.mean.shape[-1]}")
    log_ratio = p.log_std - q.log_std
    var_p = (2.0 * p.log_std).exp()
    term = ((2.0 * q.log_std).exp() + (q.mean - p.mean) ** 2) / (2.0 * var_p)
    return (log_ratio + term - 0.5).sum(dim=-1)


def kl_balanced(q: GaussianLatent, p: GaussianLatent, alpha: float) -> torch.Tensor:
    """KL whose value equals kl_gaussian(q, p) but whose gradient is split:
    a share alpha trains the posterior against a frozen prior and (1 - alpha)
    trains the prior against a frozen posterior."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return alpha * kl_gaussian(q, p.detach()) + (1.0 - alpha) * kl_gaussian(q.detach(), p)


def _mlp(in_dim: int, out_dim: int, width: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Linear(in_dim, width),
        nn.ELU(),
        nn.Linear(width, width),
        nn.ELU(),
        nn.Linear(width, out_dim),
    )


def _split_gaussian(raw: torch.Tensor) -> GaussianLatent:
    mean, log_std = raw.chunk(2, dim=-1)
    return GaussianLatent(mean, log_std.clamp(LOG_STD_MIN, LOG_STD_MAX))


class StateAggregator(nn.Module):
    """Order-aware reduction of a variable-length vector sequence to a
    state-sized summary; parameter count is independent of sequence length."""

    def __init__(self, input_dim: int, state_dim: int, hidden_dim: int = 64):
        super().__init__()
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.rnn = nn.GRUCell(input_dim, hidden_dim)
        self.proj = nn.Linear(hidden_dim, state_dim)

    def forward(self, sequence: torch.Tensor) -> torch.Tensor:
        """sequence [length, batch, input_dim] -> [batch, state_dim]."""
        if sequence.shape[0] == 0:
            raise ValueError("cannot aggregate an empty sequence")
        h = torch.zeros(sequence.shape[1], self.hidden_dim, dtype=sequence.dtype, device=sequence.device)
        for step in sequence:
            h = self.rnn(step, h)
        return self.proj(h)


@dataclass
class ImaginedRollout:
    """k-step deterministic rollout anchored at one real step: the root
    latent plus k predicted latents, the decoded joint hiddens behind each
    imagined decision, and the greedy joint actions taken along the way."""

    latents: List[torch.Tensor]          # k+1 entries [batch, latent_dim]
    decoded_hiddens: List[torch.Tensor]  # k entries [batch, n_agents * hidden_dim]
    actions: List[torch.Tensor]          # k+1 entries [batch, n_agents]

    def latent_stack(self) -> torch.Tensor:
        return torch.stack(self.latents)


class ImaginationModule(nn.Module):
    def __init__(
        self,
        n_agents: int,
        hidden_dim: int,
        n_actions: int,
        latent_dim: int,
        state_dim: int,
        width: int = 128,
        aggregator_hidden: int = 64,
    ):
        super().__init__()
        self.n_agents = n_agents
        self.hidden_dim = hidden_dim
        self.n_actions = n_actions
        self.latent_dim = latent_dim
        joint_dim = n_agents * hidden_dim
        action_dim = n_agents * n_actions
        self.encoder = _mlp(joint_dim, 2 * latent_dim, width)
        self.decoder = _mlp(latent_dim, joint_dim, width)
        self.prior_encoder = _mlp(latent_dim + action_dim, 2 * latent_dim, width)
        self.prior_decoder = _mlp(latent_dim, latent_dim + action_dim, width)
        self.feasible_head = _mlp(latent_dim, action_dim, width)
        self.aggregator = StateAggregator(latent_dim, state_dim, aggregator_hidden)

    # -- posterior ----------------------------------------------------------

    def posterior_encode(self, joint_hidden: torch.Tensor) -> GaussianLatent:
        if joint_hidden.shape[-1] != self.n_agents * self.hidden_dim:
            raise ValueError(
                f"joint hidden must have dim {self.n_agents * self.hidden_dim}, got {joint_hidden.shape[-1]}"
            )
        return _split_gaussian(self.encoder(joint_hidden))

    def posterior_decode(self, latent: torch.Tensor) -> torch.Tensor:
        return self.decoder(latent)

    # -- prior --------------------------------------------------------------

    def prior_transition(
        self,
        prev_latent: torch.Tensor,
        joint_action_onehot: torch.Tensor,
        generator: Optional[torch.Generator] = None,
        sample: bool = False,
        noise: Optional[torch.Tensor] = None,
    ):
        """Predict the next latent from (previous latent, joint action) and
        auto-encode that input pair through the predicted latent.

        The reconstruction decodes the mean (inference) unless sample=True
        (fresh reparameterized draw) or an explicit standard-normal ``noise``
        tensor is supplied.
        """
        if prev_latent.shape[-1] != self.latent_dim:
            raise ValueError(f"prev_latent must have dim {self.latent_dim}, got {prev_latent.shape[-1]}")
        if joint_action_onehot.shape[-1] != self.n_agents * self.n_actions:
            raise ValueError("joint action one-hot has the wrong width")
        pair = torch.cat([prev_latent, joint_action_onehot], dim=-1)
        dist = _split_gaussian(self.prior_encoder(pair))
        if noise is not None:
            latent = dist.mean + dist.std * noise
        elif sample:
            latent = dist.sample(generator)
        else:
            latent = dist.mean
        return dist, self.prior_decoder(latent)

    # -- feasibility --------------------------------------------------------

    def predict_feasible_actions(self, latent: torch.Tensor) -> torch.Tensor:
        """Per-agent per-action availability logits [..., n_agents, n_actions]."""
        logits = self.feasible_head(latent)
        return logits.reshape(*latent.shape[:-1], self.n_agents, self.n_actions)

    @staticmethod
    def feasibility_mask(logits: torch.Tensor) -> torch.Tensor:
        """sigmoid(logit) > 0.5 with an all-true fallback for empty rows."""
        mask = logits > 0.0
        empty = ~mask.any(dim=-1, keepdim=True)
        return mask | empty

    # -- rollout ------------------------------------------------------------

    def generate_rollout(
        self,
        joint_hidden: torch.Tensor,
        true_avail: Optional[torch.Tensor],
        k: int,
        agent: RecurrentQNet,
    ) -> ImaginedRollout:
        """Imagine k latent steps forward under the agent's greedy policy.

        The root action uses the true availability mask (when the environment
        has one); later steps consult the feasible-action head. Everything is
        computed from distribution means, so repeated calls are bit-identical
        and no random state is consumed.
        """
        if k < 1:
            raise ValueError(f"rollout horizon must be >= 1, got {k}")
        batch = joint_hidden.shape[0]
        latent = self.posterior_encode(joint_hidden).mean
        q = agent.q_values(joint_hidden.reshape(batch, self.n_agents, self.hidden_dim))
        actions = greedy_actions(q, true_avail)

        latents = [latent]
        decoded: List[torch.Tensor] = []
        taken = [actions]
        masked_env = true_avail is not None
        for _ in range(k):
            onehot = F.one_hot(taken[-1], self.n_actions).to(latent.dtype).reshape(batch, -1)
            dist, _ = self.prior_transition(latents[-1], onehot)
            hidden = self.posterior_decode(dist.mean)
            q = agent.q_values(hidden.reshape(batch, self.n_agents, self.hidden_dim))
            avail = self.feasibility_mask(self.predict_feasible_actions(dist.mean)) if masked_env else None
            latents.append(dist.mean)
            decoded.append(hidden)
            taken.append(greedy_actions(q, avail))
        return ImaginedRollout(latents=latents, decoded_hiddens=decoded, actions=taken)

    def aggregate_rollout(self, latents) -> torch.Tensor:
        """Fuse the k+1 rollout latents into one state-sized vector."""
        seq = latents if isinstance(latents, torch.Tensor) else torch.stack(list(latents))
        return self.aggregator(seq)
