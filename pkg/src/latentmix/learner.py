"""Loss computation and optimization for all algorithm variants.

One Learner owns the live networks, frozen target copies, and the optimizer.
The TD target is built entirely from target parameters (agent unroll,
posterior, prior, aggregator, mixer); rollout-conditioned variants differ
only in how the mixer's extra conditioning vector is produced:

  mbvd     imagined k-step latent rollout, aggregated
  qmix-rs  the next k real states from the stored episode, aggregated
  qmix-ls  the next k posterior latent means from the stored episode
  qmix     no extra conditioning (state only)
  vdn      additive mixer, no conditioning at all
"""
from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .agents import MASK_SENTINEL, RecurrentQNet
from .config import RunConfig
from .envs.base import EnvSpec
from .imagination import (
    GaussianLatent,
    ImaginationModule,
    StateAggregator,
    kl_balanced,
    kl_gaussian,
    standard_normal_like,
)
from .mixers import QmixMixer, VdnMixer
from .replay import Batch, ReplayBuffer, collate


@dataclass
class LossBreakdown:
    l_rl: float
    l_rc: float
    l_rc_prior: float
    l_kl: float
    l_fa: float
    total: float

    @classmethod
    def from_tensors(cls, l_rl, l_rc, l_rc_prior, l_kl, l_fa) -> "LossBreakdown":
        parts = [
            float(x.detach()) if isinstance(x, torch.Tensor) else float(x)
            for x in (l_rl, l_rc, l_rc_prior, l_kl, l_fa)
        ]
        return cls(*parts, total=sum(parts))


def _masked_mean(values: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    mask = mask.to(values.dtype)
    return (values * mask).sum() / mask.sum().clamp(min=1.0)


class _Nets(nn.Module):
    """Bundle of the networks one side (live or target) of the learner uses."""

    def __init__(self, agent, mixer, imagination=None, aggregator=None):
        super().__init__()
        self.agent = agent
        self.mixer = mixer
        self.imagination = imagination
        self.aggregator = aggregator


class Learner:
    def __init__(self, env_spec: EnvSpec, config: RunConfig):
        config.validate()
        self.env_spec = env_spec
        self.config = config
        self.algo = config.algo
        self.latent_dim = env_spec.n_agents * config.per_agent_latent

        torch.manual_seed(config.seed)
        agent = RecurrentQNet(env_spec.obs_dim, env_spec.n_actions, env_spec.n_agents, config.hidden_dim)
        cond_dim = {"vdn": 0, "qmix": env_spec.state_dim}.get(self.algo, 2 * env_spec.state_dim)
        if self.algo == "vdn":
            mixer: nn.Module = VdnMixer()
        else:
            mixer = QmixMixer(env_spec.n_agents, cond_dim, config.mixer_embed_dim, config.hypernet_hidden)

        imagination = aggregator = None
        if self.algo in ("mbvd", "qmix-ls"):
            imagination = ImaginationModule(
                env_spec.n_agents,
                config.hidden_dim,
                env_spec.n_actions,
                self.latent_dim,
                env_spec.state_dim,
                width=config.model_width,
                aggregator_hidden=config.aggregator_hidden,
            )
        elif self.algo == "qmix-rs":
            aggregator = StateAggregator(env_spec.state_dim, env_spec.state_dim, config.aggregator_hidden)

        self.live = _Nets(agent, mixer, imagination, aggregator)
        self.target = copy.deepcopy(self.live)
        self.target.requires_grad_(False)

        self.optimizer = torch.optim.RMSprop(
            self.live.parameters(),
            lr=config.lr,
            alpha=config.rmsprop_smoothing,
            eps=config.rmsprop_eps,
        )
        self._noise = torch.Generator().manual_seed(config.seed + 1)
        self.model_losses_enabled = self.algo == "mbvd"

    # -- conveniences ---------------------------------------------------------

    @property
    def agent(self) -> RecurrentQNet:
        return self.live.agent

    @property
    def imagination(self) -> Optional[ImaginationModule]:
        return self.live.imagination

    def to_dtype(self, dtype: torch.dtype) -> "Learner":
        self.live.to(dtype)
        self.target.to(dtype)
        return self

    def sync_target(self) -> None:
        self.target.load_state_dict(self.live.state_dict())

    def maybe_sync_target(self, episode_counter: int) -> bool:
        period = self.config.target_update_episodes
        if episode_counter > 0 and episode_counter % period == 0:
            self.sync_target()
            return True
        return False

    # -- forward machinery ----------------------------------------------------

    def _unroll(self, nets: _Nets, batch: Batch) -> Tuple[torch.Tensor, torch.Tensor]:
        """Recompute q-values and hidden states over the stored episode.

        Returns q [T+1, B, n, n_actions] and hiddens [T+1, B, n, hidden_dim].
        """
        spec = self.env_spec
        t_max, b = batch.max_t, batch.batch_size
        dtype = batch.obs.dtype
        ids = torch.eye(spec.n_agents, dtype=dtype).expand(b, -1, -1)
        onehot = F.one_hot(batch.actions, spec.n_actions).to(dtype)
        last = torch.cat([torch.zeros(1, b, spec.n_agents, spec.n_actions, dtype=dtype), onehot])
        hidden = nets.agent.init_hidden(b * spec.n_agents).reshape(b, spec.n_agents, -1)
        qs, hs = [], []
        for t in range(t_max + 1):
            q, hidden = nets.agent(batch.obs[t], last[t], ids, hidden)
            qs.append(q)
            hs.append(hidden)
        return torch.stack(qs), torch.stack(hs)

    @staticmethod
    def _future_window(values: torch.Tensor, point_mask: torch.Tensor, k: int) -> torch.Tensor:
        """Stack the next-k entries of a point-indexed sequence, zero-padding
        past the end of each episode: [P, B, D] -> [k, P, B, D]."""
        masked = values * point_mask.unsqueeze(-1).to(values.dtype)
        out = values.new_zeros(k, *values.shape)
        p = values.shape[0]
        for i in range(1, k + 1):
            if p - i > 0:
                out[i - 1, : p - i] = masked[i:]
        return out

    def _rollout_states(self, nets: _Nets, batch: Batch, h_seq: torch.Tensor) -> Optional[torch.Tensor]:
        """Per-point mixer conditioning extension [T+1, B, state_dim]."""
        spec = self.env_spec
        points, b = h_seq.shape[0], h_seq.shape[1]
        joint = h_seq.reshape(points, b, -1)
        if self.algo == "mbvd":
            avail = batch.avail.reshape(points * b, spec.n_agents, spec.n_actions) if spec.has_action_mask else None
            rollout = nets.imagination.generate_rollout(
                joint.reshape(points * b, -1), avail, self.config.k, nets.agent
            )
            agg = nets.imagination.aggregate_rollout(rollout.latent_stack())
            return agg.reshape(points, b, -1)
        if self.algo == "qmix-ls":
            latents = nets.imagination.posterior_encode(joint).mean
            future = self._future_window(latents, batch.point_mask(), self.config.k)
            agg = nets.imagination.aggregate_rollout(future.reshape(self.config.k, points * b, -1))
            return agg.reshape(points, b, -1)
        if self.algo == "qmix-rs":
            future = self._future_window(batch.state, batch.point_mask(), self.config.k)
            agg = nets.aggregator(future.reshape(self.config.k, points * b, -1))
            return agg.reshape(points, b, -1)
        return None

    def _conditioning(self, batch: Batch, rollout_states: Optional[torch.Tensor]) -> Optional[torch.Tensor]:
        if self.algo == "vdn":
            return None
        if rollout_states is None:
            return batch.state
        return torch.cat([batch.state, rollout_states], dim=-1)

    # -- losses -----------------------------------------------------------------

    def td_loss(self, batch: Batch, q_seq: torch.Tensor, h_seq: torch.Tensor) -> torch.Tensor:
        t_max = batch.max_t
        chosen = q_seq[:t_max].gather(3, batch.actions.unsqueeze(-1)).squeeze(-1)
        cond = self._conditioning(batch, self._rollout_states(self.live, batch, h_seq))
        q_tot = self.live.mixer(chosen, cond[:t_max] if cond is not None else None)

        with torch.no_grad():
            tq_seq, th_seq = self._unroll(self.target, batch)
            best = tq_seq.masked_fill(~batch.avail, MASK_SENTINEL).max(dim=3).values
            tcond = self._conditioning(batch, self._rollout_states(self.target, batch, th_seq))
            next_tot = self.target.mixer(best[1:], tcond[1:] if tcond is not None else None)
            target = batch.reward + self.config.gamma * (1.0 - batch.done) * next_tot

        return _masked_mean((q_tot - target) ** 2, batch.step_mask)

    def imagination_losses(self, batch: Batch, h_seq: torch.Tensor):
        """(l_rc, l_rc_prior, l_kl, l_fa) tensors for the world-model terms."""
        module = self.live.imagination
        spec = self.env_spec
        t_max = batch.max_t
        dtype = h_seq.dtype
        joint = h_seq.reshape(h_seq.shape[0], h_seq.shape[1], -1)
        point_mask = batch.point_mask()

        # one noise row pair per time point, so appending padded steps only
        # extends the stream and real positions keep their draws
        rows = [
            torch.randn(2, batch.batch_size, self.latent_dim, generator=self._noise, dtype=dtype)
            for _ in range(joint.shape[0])
        ]
        post_noise = torch.stack([r[0] for r in rows])
        prior_noise = torch.stack([r[1] for r in rows])

        posterior = module.posterior_encode(joint)
        z = posterior.mean + posterior.std * post_noise
        recon = module.posterior_decode(z)
        # squared error summed over feature dims (Gaussian log-likelihood
        # scale); a per-dim mean is no match for the summed KL and lets the
        # posterior collapse
        l_rc = _masked_mean(((recon - joint) ** 2).sum(dim=-1), point_mask)

        onehot = F.one_hot(batch.actions, spec.n_actions).to(dtype).reshape(t_max, batch.batch_size, -1)
        prev = z[:t_max]
        prior, prior_recon = module.prior_transition(prev, onehot, noise=prior_noise[:t_max])
        pair = torch.cat([prev, onehot], dim=-1)
        l_rc_prior = _masked_mean(((prior_recon - pair) ** 2).sum(dim=-1), batch.step_mask)

        next_post = GaussianLatent(posterior.mean[1:], posterior.log_std[1:])
        kl_terms = kl_gaussian(prior, standard_normal_like(prior)) + kl_balanced(next_post, prior, self.config.alpha)
        l_kl = _masked_mean(kl_terms, batch.step_mask)

        if spec.has_action_mask:
            logits = module.predict_feasible_actions(z)
            bce = F.binary_cross_entropy_with_logits(logits, batch.avail.to(dtype), reduction="none")
            l_fa = _masked_mean(bce.mean(dim=(-1, -2)), point_mask)
        else:
            l_fa = torch.zeros((), dtype=dtype)
        return l_rc, l_rc_prior, l_kl, l_fa

    def compute_losses(self, batch: Batch):
        """Total training loss tensor plus its per-term breakdown."""
        q_seq, h_seq = self._unroll(self.live, batch)
        l_rl = self.td_loss(batch, q_seq, h_seq)
        if self.model_losses_enabled:
            l_rc, l_rc_prior, l_kl, l_fa = self.imagination_losses(batch, h_seq)
        else:
            zero = torch.zeros((), dtype=l_rl.dtype)
            l_rc = l_rc_prior = l_kl = l_fa = zero
        total = l_rl + l_rc + l_rc_prior + l_kl + l_fa
        return total, LossBreakdown.from_tensors(l_rl, l_rc, l_rc_prior, l_kl, l_fa)

    # -- optimization -------------------------------------------------------------

    def train_step(self, buffer: ReplayBuffer, rng: np.random.Generator) -> Optional[LossBreakdown]:
        """One optimizer step on a sampled batch; None while the buffer is
        still too small (wait signal)."""
        if len(buffer) < self.config.batch_size:
            return None
        episodes = buffer.sample(self.config.batch_size, rng)
        batch = collate(episodes, dtype=next(self.live.parameters()).dtype)
        total, breakdown = self.compute_losses(batch)
        self.optimizer.zero_grad()
        total.backward()
        nn.utils.clip_grad_norm_(self.live.parameters(), self.config.grad_clip)
        self.optimizer.step()
        return breakdown


def fit_imagination(
    learner: Learner,
    buffer: ReplayBuffer,
    steps: int,
    rng: np.random.Generator,
) -> List[LossBreakdown]:
    """Train only the world-model terms against a frozen agent and buffer.

    Returns the per-step loss breakdown (l_rl is reported as 0).
    """
    if learner.imagination is None:
        raise ValueError(f"algo {learner.algo!r} has no imagination module")
    cfg = learner.config
    optimizer = torch.optim.RMSprop(
        learner.live.imagination.parameters(), lr=cfg.lr, alpha=cfg.rmsprop_smoothing, eps=cfg.rmsprop_eps
    )
    trace: List[LossBreakdown] = []
    for _ in range(steps):
        episodes = buffer.sample(min(cfg.batch_size, len(buffer)), rng)
        batch = collate(episodes, dtype=next(learner.live.parameters()).dtype)
        with torch.no_grad():
            _, h_seq = learner._unroll(learner.live, batch)
        l_rc, l_rc_prior, l_kl, l_fa = learner.imagination_losses(batch, h_seq)
        total = l_rc + l_rc_prior + l_kl + l_fa
        optimizer.zero_grad()
        total.backward()
        nn.utils.clip_grad_norm_(learner.live.imagination.parameters(), cfg.grad_clip)
        optimizer.step()
        trace.append(LossBreakdown.from_tensors(0.0, l_rc, l_rc_prior, l_kl, l_fa))
    return trace


def latent_prediction_errors(learner: Learner, episodes) -> Tuple[float, float]:
    """Decoded one-step prediction error of the prior vs the copy-last
    baseline that repeats the current latent, both against the next joint
    hidden, masked-averaged over real steps."""
    if learner.imagination is None:
        raise ValueError(f"algo {learner.algo!r} has no imagination module")
    module = learner.live.imagination
    spec = learner.env_spec
    batch = collate(episodes, dtype=next(learner.live.parameters()).dtype)
    with torch.no_grad():
        _, h_seq = learner._unroll(learner.live, batch)
        joint = h_seq.reshape(h_seq.shape[0], h_seq.shape[1], -1)
        post_mean = module.posterior_encode(joint).mean
        onehot = F.one_hot(batch.actions, spec.n_actions).to(joint.dtype)
        onehot = onehot.reshape(batch.max_t, batch.batch_size, -1)
        prior, _ = module.prior_transition(post_mean[:-1], onehot)
        predicted = module.posterior_decode(prior.mean)
        copied = module.posterior_decode(post_mean[:-1])
        target = joint[1:]
        model_err = _masked_mean(((predicted - target) ** 2).mean(dim=-1), batch.step_mask)
        copy_err = _masked_mean(((copied - target) ** 2).mean(dim=-1), batch.step_mask)
    return float(model_err), float(copy_err)
