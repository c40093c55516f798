import numpy as np
import pytest
import torch

from latentmix.config import RunConfig
from latentmix.envs.base import EnvSpec, EpisodeRecord


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


def micro_config(**overrides) -> RunConfig:
    """Tiny dimensions for gradient checks and fast structural tests."""
    base = dict(
        algo="mbvd",
        env="tabular",
        seed=0,
        n_agents=2,
        batch_size=2,
        hidden_dim=8,
        per_agent_latent=2,
        model_width=16,
        mixer_embed_dim=8,
        hypernet_hidden=8,
        aggregator_hidden=8,
        k=2,
        episode_limit=4,
    )
    base.update(overrides)
    return RunConfig(**base)


def micro_spec(obs_dim=5, n_actions=3, has_action_mask=True) -> EnvSpec:
    return EnvSpec(
        n_agents=2,
        n_actions=n_actions,
        obs_dim=obs_dim,
        state_dim=4,
        episode_limit=4,
        has_action_mask=has_action_mask,
    )


def random_episode(spec: EnvSpec, length: int, rng: np.random.Generator) -> EpisodeRecord:
    """Synthetic but contract-respecting episode for loss-level tests."""
    obs = rng.normal(size=(length + 1, spec.n_agents, spec.obs_dim)).astype(np.float32)
    states = rng.normal(size=(length + 1, spec.state_dim)).astype(np.float32)
    if spec.has_action_mask:
        avail = rng.random((length + 1, spec.n_agents, spec.n_actions)) < 0.7
        avail[..., 0] |= ~avail.any(axis=-1)  # keep every row non-empty
    else:
        avail = np.ones((length + 1, spec.n_agents, spec.n_actions), dtype=bool)
    actions = np.zeros((length, spec.n_agents), dtype=np.int64)
    for t in range(length):
        for a in range(spec.n_agents):
            options = np.flatnonzero(avail[t, a])
            actions[t, a] = options[rng.integers(len(options))]
    rewards = rng.normal(size=length).astype(np.float32)
    done = np.zeros(length, dtype=np.float32)
    done[-1] = 1.0
    record = EpisodeRecord(obs=obs, states=states, avail=avail, actions=actions, rewards=rewards, done=done)
    record.validate()
    return record


def flat_grad(parameters) -> torch.Tensor:
    chunks = []
    for p in parameters:
        chunks.append((p.grad if p.grad is not None else torch.zeros_like(p)).reshape(-1))
    return torch.cat(chunks)


def finite_difference_grad(parameters, loss_fn, h: float = 1e-6, indices=None) -> torch.Tensor:
    """Central differences of loss_fn over the flattened parameter vector.

    loss_fn must be deterministic (reseed any internal sampling inside it).
    """
    params = list(parameters)
    sizes = [p.numel() for p in params]
    total = sum(sizes)
    if indices is None:
        indices = range(total)
    grad = torch.zeros(total, dtype=torch.float64)
    offsets = np.cumsum([0] + sizes)
    flat_views = [p.data.reshape(-1) for p in params]

    def poke(flat_index: int, delta: float):
        which = int(np.searchsorted(offsets, flat_index, side="right") - 1)
        flat_views[which][flat_index - offsets[which]] += delta

    for i in indices:
        poke(i, +h)
        up = float(loss_fn())
        poke(i, -2 * h)
        down = float(loss_fn())
        poke(i, +h)
        grad[i] = (up - down) / (2 * h)
    return grad


def relative_grad_error(analytic: torch.Tensor, numeric: torch.Tensor) -> float:
    denom = max(float(analytic.norm()), float(numeric.norm()), 1e-12)
    return float((analytic - numeric).norm()) / denom


class frozen_kl_reference:
    """Pin the stop-gradient sides of the balanced KL to base-point values.

    The balanced KL is a function of live and detached copies of the same
    distributions; its analytic gradient treats the detached copies as
    constants. Finite differences only match if those copies stay at the
    unperturbed parameters, so the first loss evaluation captures them and
    later evaluations reuse them.
    """

    def __enter__(self):
        import latentmix.learner as learner_mod
        from latentmix.imagination import GaussianLatent, kl_gaussian

        self._mod = learner_mod
        self._orig = learner_mod.kl_balanced
        self._frozen = {}

        def balanced(q, p, alpha):
            if "q" not in self._frozen:
                self._frozen["q"] = GaussianLatent(q.mean.detach().clone(), q.log_std.detach().clone())
                self._frozen["p"] = GaussianLatent(p.mean.detach().clone(), p.log_std.detach().clone())
            return alpha * kl_gaussian(q, self._frozen["p"]) + (1.0 - alpha) * kl_gaussian(self._frozen["q"], p)

        learner_mod.kl_balanced = balanced
        return self

    def __exit__(self, *exc):
        self._mod.kl_balanced = self._orig
        return False
