import copy

import numpy as np
import pytest
import torch
import torch.nn as nn

from latentmix import RunConfig, make_env
from latentmix.envs.base import EpisodeRecord
from latentmix.imagination import GaussianLatent, ImaginationModule
from latentmix.learner import Learner, LossBreakdown, fit_imagination
from latentmix.replay import Batch, ReplayBuffer, collate
from latentmix.runner import run_episode

from conftest import micro_config, micro_spec, random_episode

# ------------------------------------------------------------------- buffer


def _episodes(n, spec=None, max_len=4, seed=0):
    spec = spec or micro_spec()
    rng = np.random.default_rng(seed)
    return [random_episode(spec, int(rng.integers(2, max_len + 1)), rng) for _ in range(n)]


def test_buffer_fifo_eviction():
    buf = ReplayBuffer(capacity=3)
    eps = _episodes(5)
    for ep in eps:
        buf.add(ep)
    assert len(buf) == 3
    assert buf.total_added == 5
    kept = {id(e) for e in buf._episodes}
    assert kept == {id(e) for e in eps[2:]}


def test_buffer_sample_without_replacement():
    buf = ReplayBuffer(capacity=10)
    for ep in _episodes(6):
        buf.add(ep)
    rng = np.random.default_rng(0)
    sample = buf.sample(6, rng)
    assert len({id(e) for e in sample}) == 6
    with pytest.raises(ValueError):
        buf.sample(7, rng)


# ------------------------------------------------------------------- padding


def _pad_batch(batch: Batch, extra: int) -> Batch:
    """Append pure-padding steps to every episode in the batch."""
    t, b = batch.max_t, batch.batch_size

    def grow(x, pad_value=0.0):
        pad = x.new_full((extra, *x.shape[1:]), pad_value)
        return torch.cat([x, pad], dim=0)

    return Batch(
        obs=grow(batch.obs),
        state=grow(batch.state),
        avail=torch.cat([batch.avail, torch.ones(extra, b, *batch.avail.shape[2:], dtype=torch.bool)]),
        actions=grow(batch.actions),
        reward=grow(batch.reward),
        done=grow(batch.done),
        step_mask=grow(batch.step_mask),
    )


@pytest.mark.parametrize("algo", ["mbvd", "qmix", "vdn", "qmix-rs", "qmix-ls"])
def test_padding_does_not_change_losses(algo):
    cfg = micro_config(algo=algo)
    spec = micro_spec()
    learner = Learner(spec, cfg).to_dtype(torch.float64)
    rng = np.random.default_rng(1)
    episodes = [random_episode(spec, 4, rng), random_episode(spec, 2, rng)]
    batch = collate(episodes, dtype=torch.float64)
    padded = _pad_batch(batch, 3)

    learner._noise.manual_seed(99)
    _, plain = learner.compute_losses(batch)
    learner._noise.manual_seed(99)
    _, wide = learner.compute_losses(padded)
    for key in ("l_rl", "l_rc", "l_rc_prior", "l_kl", "l_fa", "total"):
        assert getattr(plain, key) == pytest.approx(getattr(wide, key), abs=1e-9)


def test_fully_padded_batch_contributes_zero():
    cfg = micro_config()
    spec = micro_spec()
    learner = Learner(spec, cfg).to_dtype(torch.float64)
    rng = np.random.default_rng(2)
    batch = collate([random_episode(spec, 3, rng)], dtype=torch.float64)
    batch.step_mask.zero_()
    l_rc, l_rc_prior, l_kl, l_fa = learner.imagination_losses(batch, learner._unroll(learner.live, batch)[1])
    # step-masked terms vanish; point 0 stays a real observation point
    assert float(l_rc_prior.detach()) == 0.0 and float(l_kl.detach()) == 0.0


def test_loss_total_is_sum_of_components():
    cfg = micro_config()
    spec = micro_spec()
    learner = Learner(spec, cfg).to_dtype(torch.float64)
    batch = collate(_episodes(2), dtype=torch.float64)
    _, breakdown = learner.compute_losses(batch)
    parts = breakdown.l_rl + breakdown.l_rc + breakdown.l_rc_prior + breakdown.l_kl + breakdown.l_fa
    assert breakdown.total == pytest.approx(parts, abs=1e-9)


# ------------------------------------------------------------------- td arithmetic


def _one_agent_vdn_learner():
    cfg = RunConfig(algo="vdn", env="tabular", n_agents=1, tabular_actions=2, hidden_dim=8, seed=0)
    env = make_env(cfg)
    return Learner(env.spec, cfg).to_dtype(torch.float64), env.spec


def test_td_target_formula_and_terminal():
    """With constant agent heads, y = r + 0.99 * max_target at non-terminal
    steps and y = r at the terminal step; matching online values zero the
    loss."""
    learner, spec = _one_agent_vdn_learner()
    for net, biases in ((learner.live.agent, [2.98, 5.0]), (learner.target.agent, [2.0, 1.0])):
        nn.init.zeros_(net.fc_out.weight)
        with torch.no_grad():
            net.fc_out.bias.copy_(torch.tensor(biases, dtype=torch.float64))

    obs = np.zeros((3, 1, spec.obs_dim), dtype=np.float32)
    states = np.zeros((3, spec.state_dim), dtype=np.float32)
    avail = np.ones((3, 1, 2), dtype=bool)
    record = EpisodeRecord(
        obs=obs,
        states=states,
        avail=avail,
        actions=np.array([[0], [1]], dtype=np.int64),
        rewards=np.array([1.0, 5.0], dtype=np.float32),
        done=np.array([0.0, 1.0], dtype=np.float32),
    )
    batch = collate([record], dtype=torch.float64)
    q_seq, h_seq = learner._unroll(learner.live, batch)
    loss = learner.td_loss(batch, q_seq, h_seq)
    # step 0: y = 1 + 0.99 * 2 = 2.98 = online; step 1 terminal: y = 5 = online
    assert float(loss.detach()) < 1e-12


def test_target_max_respects_availability():
    learner, spec = _one_agent_vdn_learner()
    for net in (learner.live.agent, learner.target.agent):
        nn.init.zeros_(net.fc_out.weight)
        with torch.no_grad():
            net.fc_out.bias.copy_(torch.tensor([0.0, 10.0], dtype=torch.float64))

    avail = np.ones((2, 1, 2), dtype=bool)
    avail[1, 0, 1] = False  # the bootstrap point may not use the big action
    record = EpisodeRecord(
        obs=np.zeros((2, 1, spec.obs_dim), dtype=np.float32),
        states=np.zeros((2, spec.state_dim), dtype=np.float32),
        avail=avail,
        actions=np.array([[0]], dtype=np.int64),
        rewards=np.array([0.0], dtype=np.float32),
        done=np.array([0.0], dtype=np.float32),
    )
    batch = collate([record], dtype=torch.float64)
    q_seq, h_seq = learner._unroll(learner.live, batch)
    loss = learner.td_loss(batch, q_seq, h_seq)
    # online q_tot = 0, masked target max = 0, so y = 0 and the loss vanishes;
    # an unmasked max would give y = 9.9 instead
    assert float(loss.detach()) < 1e-12


# ------------------------------------------------------------------- stubbed world-model terms


class _PerfectRecon(ImaginationModule):
    """Posterior decode returns its encoder input; prior reconstructs its
    input pair exactly."""

    def posterior_encode(self, joint_hidden):
        self._seen = joint_hidden
        return super().posterior_encode(joint_hidden)

    def posterior_decode(self, latent):
        return self._seen

    def prior_transition(self, prev_latent, joint_action_onehot, generator=None, sample=False, noise=None):
        dist, _ = super().prior_transition(prev_latent, joint_action_onehot, generator=generator, sample=sample, noise=noise)
        return dist, torch.cat([prev_latent, joint_action_onehot], dim=-1)


class _OffByC(_PerfectRecon):
    C = 0.5

    def posterior_decode(self, latent):
        return self._seen + self.C


class _StandardNormalLatents(ImaginationModule):
    def posterior_encode(self, joint_hidden):
        dist = super().posterior_encode(joint_hidden)
        return GaussianLatent(torch.zeros_like(dist.mean), torch.zeros_like(dist.log_std))

    def prior_transition(self, prev_latent, joint_action_onehot, generator=None, sample=False, noise=None):
        dist, recon = super().prior_transition(prev_latent, joint_action_onehot, generator=generator, sample=sample, noise=noise)
        return GaussianLatent(torch.zeros_like(dist.mean), torch.zeros_like(dist.log_std)), recon


class _ShiftedPosterior(_StandardNormalLatents):
    def posterior_encode(self, joint_hidden):
        dist = super().posterior_encode(joint_hidden)
        return GaussianLatent(torch.ones_like(dist.mean), dist.log_std)


def _swap_module(learner: Learner, cls) -> Learner:
    cfg = learner.config
    spec = learner.env_spec
    module = cls(
        spec.n_agents, cfg.hidden_dim, spec.n_actions,
        learner.latent_dim, spec.state_dim, width=cfg.model_width,
        aggregator_hidden=cfg.aggregator_hidden,
    ).to(torch.float64)
    learner.live.imagination = module
    return learner


def test_recon_losses_zero_for_perfect_stub():
    spec = micro_spec()
    learner = _swap_module(Learner(spec, micro_config()).to_dtype(torch.float64), _PerfectRecon)
    batch = collate(_episodes(2), dtype=torch.float64)
    l_rc, l_rc_prior, _, _ = learner.imagination_losses(batch, learner._unroll(learner.live, batch)[1])
    assert float(l_rc.detach()) == 0.0
    assert float(l_rc_prior.detach()) == 0.0


def test_recon_loss_constant_offset():
    spec = micro_spec()
    learner = _swap_module(Learner(spec, micro_config()).to_dtype(torch.float64), _OffByC)
    batch = collate(_episodes(2), dtype=torch.float64)
    l_rc, _, _, _ = learner.imagination_losses(batch, learner._unroll(learner.live, batch)[1])
    # squared error is summed over the joint-hidden dims
    dims = spec.n_agents * learner.config.hidden_dim
    assert float(l_rc.detach()) == pytest.approx(dims * _OffByC.C**2, rel=1e-12)


def test_kl_loss_zero_when_posterior_equals_standard_prior():
    spec = micro_spec()
    learner = _swap_module(Learner(spec, micro_config()).to_dtype(torch.float64), _StandardNormalLatents)
    batch = collate(_episodes(2), dtype=torch.float64)
    _, _, l_kl, _ = learner.imagination_losses(batch, learner._unroll(learner.live, batch)[1])
    assert float(l_kl.detach()) == 0.0


def test_kl_loss_unit_shift_value_independent_of_alpha():
    spec = micro_spec()
    values = []
    for alpha in (0.0, 0.3, 1.0):
        cfg = micro_config(alpha=alpha, per_agent_latent=1, n_agents=2)
        learner = Learner(spec, cfg).to_dtype(torch.float64)
        learner = _swap_module(learner, _ShiftedPosterior)
        batch = collate(_episodes(2), dtype=torch.float64)
        _, _, l_kl, _ = learner.imagination_losses(batch, learner._unroll(learner.live, batch)[1])
        values.append(float(l_kl.detach()))
    # KL(N(1,1) || N(0,1)) = 0.5 per dim, two latent dims here
    assert values[0] == pytest.approx(1.0, abs=1e-12)
    assert max(values) - min(values) < 1e-12


class _FixedLogits(ImaginationModule):
    logits = None

    def predict_feasible_actions(self, latent):
        shape = (*latent.shape[:-1], self.n_agents, self.n_actions)
        return self.logits.expand(shape) if self.logits.dim() == 2 else self.logits


def test_fa_loss_values():
    spec = micro_spec()
    learner = Learner(spec, micro_config()).to_dtype(torch.float64)
    batch = collate(_episodes(2), dtype=torch.float64)
    h_seq = learner._unroll(learner.live, batch)[1]

    # logits matching the true availability at confidence 1 - 1e-7
    learner = _swap_module(learner, _FixedLogits)
    big = np.log((1 - 1e-7) / 1e-7)
    learner.live.imagination.logits = torch.where(
        batch.avail, torch.tensor(big, dtype=torch.float64), torch.tensor(-big, dtype=torch.float64)
    )
    _, _, _, l_fa = learner.imagination_losses(batch, h_seq)
    assert float(l_fa.detach()) < 1e-6

    learner.live.imagination.logits = torch.zeros_like(batch.avail, dtype=torch.float64)
    _, _, _, l_fa = learner.imagination_losses(batch, h_seq)
    assert float(l_fa.detach()) == pytest.approx(np.log(2.0), abs=1e-12)


def test_fa_loss_zero_without_masks():
    spec = micro_spec(has_action_mask=False)
    learner = Learner(spec, micro_config()).to_dtype(torch.float64)
    rng = np.random.default_rng(3)
    batch = collate([random_episode(spec, 3, rng)], dtype=torch.float64)
    _, _, _, l_fa = learner.imagination_losses(batch, learner._unroll(learner.live, batch)[1])
    assert float(l_fa.detach()) == 0.0


# ------------------------------------------------------------------- optimization mechanics


def test_grad_clip_scales_norm_to_limit():
    params = [nn.Parameter(torch.zeros(2, dtype=torch.float64))]
    params[0].grad = torch.tensor([60.0, 80.0], dtype=torch.float64)
    total = nn.utils.clip_grad_norm_(params, 10.0)
    assert float(total) == pytest.approx(100.0, rel=1e-12)
    assert float(params[0].grad.norm()) == pytest.approx(10.0, rel=1e-6)
    assert RunConfig().grad_clip == 10.0


def test_train_step_waits_for_buffer():
    cfg = micro_config(batch_size=4)
    learner = Learner(micro_spec(), cfg)
    buf = ReplayBuffer(10)
    for ep in _episodes(3):
        buf.add(ep)
    assert learner.train_step(buf, np.random.default_rng(0)) is None


def test_train_step_deterministic_given_seeds():
    def run_once():
        cfg = micro_config(batch_size=2)
        learner = Learner(micro_spec(), cfg)
        buf = ReplayBuffer(10)
        for ep in _episodes(4, seed=5):
            buf.add(ep)
        learner.train_step(buf, np.random.default_rng(7))
        return learner.live.state_dict()

    a, b = run_once(), run_once()
    assert all(torch.equal(a[k], b[k]) for k in a)


def test_target_network_receives_no_gradients():
    cfg = micro_config()
    learner = Learner(micro_spec(), cfg).to_dtype(torch.float64)
    batch = collate(_episodes(2), dtype=torch.float64)
    total, _ = learner.compute_losses(batch)
    total.backward()
    assert all(p.grad is None for p in learner.target.parameters())
    assert any(p.grad is not None and p.grad.abs().sum() > 0 for p in learner.live.parameters())


def test_sync_target_schedule():
    cfg = micro_config(target_update_episodes=200)
    learner = Learner(micro_spec(), cfg)
    with torch.no_grad():
        for p in learner.live.parameters():
            p.add_(1.0)
    assert not learner.maybe_sync_target(199)
    live, target = learner.live.state_dict(), learner.target.state_dict()
    assert any(not torch.equal(live[k], target[k]) for k in live)
    assert learner.maybe_sync_target(200)
    live, target = learner.live.state_dict(), learner.target.state_dict()
    assert all(torch.equal(live[k], target[k]) for k in live)


def test_target_unchanged_by_train_step():
    cfg = micro_config(batch_size=2)
    learner = Learner(micro_spec(), cfg)
    before = copy.deepcopy(learner.target.state_dict())
    buf = ReplayBuffer(10)
    for ep in _episodes(4):
        buf.add(ep)
    learner.train_step(buf, np.random.default_rng(0))
    after = learner.target.state_dict()
    assert all(torch.equal(before[k], after[k]) for k in before)


def test_overfit_loss_decreases_smoothly():
    """Total loss on a frozen 8-episode buffer falls, and the window-20
    smoothed trace never ticks up by more than 2% of its starting value
    (reparameterization noise keeps it from being strictly monotone)."""
    cfg = RunConfig(algo="mbvd", env="tabular", seed=0, batch_size=8, episode_limit=6)
    env = make_env(cfg)
    learner = Learner(env.spec, cfg)
    buf = ReplayBuffer(50)
    rng = np.random.default_rng(0)
    for i in range(8):
        buf.add(run_episode(env, learner, lambda s: 1.0, i, rng))
    trace = np.array([learner.train_step(buf, rng).total for _ in range(200)])
    smooth = np.convolve(trace, np.ones(20) / 20, mode="valid")
    assert smooth[-1] < smooth[0]
    assert np.diff(smooth).max() < 0.02 * smooth[0]


# ------------------------------------------------------------------- acting path


def test_run_episode_respects_masks_and_buffer():
    cfg = RunConfig(algo="qmix", env="pred_prey", grid_size=5, episode_limit=10, seed=0)
    env = make_env(cfg)
    learner = Learner(env.spec, cfg)
    buf = ReplayBuffer(10)
    record = run_episode(env, learner, lambda s: 0.7, 3, np.random.default_rng(0))
    buf.add(record)
    assert len(buf) == 1
    record.validate()  # includes the stored-action vs stored-mask check


def test_acting_independent_of_imagination():
    """Same seeds and same agent parameters must collect identical
    trajectories whether or not the learner owns an imagination module."""
    cfg_m = RunConfig(algo="mbvd", env="pred_prey", grid_size=5, episode_limit=10, seed=0)
    cfg_q = RunConfig(algo="qmix", env="pred_prey", grid_size=5, episode_limit=10, seed=0)
    env_m, env_q = make_env(cfg_m), make_env(cfg_q)
    lm, lq = Learner(env_m.spec, cfg_m), Learner(env_q.spec, cfg_q)
    lq.live.agent.load_state_dict(lm.live.agent.state_dict())
    for seed in range(3):
        rm = run_episode(env_m, lm, lambda s: 0.5, seed, np.random.default_rng(seed))
        rq = run_episode(env_q, lq, lambda s: 0.5, seed, np.random.default_rng(seed))
        assert (rm.actions == rq.actions).all()
        assert (rm.rewards == rq.rewards).all()


# ------------------------------------------------------------------- qmix/mbvd decoupling


def _copy_mixer_state_columns(src_mixer, dst_mixer, state_dim):
    for name in ("hyper_w1", "hyper_w2", "hyper_b2"):
        src, dst = getattr(src_mixer, name), getattr(dst_mixer, name)
        with torch.no_grad():
            dst[0].weight.copy_(src[0].weight[:, :state_dim])
            dst[0].bias.copy_(src[0].bias)
            dst[2].weight.copy_(src[2].weight)
            dst[2].bias.copy_(src[2].bias)
    with torch.no_grad():
        dst_mixer.hyper_b1.weight.copy_(src_mixer.hyper_b1.weight[:, :state_dim])
        dst_mixer.hyper_b1.bias.copy_(src_mixer.hyper_b1.bias)


def test_zeroed_mbvd_is_bitwise_identical_to_qmix():
    """mbvd with the rollout contribution zeroed and model losses disabled
    behaves exactly like plain qmix (guards against accidental coupling).

    grad_clip is set high enough never to engage: when it does, the mixer's
    extra all-zero weight columns perturb the norm reduction by one ulp and
    parameters drift at float precision without any behavioral coupling.
    """
    cfg_m = RunConfig(algo="mbvd", env="pred_prey", grid_size=5, episode_limit=8, seed=0,
                      batch_size=4, grad_clip=1e9)
    cfg_q = cfg_m.replace(algo="qmix")
    env = make_env(cfg_m)
    lm, lq = Learner(env.spec, cfg_m), Learner(env.spec, cfg_q)
    lq.live.agent.load_state_dict(lm.live.agent.state_dict())
    _copy_mixer_state_columns(lm.live.mixer, lq.live.mixer, env.spec.state_dim)
    lm.sync_target()
    lq.sync_target()
    state_dim = env.spec.state_dim
    lm._rollout_states = lambda nets, batch, h_seq: torch.zeros(
        h_seq.shape[0], h_seq.shape[1], state_dim, dtype=h_seq.dtype
    )
    lm.model_losses_enabled = False

    envs = (make_env(cfg_m), make_env(cfg_q))
    bufs = (ReplayBuffer(50), ReplayBuffer(50))
    rngs = (np.random.default_rng(1), np.random.default_rng(1))
    for i in range(5):
        records = [run_episode(e, l, lambda s: 0.4, i, r) for e, l, r in zip(envs, (lm, lq), rngs)]
        assert (records[0].actions == records[1].actions).all()
        for buf, rec in zip(bufs, records):
            buf.add(rec)
    for step in range(4):
        bm = lm.train_step(bufs[0], np.random.default_rng(100 + step))
        bq = lq.train_step(bufs[1], np.random.default_rng(100 + step))
        assert bm.total == bq.total
    agent_m, agent_q = lm.live.agent.state_dict(), lq.live.agent.state_dict()
    assert all(torch.equal(agent_m[k], agent_q[k]) for k in agent_m)


# ------------------------------------------------------------------- rs/ls variant wiring


def test_future_window_contents_and_tail_padding():
    values = torch.arange(5, dtype=torch.float64).reshape(5, 1, 1).expand(5, 2, 3).clone()
    mask = torch.ones(5, 2)
    mask[4, 1] = 0.0  # second episode ends one point earlier
    window = Learner._future_window(values, mask, k=3)
    # at point t the window holds values t+1 .. t+3
    assert window[:, 0, 0, 0].tolist() == [1.0, 2.0, 3.0]
    assert window[:, 1, 0, 0].tolist() == [2.0, 3.0, 4.0]
    # tail: point 3 of episode 0 sees value 4 then zero pads
    assert window[:, 3, 0, 0].tolist() == [4.0, 0.0, 0.0]
    # masked point never appears
    assert window[:, 3, 1, 0].tolist() == [0.0, 0.0, 0.0]
    assert window[:, 4, 0, 0].tolist() == [0.0, 0.0, 0.0]


def test_rs_aggregator_consumes_next_k_states():
    captured = {}
    cfg = micro_config(algo="qmix-rs", k=3, episode_limit=6)
    spec = micro_spec()
    learner = Learner(spec, cfg).to_dtype(torch.float64)
    original = learner.live.aggregator.forward

    def probe(seq):
        captured["seq"] = seq.detach().clone()
        return original(seq)

    learner.live.aggregator.forward = probe
    rng = np.random.default_rng(0)
    batch = collate([random_episode(spec, 6, rng)], dtype=torch.float64)
    learner._rollout_states(learner.live, batch, learner._unroll(learner.live, batch)[1])
    seq = captured["seq"].reshape(3, 7, 1, spec.state_dim)
    expected = torch.as_tensor(batch.state[1:4, 0], dtype=torch.float64)
    assert torch.allclose(seq[:, 0, 0], expected)


def test_variants_have_no_model_losses():
    for algo in ("qmix-rs", "qmix-ls"):
        learner = Learner(micro_spec(), micro_config(algo=algo))
        assert not learner.model_losses_enabled
        batch = collate(_episodes(2))
        _, breakdown = learner.compute_losses(batch)
        assert breakdown.l_rc == breakdown.l_kl == breakdown.l_fa == 0.0


# ------------------------------------------------------------------- world-model fitting


def test_fit_imagination_requires_module():
    learner = Learner(micro_spec(), micro_config(algo="qmix"))
    with pytest.raises(ValueError):
        fit_imagination(learner, ReplayBuffer(5), 1, np.random.default_rng(0))


def test_fit_imagination_trains_only_the_module():
    cfg = micro_config(batch_size=2)
    learner = Learner(micro_spec(), cfg)
    agent_before = copy.deepcopy(learner.live.agent.state_dict())
    buf = ReplayBuffer(10)
    for ep in _episodes(4):
        buf.add(ep)
    trace = fit_imagination(learner, buf, 3, np.random.default_rng(0))
    assert len(trace) == 3 and all(isinstance(b, LossBreakdown) for b in trace)
    after = learner.live.agent.state_dict()
    assert all(torch.equal(agent_before[k], after[k]) for k in agent_before)
