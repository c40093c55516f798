"""Environment interaction loop, evaluation protocol, and the full training
run that persists metrics and checkpoints."""
from __future__ import annotations

import time
from pathlib import Path
from typing import Callable, List, Optional

import numpy as np
import torch

from .agents import epsilon_at, select_actions
from .config import RunConfig, save_config
from .envs import make_env
from .envs.base import DecPomdpEnv, EpisodeRecord
from .learner import Learner, LossBreakdown
from .persist import MetricsRow, append_metrics_row, save_checkpoint
from .replay import ReplayBuffer


def run_episode(
    env: DecPomdpEnv,
    learner: Learner,
    epsilon_fn: Callable[[int], float],
    env_seed: int,
    action_rng: np.random.Generator,
    start_step: int = 0,
) -> EpisodeRecord:
    """Collect one episode with epsilon-greedy individual policies.

    Acting touches only the agent network; rollout conditioning is a
    training-time construct and never runs here.
    """
    spec = env.spec
    agent = learner.agent
    dtype = next(agent.parameters()).dtype
    res = env.reset(env_seed)
    hidden = agent.init_hidden(spec.n_agents)
    ids = torch.eye(spec.n_agents, dtype=dtype)
    last_onehot = torch.zeros(spec.n_agents, spec.n_actions, dtype=dtype)

    obs = [res.obs]
    states = [res.state]
    avail = [res.avail_actions]
    actions: List[np.ndarray] = []
    rewards: List[float] = []

    t = 0
    while not res.done:
        with torch.no_grad():
            q, hidden = agent(torch.as_tensor(res.obs, dtype=dtype), last_onehot, ids, hidden)
        joint = select_actions(q, res.avail_actions, epsilon_fn(start_step + t), action_rng)
        res = env.step(joint)
        last_onehot = torch.zeros(spec.n_agents, spec.n_actions, dtype=dtype)
        last_onehot[np.arange(spec.n_agents), joint] = 1.0
        obs.append(res.obs)
        states.append(res.state)
        avail.append(res.avail_actions)
        actions.append(joint)
        rewards.append(res.reward)
        t += 1

    done = np.zeros(t, dtype=np.float32)
    done[-1] = 1.0
    return EpisodeRecord(
        obs=np.stack(obs).astype(np.float32),
        states=np.stack(states).astype(np.float32),
        avail=np.stack(avail),
        actions=np.stack(actions).astype(np.int64),
        rewards=np.asarray(rewards, dtype=np.float32),
        done=done,
    )


def evaluate(env: DecPomdpEnv, learner: Learner, episodes: int, rng: np.random.Generator) -> dict:
    """Greedy-policy summary over a batch of fresh episodes."""
    if episodes < 1:
        raise ValueError("need at least one evaluation episode")
    returns = []
    successes = []
    for _ in range(episodes):
        record = run_episode(env, learner, lambda _: 0.0, int(rng.integers(2**31)), rng)
        returns.append(record.total_reward)
        if env.success is not None:
            successes.append(float(env.success))
    q25, median, q75 = np.percentile(returns, [25, 50, 75])
    return {
        "returns": returns,
        "median": float(median),
        "q25": float(q25),
        "q75": float(q75),
        "success_rate": float(np.mean(successes)) if successes else None,
    }


def _mean_losses(window: List[LossBreakdown]) -> dict:
    if not window:
        return {k: None for k in ("l_rl", "l_rc", "l_rc_prior", "l_kl", "l_fa", "loss_total")}
    return {
        "l_rl": float(np.mean([b.l_rl for b in window])),
        "l_rc": float(np.mean([b.l_rc for b in window])),
        "l_rc_prior": float(np.mean([b.l_rc_prior for b in window])),
        "l_kl": float(np.mean([b.l_kl for b in window])),
        "l_fa": float(np.mean([b.l_fa for b in window])),
        "loss_total": float(np.mean([b.total for b in window])),
    }


def train_run(config: RunConfig, run_dir) -> List[MetricsRow]:
    """Train one configuration to its step budget, writing the config
    snapshot, line-delimited metrics, and a final checkpoint into run_dir."""
    config.validate()
    torch.set_num_threads(max(1, config.torch_threads))
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    save_config(config, run_dir / "config.json")
    metrics_path = run_dir / "metrics.jsonl"
    metrics_path.write_text("")

    env = make_env(config)
    eval_env = make_env(config)
    learner = Learner(env.spec, config)
    buffer = ReplayBuffer(config.buffer_capacity)

    children = np.random.SeedSequence(config.seed).spawn(4)
    env_seed_rng = np.random.default_rng(children[0])
    action_rng = np.random.default_rng(children[1])
    sample_rng = np.random.default_rng(children[2])
    eval_rng = np.random.default_rng(children[3])

    epsilon_fn = lambda step: epsilon_at(step, config.anneal_steps, config.epsilon_start, config.epsilon_end)
    rows: List[MetricsRow] = []
    window: List[LossBreakdown] = []
    env_steps = 0
    episodes = 0
    started = time.monotonic()
    next_eval = 0
    next_ckpt = config.checkpoint_every if config.checkpoint_every > 0 else None

    def emit_row() -> None:
        summary = evaluate(eval_env, learner, config.eval_episodes, eval_rng)
        row = MetricsRow(
            env_steps=env_steps,
            episodes=episodes,
            eval_return_median=summary["median"],
            eval_return_q25=summary["q25"],
            eval_return_q75=summary["q75"],
            win_or_success_rate=summary["success_rate"],
            epsilon=epsilon_fn(env_steps),
            wall_clock=time.monotonic() - started,
            **_mean_losses(window),
        )
        rows.append(row)
        append_metrics_row(metrics_path, row)
        window.clear()

    while env_steps < config.total_env_steps:
        if env_steps >= next_eval:
            emit_row()
            next_eval += config.eval_every
        record = run_episode(env, learner, epsilon_fn, int(env_seed_rng.integers(2**31)), action_rng, env_steps)
        buffer.add(record)
        episodes += 1
        env_steps += record.length
        for _ in range(config.train_ratio):
            breakdown = learner.train_step(buffer, sample_rng)
            if breakdown is not None:
                window.append(breakdown)
        learner.maybe_sync_target(episodes)
        if next_ckpt is not None and env_steps >= next_ckpt:
            save_checkpoint(run_dir / f"checkpoint_{env_steps}.pt", learner, config, env_steps, episodes)
            next_ckpt += config.checkpoint_every

    emit_row()
    save_checkpoint(run_dir / "checkpoint.pt", learner, config, env_steps, episodes)
    return rows
