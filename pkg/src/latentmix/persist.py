"""On-disk artifacts: metrics stream, checkpoints, and episode files."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import torch

from .config import RunConfig, config_from_dict
from .envs import make_env
from .envs.base import EnvSpec, EpisodeRecord

CHECKPOINT_FORMAT = "latentmix-checkpoint"
CHECKPOINT_VERSION = 1
EPISODE_FILE_FORMAT = "latentmix-episodes"
EPISODE_FILE_VERSION = 1


@dataclass
class MetricsRow:
    """One evaluation point in the line-delimited metrics stream."""

    env_steps: int
    episodes: int
    eval_return_median: float
    eval_return_q25: float
    eval_return_q75: float
    win_or_success_rate: Optional[float]
    l_rl: Optional[float]
    l_rc: Optional[float]
    l_rc_prior: Optional[float]
    l_kl: Optional[float]
    l_fa: Optional[float]
    loss_total: Optional[float]
    epsilon: float
    wall_clock: float

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def append_metrics_row(path, row: MetricsRow) -> None:
    with open(path, "a") as fh:
        fh.write(json.dumps(row.to_dict()) + "\n")


def read_metrics(path) -> List[MetricsRow]:
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            rows.append(MetricsRow(**json.loads(line)))
    return rows


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(path, learner, config: RunConfig, env_steps: int, episodes: int) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "live": learner.live.state_dict(),
        "target": learner.target.state_dict(),
        "optimizer": learner.optimizer.state_dict(),
        "counters": {"env_steps": env_steps, "episodes": episodes},
    }
    torch.save(payload, path)


def load_checkpoint(path):
    """Rebuild (learner, config, counters) from a checkpoint archive."""
    from .learner import Learner  # local import to avoid a cycle

    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, weights_only=True)
    except Exception as exc:
        raise ValueError(f"could not read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a {CHECKPOINT_FORMAT} archive")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    config = config_from_dict(payload["config"])
    learner = Learner(make_env(config).spec, config)
    learner.live.load_state_dict(payload["live"])
    learner.target.load_state_dict(payload["target"])
    learner.optimizer.load_state_dict(payload["optimizer"])
    return learner, config, payload["counters"]


# -- episode files ---------------------------------------------------------------


def save_episodes(path, spec: EnvSpec, episodes: List[EpisodeRecord]) -> None:
    """Line-delimited episode dump: a header record, then one record per
    step plus a terminal record carrying the post-step observation point."""
    with open(path, "w") as fh:
        header = {"format": EPISODE_FILE_FORMAT, "version": EPISODE_FILE_VERSION}
        header.update(dataclasses.asdict(spec))
        fh.write(json.dumps(header) + "\n")
        for ep_idx, ep in enumerate(episodes):
            for t in range(ep.length + 1):
                final = t == ep.length
                rec = {
                    "ep": ep_idx,
                    "t": t,
                    "obs": ep.obs[t].tolist(),
                    "state": ep.states[t].tolist(),
                    "avail": ep.avail[t].astype(int).tolist(),
                    "actions": None if final else ep.actions[t].tolist(),
                    "reward": None if final else float(ep.rewards[t]),
                    "done": None if final else bool(ep.done[t]),
                }
                fh.write(json.dumps(rec) + "\n")


def load_episodes(path) -> Tuple[EnvSpec, List[EpisodeRecord]]:
    lines = [json.loads(l) for l in Path(path).read_text().splitlines() if l.strip()]
    if not lines or lines[0].get("format") != EPISODE_FILE_FORMAT:
        raise ValueError(f"{path} is not a {EPISODE_FILE_FORMAT} file")
    header = lines[0]
    spec = EnvSpec(
        n_agents=header["n_agents"],
        n_actions=header["n_actions"],
        obs_dim=header["obs_dim"],
        state_dim=header["state_dim"],
        episode_limit=header["episode_limit"],
        has_action_mask=header["has_action_mask"],
    )
    episodes: List[EpisodeRecord] = []
    by_ep: dict = {}
    for rec in lines[1:]:
        by_ep.setdefault(rec["ep"], []).append(rec)
    for ep_idx in sorted(by_ep):
        recs = sorted(by_ep[ep_idx], key=lambda r: r["t"])
        steps = [r for r in recs if r["actions"] is not None]
        episodes.append(
            EpisodeRecord(
                obs=np.array([r["obs"] for r in recs], dtype=np.float32),
                states=np.array([r["state"] for r in recs], dtype=np.float32),
                avail=np.array([r["avail"] for r in recs], dtype=bool),
                actions=np.array([r["actions"] for r in steps], dtype=np.int64),
                rewards=np.array([r["reward"] for r in steps], dtype=np.float32),
                done=np.array([1.0 if r["done"] else 0.0 for r in steps], dtype=np.float32),
            )
        )
    return spec, episodes
