"""Export of real vs imagined latent trajectories and the depth-distance
statistic used to quantify how imagination drifts with rollout depth."""
from __future__ import annotations

from pathlib import Path
from typing import List, Tuple

import numpy as np
import torch

from .envs.base import DecPomdpEnv
from .learner import Learner
from .replay import collate
from .runner import run_episode


def collect_embedding_rows(learner: Learner, env: DecPomdpEnv, episodes: int, rng: np.random.Generator) -> dict:
    """Greedy episodes with, per step, the posterior latent mean and the k
    imagined latent means predicted from that step."""
    if learner.imagination is None:
        raise ValueError(f"algo {learner.algo!r} has no imagination module to export")
    spec = env.spec
    module = learner.live.imagination
    k = learner.config.k
    rows: List[dict] = []
    for ep in range(episodes):
        record = run_episode(env, learner, lambda _: 0.0, int(rng.integers(2**31)), rng)
        with torch.no_grad():
            batch = collate([record])
            _, h_seq = learner._unroll(learner.live, batch)
            joint = h_seq.reshape(h_seq.shape[0], -1)
            avail = torch.as_tensor(record.avail) if spec.has_action_mask else None
            rollout = module.generate_rollout(joint, avail, k, learner.agent)
        real = rollout.latents[0].numpy()
        imagined = [lat.numpy() for lat in rollout.latents[1:]]
        for t in range(record.length + 1):
            rows.append(
                {
                    "ep": ep,
                    "t": t,
                    "real": real[t].tolist(),
                    "imagined": [im[t].tolist() for im in imagined],
                }
            )
    return {"k": k, "latent_dim": learner.latent_dim, "rows": rows}


def write_embeddings(path, data: dict) -> None:
    k, dim = data["k"], data["latent_dim"]
    columns = ["ep", "t"]
    columns += [f"real_{d}" for d in range(dim)]
    for i in range(1, k + 1):
        columns += [f"imag{i}_{d}" for d in range(dim)]
    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for row in data["rows"]:
            values = [str(row["ep"]), str(row["t"])]
            values += [repr(v) for v in row["real"]]
            for vec in row["imagined"]:
                values += [repr(v) for v in vec]
            fh.write(",".join(values) + "\n")


def read_embeddings(path) -> dict:
    lines = Path(path).read_text().splitlines()
    header = lines[0].split(",")
    dim = sum(1 for c in header if c.startswith("real_"))
    k = max((int(c.split("_")[0][4:]) for c in header if c.startswith("imag")), default=0)
    rows = []
    for line in lines[1:]:
        parts = line.split(",")
        ep, t = int(parts[0]), int(parts[1])
        values = [float(v) for v in parts[2:]]
        real = values[:dim]
        imagined = [values[dim * i: dim * (i + 1)] for i in range(1, k + 1)]
        rows.append({"ep": ep, "t": t, "real": real, "imagined": imagined})
    return {"k": k, "latent_dim": dim, "rows": rows}


def depth_distance_samples(data: dict) -> Tuple[np.ndarray, np.ndarray]:
    """Pairs (depth, distance) where distance is the L2 gap between the
    latent imagined i steps ahead from step t and the real latent at t+i."""
    real_by_key = {(r["ep"], r["t"]): np.asarray(r["real"]) for r in data["rows"]}
    depths, dists = [], []
    for row in data["rows"]:
        for i, vec in enumerate(row["imagined"], start=1):
            key = (row["ep"], row["t"] + i)
            if key in real_by_key:
                depths.append(i)
                dists.append(float(np.linalg.norm(np.asarray(vec) - real_by_key[key])))
    return np.asarray(depths), np.asarray(dists)
