"""Figure rendering for metrics streams, sweep tables, and latent embeddings.

Everything draws through the Agg backend and writes PNG files next to the
delimited data they were derived from.
"""
from __future__ import annotations

from pathlib import Path
from typing import List, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .persist import MetricsRow

_LOSS_KEYS = ("l_rl", "l_rc", "l_rc_prior", "l_kl", "l_fa")


def plot_training_curves(rows: List[MetricsRow], out_path, title: str = "") -> Path:
    """Median return with the 25-75% band, plus loss-term traces."""
    out_path = Path(out_path)
    steps = [r.env_steps for r in rows]
    median = [r.eval_return_median for r in rows]
    q25 = [r.eval_return_q25 for r in rows]
    q75 = [r.eval_return_q75 for r in rows]

    fig, (ax_ret, ax_loss) = plt.subplots(1, 2, figsize=(11, 4))
    ax_ret.plot(steps, median, color="tab:blue", label="median return")
    ax_ret.fill_between(steps, q25, q75, color="tab:blue", alpha=0.25, label="25-75%")
    ax_ret.set_xlabel("environment steps")
    ax_ret.set_ylabel("evaluation return")
    ax_ret.legend()
    if title:
        ax_ret.set_title(title)

    for key in _LOSS_KEYS:
        ys = [(getattr(r, key) if getattr(r, key) is not None else np.nan) for r in rows]
        if np.isfinite(ys).any():
            ax_loss.plot(steps, ys, label=key)
    ax_loss.set_xlabel("environment steps")
    ax_loss.set_ylabel("loss")
    ax_loss.set_yscale("symlog", linthresh=1e-3)
    ax_loss.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def plot_k_sweep(table: Sequence[dict], out_path) -> Path:
    """Final-return comparison across rollout horizons.

    Each table row carries k, median, q25, q75 (as written by the sweep CSV).
    """
    out_path = Path(out_path)
    ks = [row["k"] for row in table]
    med = np.array([row["median"] for row in table], dtype=float)
    q25 = np.array([row["q25"] for row in table], dtype=float)
    q75 = np.array([row["q75"] for row in table], dtype=float)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.errorbar(ks, med, yerr=[med - q25, q75 - med], fmt="o-", capsize=4, color="tab:orange")
    ax.set_xlabel("rollout horizon k")
    ax.set_ylabel("final median return")
    ax.set_xticks(ks)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def plot_embeddings(data: dict, out_path, method: str = "pca", max_points: int = 2000, seed: int = 0) -> Path:
    """2-D projection of real (red) vs imagined (blue, darker = deeper)
    latent states."""
    out_path = Path(out_path)
    rows = data["rows"]
    k = data["k"]
    real = np.array([r["real"] for r in rows])
    imagined = [np.array([r["imagined"][i - 1] for r in rows]) for i in range(1, k + 1)]
    stacked = np.concatenate([real] + imagined)

    rng = np.random.default_rng(seed)
    if stacked.shape[0] > max_points:
        keep = rng.choice(stacked.shape[0], size=max_points, replace=False)
    else:
        keep = np.arange(stacked.shape[0])

    if method == "tsne":
        from sklearn.manifold import TSNE

        coords = TSNE(n_components=2, random_state=seed, init="pca", perplexity=min(30, len(keep) - 1)).fit_transform(
            stacked[keep]
        )
    elif method == "pca":
        from sklearn.decomposition import PCA

        coords = PCA(n_components=2, random_state=seed).fit_transform(stacked[keep])
    else:
        raise ValueError(f"unknown projection method {method!r}")

    labels = np.concatenate([np.zeros(len(real), dtype=int)] + [np.full(len(im), i + 1) for i, im in enumerate(imagined)])
    labels = labels[keep]
    fig, ax = plt.subplots(figsize=(5.5, 5))
    ax.scatter(*coords[labels == 0].T, s=8, color="tab:red", label="real", alpha=0.7)
    blues = plt.get_cmap("Blues")
    for depth in range(1, k + 1):
        pts = coords[labels == depth]
        ax.scatter(*pts.T, s=8, color=blues(0.35 + 0.6 * depth / k), label=f"imagined +{depth}", alpha=0.7)
    ax.legend(fontsize=8)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path
