"""Matplotlib figures rendered to files alongside the delimited outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def training_curves(metrics: list[dict], path: str | Path) -> None:
    """Training loss and validation NDCG per epoch on twin axes."""
    epochs = [row["epoch"] for row in metrics]
    fig, ax_loss = plt.subplots(figsize=(7, 4))
    loss_pts = [(e, row["train_loss"]) for e, row in zip(epochs, metrics)
                if row["train_loss"] is not None]
    if loss_pts:
        ax_loss.plot(*zip(*loss_pts), color="tab:red", marker="o",
                     label="train loss")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("train loss", color="tab:red")
    ax_loss.tick_params(axis="y", labelcolor="tab:red")
    ax_ndcg = ax_loss.twinx()
    for k, style in ((1, ":"), (5, "--"), (10, "-")):
        ax_ndcg.plot(epochs, [row[f"val_ndcg@{k}"] for row in metrics],
                     color="tab:blue", linestyle=style, label=f"val NDCG@{k}")
    ax_ndcg.set_ylabel("validation NDCG", color="tab:blue")
    ax_ndcg.tick_params(axis="y", labelcolor="tab:blue")
    ax_ndcg.set_ylim(0.0, 1.02)
    ax_ndcg.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def sweep_curve(rows: list[dict], path: str | Path) -> None:
    """NDCG@10 against neighbor count; one faint line per seed, bold mean."""
    ks = sorted({row["k"] for row in rows})
    seeds = sorted({row["seed"] for row in rows})
    fig, ax = plt.subplots(figsize=(6, 4))
    for seed in seeds:
        ys = [next(r["ndcg@10"] for r in rows
                   if r["k"] == k and r["seed"] == seed) for k in ks]
        ax.plot(ks, ys, color="gray", alpha=0.4, linewidth=1)
    means = [sum(r["ndcg@10"] for r in rows if r["k"] == k)
             / len(seeds) for k in ks]
    ax.plot(ks, means, color="tab:blue", marker="o", linewidth=2, label="mean")
    ax.set_xlabel("neighbors per entity (k)")
    ax.set_ylabel("test NDCG@10")
    ax.set_xticks(ks)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def metric_bars(values: dict[int, float], path: str | Path) -> None:
    """Bar chart of NDCG@k for one evaluated run."""
    ks = sorted(values)
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.bar([f"NDCG@{k}" for k in ks], [values[k] for k in ks],
           color="tab:blue", width=0.6)
    for i, k in enumerate(ks):
        ax.text(i, values[k] + 0.01, f"{100 * values[k]:.2f}",
                ha="center", fontsize=9)
    ax.set_ylim(0.0, 1.08)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
