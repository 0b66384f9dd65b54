"""Render figures from a run's delimited output files.

Reads the convergence and consensus-latency CSVs written by `simulate` and
`consensus-bench` and saves PNG figures next to them: accuracy and loss
curves per mode, the per-block latency series, and a mean-latency summary.
"""

from __future__ import annotations

import csv
import os
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .errors import NotFoundError


def _read_rows(path: str) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def render_convergence(convergence_csv: str, out_png: str) -> str:
    rows = _read_rows(convergence_csv)
    by_mode: dict[str, list[tuple[float, float, float]]] = defaultdict(list)
    for row in rows:
        by_mode[row["mode"]].append(
            (float(row["sim_minutes"]), float(row["accuracy"]), float(row["loss"]))
        )
    fig, (ax_acc, ax_loss) = plt.subplots(1, 2, figsize=(10, 4))
    for mode, points in sorted(by_mode.items()):
        points.sort()
        minutes = [p[0] for p in points]
        ax_acc.plot(minutes, [p[1] for p in points], marker="o", label=mode)
        ax_loss.plot(minutes, [p[2] for p in points], marker="o", label=mode)
    ax_acc.set_xlabel("simulated minutes")
    ax_acc.set_ylabel("holdout accuracy")
    ax_acc.set_ylim(0, 1.02)
    ax_acc.grid(alpha=0.3)
    ax_acc.legend()
    ax_loss.set_xlabel("simulated minutes")
    ax_loss.set_ylabel("holdout loss")
    ax_loss.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return out_png


def render_latency_series(latency_csv: str, out_png: str) -> str:
    rows = _read_rows(latency_csv)
    by_mode: dict[str, list[tuple[int, float]]] = defaultdict(list)
    for row in rows:
        if row["latency_s"]:
            by_mode[row["quorum_mode"]].append(
                (int(row["block_index"]), float(row["latency_s"]))
            )
    fig, ax = plt.subplots(figsize=(9, 4))
    for mode, points in sorted(by_mode.items()):
        points.sort()
        ax.plot([p[0] for p in points], [p[1] for p in points],
                linewidth=0.7, alpha=0.8, label=mode)
    ax.set_xlabel("block index")
    ax.set_ylabel("finalization latency (s)")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return out_png


def render_latency_summary(latency_csv: str, out_png: str) -> str:
    rows = _read_rows(latency_csv)
    by_mode: dict[str, list[float]] = defaultdict(list)
    for row in rows:
        if row["latency_s"]:
            by_mode[row["quorum_mode"]].append(float(row["latency_s"]))
    modes = sorted(by_mode)
    means = [sum(by_mode[m]) / len(by_mode[m]) for m in modes]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(range(len(modes)), means, tick_label=modes, color="#4878a8")
    ax.set_ylabel("mean finalization latency (s)")
    for i, mean in enumerate(means):
        ax.text(i, mean, f"{mean:.3f}", ha="center", va="bottom", fontsize=9)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return out_png


def render_run(run_dir: str, out_dir: str | None = None) -> list[str]:
    """Render every figure the run's CSVs support; returns written paths."""
    out_dir = out_dir or os.path.join(run_dir, "figures")
    os.makedirs(out_dir, exist_ok=True)
    written = []
    convergence = os.path.join(run_dir, "convergence.csv")
    if os.path.exists(convergence):
        written.append(
            render_convergence(convergence, os.path.join(out_dir, "convergence.png"))
        )
    latency = os.path.join(run_dir, "consensus_latency.csv")
    if os.path.exists(latency):
        rows = _read_rows(latency)
        if any(r["latency_s"] for r in rows):
            written.append(
                render_latency_series(latency, os.path.join(out_dir, "latency_series.png"))
            )
            written.append(
                render_latency_summary(latency, os.path.join(out_dir, "latency_summary.png"))
            )
    if not written:
        raise NotFoundError(f"no renderable CSV files under {run_dir}")
    return written
