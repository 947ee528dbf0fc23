"""Delimited outputs and matplotlib figures for training, evaluation, and sweeps.

Every report path writes machine-readable CSV next to a rendered PNG, so a
run leaves both a table to parse and a figure to look at.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

import numpy as np  # noqa: E402

from .metrics import ConfusionMatrix  # noqa: E402
from .train import SWEEP_COLUMNS  # noqa: E402


def write_history_csv(history: dict, path) -> None:
    keys = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc"]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(keys)
        for i in range(len(history["train_loss"])):
            w.writerow([i + 1] + [history[k][i] for k in keys[1:]])


def save_history_figure(history: dict, path) -> None:
    epochs = np.arange(1, len(history["train_loss"]) + 1)
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(10, 4))
    ax_loss.plot(epochs, history["train_loss"], label="train")
    if not all(math.isnan(v) for v in history["val_loss"]):
        ax_loss.plot(epochs, history["val_loss"], label="validation")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_loss.legend()
    ax_acc.plot(epochs, history["train_acc"], label="train")
    if not all(math.isnan(v) for v in history["val_acc"]):
        ax_acc.plot(epochs, history["val_acc"], label="validation")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("accuracy")
    ax_acc.set_ylim(0, 1.02)
    ax_acc.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_confusion_figure(cm: ConfusionMatrix, class_names: list[str], path) -> None:
    fig, ax = plt.subplots(figsize=(max(4, 0.5 * cm.size + 2),) * 2)
    im = ax.imshow(cm.counts, cmap="Blues")
    ax.set_xticks(range(cm.size), class_names, rotation=60, ha="right", fontsize=7)
    ax.set_yticks(range(cm.size), class_names, fontsize=7)
    ax.set_xlabel("predicted")
    ax.set_ylabel("actual")
    if cm.size <= 20:
        vmax = cm.counts.max(initial=1)
        for i in range(cm.size):
            for j in range(cm.size):
                v = int(cm.counts[i, j])
                ax.text(j, i, str(v), ha="center", va="center", fontsize=6,
                        color="white" if v > vmax / 2 else "black")
    fig.colorbar(im, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_sweep_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=SWEEP_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow({k: row.get(k, "") for k in SWEEP_COLUMNS})


def render_sweep_table(rows: list[dict]) -> str:
    """Human-readable aligned rendering of the sweep rows."""
    headers = list(SWEEP_COLUMNS)
    table = [headers]
    for row in rows:
        cells = []
        for k in headers:
            v = row.get(k, "")
            if isinstance(v, float):
                cells.append(f"{v:.4f}")
            else:
                cells.append(str(v))
        table.append(cells)
    widths = [max(len(r[i]) for r in table) for i in range(len(headers))]
    lines = []
    for r in table:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def save_sweep_figure(rows: list[dict], path) -> None:
    """Grouped bars of test accuracy per sweep cell."""
    ok = [r for r in rows if r.get("status") == "ok"]
    fig, ax = plt.subplots(figsize=(max(6, 1.1 * len(ok)), 4))
    if ok:
        labels = [
            f"{r['architecture']}\n{r['optimizer']} f={r['freeze_ratio']:g} {r['head']}"
            for r in ok
        ]
        ax.bar(range(len(ok)), [r["accuracy"] for r in ok], color="#4878b0")
        ax.set_xticks(range(len(ok)), labels, fontsize=7)
        ax.set_ylim(0, 1.02)
    ax.set_ylabel("test accuracy")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
