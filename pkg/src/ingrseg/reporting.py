"""Delimited report tables and the matplotlib figures rendered next to them."""

from __future__ import annotations

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from . import DataError
from .dataset_ops import DatasetStatistics

# strip the Software chunk so PNG bytes are identical across runs
_PNG_META = {"metadata": {"Software": None}}

STATS_FIELDS = [
    "num_images",
    "num_masks",
    "mean_image_width",
    "mean_image_height",
    "num_dishes",
    "num_classes",
]


def write_stats_csv(stats: DatasetStatistics, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["field", "value"])
        for field in STATS_FIELDS:
            w.writerow([field, getattr(stats, field)])
        w.writerow(["partial", stats.partial])


def write_class_counts_csv(stats: DatasetStatistics, class_names, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["class_id", "class_name", "image_count", "train_count", "test_count"])
        for cid, count in sorted(stats.per_class_image_counts.items()):
            tr, te = stats.per_class_split_counts.get(cid, (0, 0))
            w.writerow([cid, class_names[cid], count, tr, te])


def write_distribution_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["class_id", "class_name", "image_count", "share", "cumulative_share"])
        for r in rows:
            w.writerow(
                [
                    r["class_id"],
                    r["class_name"],
                    r["image_count"],
                    f"{r['share']:.6f}",
                    f"{r['cumulative_share']:.6f}",
                ]
            )


def plot_distribution(rows: list[dict], path) -> None:
    """Long-tail bar chart of per-class image counts with cumulative share."""
    fig, ax = plt.subplots(figsize=(max(6, len(rows) * 0.35), 4))
    names = [r["class_name"] for r in rows]
    counts = [r["image_count"] for r in rows]
    ax.bar(range(len(rows)), counts, color="tab:blue")
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(names, rotation=75, ha="right", fontsize=7)
    ax.set_ylabel("images")
    ax2 = ax.twinx()
    ax2.plot(range(len(rows)), [r["cumulative_share"] for r in rows], color="tab:red")
    ax2.set_ylabel("cumulative share")
    ax2.set_ylim(0, 1.05)
    fig.tight_layout()
    fig.savefig(path, **_PNG_META)
    plt.close(fig)


def plot_per_class_iou(per_class_iou, class_names, path) -> None:
    fig, ax = plt.subplots(figsize=(max(6, len(class_names) * 0.35), 4))
    vals = [0.0 if v is None else v for v in per_class_iou]
    ax.bar(range(len(vals)), vals, color="tab:green")
    ax.set_xticks(range(len(vals)))
    ax.set_xticklabels(class_names, rotation=75, ha="right", fontsize=7)
    ax.set_ylabel("IoU")
    ax.set_ylim(0, 1.05)
    fig.tight_layout()
    fig.savefig(path, **_PNG_META)
    plt.close(fig)


RUN_TABLE_FIELDS = ["run", "init", "miou", "macc", "aacc", "param_count", "delta_miou"]


def collect_run_row(run_dir: str) -> dict:
    metrics_path = os.path.join(run_dir, "metrics.json")
    if not os.path.exists(metrics_path):
        raise DataError(f"{run_dir}: missing metrics.json (was eval run?)")
    with open(metrics_path) as f:
        metrics = json.load(f)
    init = "random"
    params = ""
    rm_path = os.path.join(run_dir, "run_manifest.json")
    if os.path.exists(rm_path):
        with open(rm_path) as f:
            rm = json.load(f)
        init = rm.get("config", {}).get("segmenter", {}).get("init_source", "random")
        if init != "random":
            init = "pretrained"
    params = metrics.get("param_count", "")
    return {
        "run": os.path.basename(os.path.normpath(run_dir)),
        "init": init,
        "miou": metrics.get("miou"),
        "macc": metrics.get("macc"),
        "aacc": metrics.get("aacc"),
        "param_count": params,
        "metrics": metrics,
    }


def write_comparison_table(rows: list[dict], path) -> None:
    """Side-by-side run table; delta_miou is relative to the first row."""
    base = rows[0]["miou"] if rows else None

    def fmt(x):
        return "" if x is None else (f"{x:.6f}" if isinstance(x, float) else x)

    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(RUN_TABLE_FIELDS)
        for r in rows:
            delta = None
            if base is not None and r["miou"] is not None:
                delta = r["miou"] - base
            w.writerow(
                [
                    r["run"],
                    r["init"],
                    fmt(r["miou"]),
                    fmt(r["macc"]),
                    fmt(r["aacc"]),
                    r["param_count"],
                    fmt(delta),
                ]
            )


def plot_comparison(rows: list[dict], path) -> None:
    fig, ax = plt.subplots(figsize=(max(4, len(rows) * 1.2), 4))
    names = [r["run"] for r in rows]
    vals = [0.0 if r["miou"] is None else r["miou"] for r in rows]
    ax.bar(range(len(rows)), vals, color="tab:purple")
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("mIoU")
    ax.set_ylim(0, 1.05)
    fig.tight_layout()
    fig.savefig(path, **_PNG_META)
    plt.close(fig)
