"""Figure rendering for run and simulation diagnostics.

Each plotting function renders one PNG next to the delimited output it
visualizes: domain similarity against measured precision, accepted boxes
per image over rounds, per-class accepted/estimated ratios, and the
per-domain divergence of estimates versus the labeled prior.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .curriculum import DomainStats
from .synth import EstimationReport, PrecisionStats

_DPI = 150


def plot_similarity_vs_precision(
    stats: Sequence[DomainStats],
    precision: Mapping[str, PrecisionStats],
    path: str | Path,
) -> Path:
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    xs, ys = [], []
    for s in stats:
        if s.domain_id not in precision:
            continue
        xs.append(s.similarity)
        ys.append(precision[s.domain_id].precision)
        ax.annotate(s.domain_id, (xs[-1], ys[-1]), fontsize=7, alpha=0.8,
                    xytext=(3, 3), textcoords="offset points")
    ax.scatter(xs, ys, color="tab:blue", zorder=3)
    ax.set_xlabel("domain similarity (mean of per-image mean max score)")
    ax.set_ylabel("pseudo-label precision")
    ax.set_title("Similarity vs. measured precision per domain")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return Path(path)


def plot_round_activity(rounds: Sequence[Mapping], path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    xs = np.arange(1, len(rounds) + 1)
    ys = [r["boxes_per_image_mean"] for r in rounds]
    ax.plot(xs, ys, marker="o", color="tab:green")
    for x, r in zip(xs, rounds):
        ax.annotate(f"phase {r['phase']}", (x, r["boxes_per_image_mean"]),
                    fontsize=7, alpha=0.8, xytext=(3, 3), textcoords="offset points")
    ax.set_xlabel("round")
    ax.set_ylabel("accepted boxes per image")
    ax.set_title("Accepted pseudo-labels per image, by round")
    ax.set_xticks(xs)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return Path(path)


def plot_class_ratios(
    class_names: Sequence[str],
    ratios_by_label: Mapping[str, Sequence[float]],
    path: str | Path,
) -> Path:
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    x = np.arange(len(class_names))
    labels = list(ratios_by_label)
    width = 0.8 / max(len(labels), 1)
    for i, label in enumerate(labels):
        values = np.asarray(ratios_by_label[label], dtype=np.float64)
        ax.bar(x + (i - (len(labels) - 1) / 2) * width, values, width, label=label)
    ax.axhline(1.0, color="black", linewidth=0.8, linestyle="--")
    ax.set_xticks(x)
    ax.set_xticklabels(class_names, rotation=30, ha="right")
    ax.set_ylabel("accepted share / estimated share")
    ax.set_title("Per-class pseudo-label ratio (1.0 = matched)")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return Path(path)


def plot_estimation_kl(reports: Sequence[EstimationReport], path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    x = np.arange(len(reports))
    ax.plot(x, [r.kl_estimated for r in reports], marker="o", color="tab:red",
            label="estimated distribution")
    ax.plot(x, [r.kl_labeled_prior for r in reports], marker="s", color="black",
            label="labeled prior")
    ax.set_xticks(x)
    ax.set_xticklabels([r.domain_id for r in reports], rotation=30, ha="right")
    ax.set_ylabel("KL(true || reference)")
    ax.set_title("Class-distribution estimation quality per domain")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return Path(path)
