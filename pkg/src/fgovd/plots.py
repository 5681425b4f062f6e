"""Static figure rendering for reports (SVG files, Agg backend)."""

from __future__ import annotations

from collections import Counter
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def save_sweep_figure(rows: Sequence[Mapping], path: str | Path) -> Path:
    """mAP and median rank versus vocabulary size, one line per source.

    rows: mappings with keys source, n, map, median_rank.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    sources = sorted({row["source"] for row in rows})
    fig, (ax_map, ax_rank) = plt.subplots(1, 2, figsize=(9, 3.5))
    for source in sources:
        points = sorted(
            (row for row in rows if row["source"] == source), key=lambda r: r["n"]
        )
        ns = [row["n"] for row in points]
        maps = [
            100.0 * row["map"] if row["map"] is not None else float("nan")
            for row in points
        ]
        ranks = [
            row["median_rank"] if row["median_rank"] is not None else float("nan")
            for row in points
        ]
        ax_map.plot(ns, maps, marker="o", label=source)
        ax_rank.plot(ns, ranks, marker="o", label=source)
    ax_map.set_xlabel("negatives per vocabulary (N)")
    ax_map.set_ylabel("mAP")
    ax_map.set_ylim(bottom=0)
    ax_rank.set_xlabel("negatives per vocabulary (N)")
    ax_rank.set_ylabel("median rank")
    ax_rank.set_ylim(bottom=0.5)
    ax_map.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def save_rank_histogram(ranks: Sequence[int], path: str | Path) -> Path:
    """Distribution of positive-caption ranks across evaluated objects."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    counts = Counter(ranks)
    top = max(counts) if counts else 1
    xs = list(range(1, top + 1))
    ys = [counts.get(x, 0) for x in xs]
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.bar(xs, ys, color="#4878d0")
    ax.set_xlabel("rank of the positive caption")
    ax.set_ylabel("objects")
    ax.set_xticks(xs if top <= 20 else None)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path
