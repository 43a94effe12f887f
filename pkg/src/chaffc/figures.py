"""Figure rendering for report output.

Each function takes plain data (the same shapes the JSON report holds,
so figures can be rebuilt from a report on disk), draws one chart, and
writes a PNG.  All return the path they wrote.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  backend must be set first

from .mining import BUG_TYPES

_BAR_COLORS = ("#b0c4de", "#4682b4", "#2e8b57")


def _finish(fig, path: str) -> str:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def fig_bug_counts(per_type: Mapping[str, Mapping[str, int]],
                   path: str) -> str:
    """Grouped bars: requested / attempted / validated per bug type."""
    fig, ax = plt.subplots(figsize=(6, 4))
    width = 0.25
    keys = ("requested", "attempted", "validated")
    for k, (key, color) in enumerate(zip(keys, _BAR_COLORS)):
        xs = [i + (k - 1) * width for i in range(len(BUG_TYPES))]
        ys = [per_type[t][key] for t in BUG_TYPES]
        ax.bar(xs, ys, width, label=key, color=color)
    ax.set_xticks(range(len(BUG_TYPES)))
    ax.set_xticklabels(BUG_TYPES)
    ax.set_ylabel("bugs")
    ax.set_title("Bug counts by type")
    ax.legend()
    return _finish(fig, path)


def fig_failure_reasons(reasons: Mapping[str, int], path: str) -> str:
    """Horizontal bars of rejection reasons, most frequent at the top."""
    fig, ax = plt.subplots(figsize=(6, 4))
    if reasons:
        items = sorted(reasons.items(), key=lambda kv: (kv[1], kv[0]))
        labels = [k for k, _ in items]
        ax.barh(labels, [v for _, v in items], color=_BAR_COLORS[1])
        ax.set_xlabel("rejected candidates")
    else:
        ax.text(0.5, 0.5, "no rejected candidates",
                ha="center", va="center", transform=ax.transAxes)
        ax.set_xticks(())
        ax.set_yticks(())
    ax.set_title("Failure reasons")
    return _finish(fig, path)


def fig_survey_curve(curve: Sequence[float], path: str) -> str:
    """Cumulative validation fraction after k tries per attack point."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ks = range(1, len(curve) + 1)
    ax.step(ks, list(curve), where="post", color=_BAR_COLORS[2])
    ax.set_xticks(list(ks))
    ax.set_ylim(0, 1.05)
    ax.set_xlabel("tries")
    ax.set_ylabel("fraction validated")
    ax.set_title("Attack point yield vs retries")
    ax.grid(True, alpha=0.3)
    return _finish(fig, path)


def fig_coverage(summary: Mapping, path: str) -> str:
    """Per-file function coverage, plain next to input-adjusted."""
    files = summary["files"]
    fig, ax = plt.subplots(figsize=(6, max(2.5, 0.6 * len(files) + 1.5)))
    names = [f["file"] for f in files]
    ys = range(len(files))
    height = 0.35
    ax.barh([y + height / 2 for y in ys],
            [f["coverage"] for f in files],
            height, label="coverage", color=_BAR_COLORS[0])
    ax.barh([y - height / 2 for y in ys],
            [f["adjusted_coverage"] for f in files],
            height, label="adjusted", color=_BAR_COLORS[1])
    ax.set_yticks(list(ys))
    ax.set_yticklabels(names)
    ax.invert_yaxis()
    ax.set_xlim(0, 1.05)
    ax.set_xlabel("fraction of functions covered")
    ax.set_title(f"Coverage ({summary['covered_functions']}"
                 f"/{summary['total_functions']} functions)")
    ax.legend()
    return _finish(fig, path)
