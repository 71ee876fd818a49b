"""Figure rendering for exported report series.

Every helper takes plain arrays plus an output path, draws one chart
with the non-interactive backend, writes the file, and closes the
figure. The delimited exports remain the primary artifact; these are
their visual companions, written alongside with the same basename.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_BAND_COLOR = "#9ecae1"
_MEAN_COLOR = "#08519c"
_TRUTH_COLOR = "#333333"


def render_trajectory(path, t, rul_true, rul_mean, rul_lo, rul_hi, unit_id: int) -> None:
    """RUL trace with its confidence band for one unit."""
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    ax.fill_between(t, rul_lo, rul_hi, color=_BAND_COLOR, alpha=0.6, label="interval")
    ax.plot(t, rul_mean, color=_MEAN_COLOR, lw=1.5, label="predicted")
    ax.plot(t, rul_true, color=_TRUTH_COLOR, lw=1.2, ls="--", label="true")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("RUL [cycles]")
    ax.set_title(f"unit {unit_id}")
    ax.legend(loc="upper right", frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_score_vs_rul(path, rul_true, contribution) -> None:
    """Per-prediction penalty against the true RUL."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.scatter(rul_true, contribution, s=12, color=_MEAN_COLOR, alpha=0.6)
    ax.set_xlabel("true RUL [cycles]")
    ax.set_ylabel("penalty contribution")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_class_bars(path, rows) -> None:
    """Grouped bars: one group per flight class, one bar per model label.

    `rows` holds (flight_class, label, score) triples.
    """
    rows = list(rows)
    classes = sorted({r[0] for r in rows})
    labels = []
    for r in rows:
        if r[1] not in labels:
            labels.append(r[1])
    scores = {(r[0], r[1]): r[2] for r in rows}
    width = 0.8 / max(len(labels), 1)
    x = np.arange(len(classes), dtype=np.float64)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for j, label in enumerate(labels):
        heights = [scores.get((c, label), np.nan) for c in classes]
        ax.bar(x + j * width, heights, width=width, label=str(label))
    ax.set_xticks(x + width * (len(labels) - 1) / 2)
    ax.set_xticklabels([f"class {c}" for c in classes])
    ax.set_ylabel("combined score")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_convergence(path, indices, scores, best_so_far) -> None:
    """Trial scores and the running best of a search history."""
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    finite = np.isfinite(scores)
    ax.scatter(
        np.asarray(indices)[finite], np.asarray(scores)[finite],
        s=14, color=_BAND_COLOR, label="trial",
    )
    ax.plot(indices, best_so_far, color=_MEAN_COLOR, lw=1.6, label="best so far")
    ax.set_xlabel("trial")
    ax.set_ylabel("score")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
