"""Report figures, rendered off-screen to PNG files."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

STYLE = {"linewidth": 1.5}


def _figure(width=4.5, height=3.2):
    fig = Figure(figsize=(width, height), dpi=120)
    FigureCanvasAgg(fig)
    return fig, fig.add_subplot(1, 1, 1)


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    # drop the version stamp so identical data gives identical bytes
    fig.savefig(path, format="png", metadata={"Software": None})
    return path


def plot_f1_curve(thresholds, curves: dict[str, np.ndarray], path) -> Path:
    """Mean F1 as a function of the match-confidence threshold, one line per label."""
    fig, ax = _figure()
    for label, f1 in curves.items():
        ax.plot(thresholds, f1, label=label, **STYLE)
    ax.set_xlabel("confidence threshold")
    ax.set_ylabel("F1")
    ax.set_ylim(0.0, 1.0)
    ax.grid(alpha=0.3)
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_error_cdf(errors: dict[str, np.ndarray], path, max_error: float = 20.0, xlabel="pose error (deg)") -> Path:
    """Cumulative fraction of pairs under each error level."""
    fig, ax = _figure()
    for label, err in errors.items():
        e = np.sort(np.asarray(err, dtype=np.float64))
        if e.size == 0:
            continue
        recall = np.arange(1, e.size + 1) / e.size
        ax.step(np.concatenate([[0.0], e]), np.concatenate([[0.0], recall]), where="post", label=label, **STYLE)
    ax.set_xlim(0.0, max_error)
    ax.set_ylim(0.0, 1.0)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("fraction of pairs")
    ax.grid(alpha=0.3)
    ax.legend(frameon=False)
    return _save(fig, path)
