"""Static line charts rendered from run summaries (SVG by default)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from subitizer.experiments import ReplicateSummary, SweepPoint  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.figsize": (4.8, 3.2),
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "subitizer",
}


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None} if path.suffix == ".svg" else None)
    plt.close(fig)
    return path


def _x(summary: ReplicateSummary):
    if summary.preset.eval_every < 500:
        return summary.mean_epoch * 500, "iteration"
    return summary.mean_epoch, "epoch"


def plot_accuracy(summaries: list[ReplicateSummary], path: Path, title: str = "") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        xlabel = "epoch"
        for s in summaries:
            if not len(s.mean_accuracy):
                continue
            x, xlabel = _x(s)
            ax.plot(x, s.mean_accuracy, label=f"{s.preset.name} (n={len(s.completed)})")
        ax.set_xlabel(xlabel)
        ax.set_ylabel("accuracy")
        ax.set_ylim(0, 1.02)
        ax.set_title(title)
        ax.legend(loc="lower right")
        return _save(fig, path)


def plot_per_numerosity(summary: ReplicateSummary, path: Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        x, xlabel = _x(summary)
        colors = plt.cm.viridis(np.linspace(0, 0.95, 9))
        for n in range(9):
            ax.plot(x, summary.mean_per_numerosity[:, n], color=colors[n], label=str(n + 1))
        ax.set_xlabel(xlabel)
        ax.set_ylabel("accuracy")
        ax.set_ylim(0, 1.02)
        ax.set_title(summary.preset.name)
        ax.legend(title="numerosity", ncol=3, loc="lower right")
        return _save(fig, path)


def plot_vc(summaries: list[ReplicateSummary], path: Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for s in summaries:
            if s.mean_vc is None:
                continue
            snap = s.preset.snapshot_epoch or s.preset.epochs
            ax.plot(np.arange(1, 10), s.mean_vc, marker="o", label=f"{s.preset.name} @ {snap:g} ep")
        ax.set_xlabel("numerosity")
        ax.set_ylabel("variation coefficient")
        ax.set_xticks(range(1, 10))
        ax.legend()
        return _save(fig, path)


def plot_sweep(points: list[SweepPoint], path: Path, title: str = "") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for mode in dict.fromkeys(p.mode for p in points):
            pts = [p for p in points if p.mode == mode and p.mean_epochs is not None]
            ax.plot([p.lr for p in pts], [p.mean_epochs for p in pts], marker="o", label=mode)
        ax.set_xscale("log")
        ax.set_xlabel("learning rate")
        ax.set_ylabel("epochs to 99% (mean of converged runs)")
        ax.set_title(title)
        ax.legend()
        return _save(fig, path)
