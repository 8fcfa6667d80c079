"""Matplotlib figures written next to the tabular reports."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from pairjudge.report import AgreementReport, CLASSES, WinRateRow  # noqa: E402

COLORS = {"win": "#3b7dd8", "tie": "#b8b8b8", "loss": "#d8703b"}

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
    # keep SVG/PDF output byte-stable across runs
    "svg.hashsalt": "pairjudge",
}


def plot_win_rates(rows: Sequence[WinRateRow], path: str | Path, title: str | None = None) -> Path:
    """Stacked horizontal bars (win / tie / loss %) for each candidate and dataset."""
    rows = [r for r in rows if r.percentages is not None]
    path = Path(path)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6.5, 0.45 * max(len(rows), 1) + 1.2))
        labels = [f"{r.candidate_model} / {r.dataset}" for r in rows]
        ys = list(range(len(rows)))[::-1]
        win = [r.percentages[0] for r in rows]
        loss = [r.percentages[1] for r in rows]
        tie = [r.percentages[2] for r in rows]
        target = rows[0].target_model if rows else "target"
        ax.barh(ys, win, color=COLORS["win"], label="candidate wins")
        ax.barh(ys, tie, left=win, color=COLORS["tie"], label="tie")
        ax.barh(ys, loss, left=[w + t for w, t in zip(win, tie)], color=COLORS["loss"], label=f"{target} wins")
        for y, w, t, l in zip(ys, win, tie, loss):
            for x0, v in ((0, w), (w, t), (w + t, l)):
                if v >= 8:
                    ax.text(x0 + v / 2, y, f"{v}%", ha="center", va="center", color="white", fontsize=7)
        ax.set_yticks(ys)
        ax.set_yticklabels(labels)
        ax.set_xlim(0, 100)
        ax.set_xlabel("share of judged samples (%)")
        ax.set_title(title or f"Pairwise results against {target}")
        ax.legend(loc="upper center", bbox_to_anchor=(0.5, -0.18 if rows else -0.1), ncol=3, frameon=False)
        fig.savefig(path, metadata={"Software": None} if path.suffix == ".png" else None)
        plt.close(fig)
    return path


def plot_confusion(report: AgreementReport, path: str | Path) -> Path:
    path = Path(path)
    names = [c.value for c in CLASSES]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.6, 3.2))
        ax.imshow(report.confusion, cmap="Blues")
        for i, row in enumerate(report.confusion):
            for j, v in enumerate(row):
                ax.text(j, i, str(v), ha="center", va="center")
        ax.set_xticks(range(3))
        ax.set_xticklabels(names, rotation=30, ha="right")
        ax.set_yticks(range(3))
        ax.set_yticklabels(names)
        ax.set_xlabel("judge")
        ax.set_ylabel("human")
        ax.set_title(f"acc {report.accuracy:.2f}, macro-F1 {report.macro_f1:.2f}")
        fig.savefig(path, metadata={"Software": None} if path.suffix == ".png" else None)
        plt.close(fig)
    return path
