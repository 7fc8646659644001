"""Loss-curve comparison between two alignment runs."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

FINAL_FRACTION = 0.2


def read_loss_trace(path: str | Path) -> list[float]:
    """Loss column of a ``step,loss`` CSV; a run directory resolves to its ``align/loss.csv``."""
    path = Path(path)
    if path.is_dir():
        path = path / "align" / "loss.csv" if (path / "align").is_dir() else path / "loss.csv"
    with open(path, newline="", encoding="utf-8") as fh:
        return [float(row["loss"]) for row in csv.DictReader(fh)]


def final_window(n_steps: int, fraction: float = FINAL_FRACTION) -> int:
    """Number of trailing steps averaged: ceil(fraction * n), at least one."""
    return max(1, math.ceil(fraction * n_steps - 1e-9))


def final_mean(trace, fraction: float = FINAL_FRACTION) -> float:
    trace = np.asarray(trace, dtype=np.float64)
    if trace.size == 0:
        raise ValueError("empty loss trace")
    return float(trace[-final_window(trace.size, fraction):].mean())


def compare_loss_curves(run_a, run_b, out_dir: str | Path | None = None,
                        labels: tuple[str, str] = ("a", "b")) -> dict:
    """Overlay two loss traces and summarise their final-20% means.

    ``run_a``/``run_b`` are traces or paths to a run directory or loss CSV.
    ``difference`` is mean(a) - mean(b), so a negative value means run a ends lower.
    """
    a = read_loss_trace(run_a) if isinstance(run_a, (str, Path)) else list(map(float, run_a))
    b = read_loss_trace(run_b) if isinstance(run_b, (str, Path)) else list(map(float, run_b))
    if len(a) != len(b):
        raise ValueError(f"loss traces differ in length: {len(a)} vs {len(b)} steps")
    if not a:
        raise ValueError("empty loss traces")
    mean_a, mean_b = final_mean(a), final_mean(b)
    summary = {
        "n_steps": len(a),
        "window": final_window(len(a)),
        f"final_mean_{labels[0]}": mean_a,
        f"final_mean_{labels[1]}": mean_b,
        "difference": mean_a - mean_b,
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "loss_comparison.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        _plot_curves(out / "loss_curves.png", a, b, labels, summary["window"])
        summary["plot"] = str(out / "loss_curves.png")
    return summary


def _plot_curves(path: Path, a, b, labels, window: int) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    steps = np.arange(1, len(a) + 1)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(steps, a, label=labels[0], lw=1.2)
    ax.plot(steps, b, label=labels[1], lw=1.2)
    ax.axvspan(len(a) - window + 0.5, len(a) + 0.5, color="0.9", zorder=0)
    ax.set_xlabel("step")
    ax.set_ylabel("contrastive loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
