"""Training-set-size sweep and power-law fit of the resulting metric."""

from __future__ import annotations

import copy
import json
import logging
from pathlib import Path

from ..evaluation.scaling import ScalingLawFit, fit_scaling_law
from .pipeline import REPORT, run_pipeline

log = logging.getLogger(__name__)

DEFAULT_METRIC = "validation.zeroshot.auc"


def check_fractions(fractions) -> list[float]:
    fr = [float(f) for f in fractions]
    if not fr:
        raise ValueError("no fractions given")
    bad = [f for f in fr if not 0.0 < f <= 1.0]
    if bad:
        raise ValueError(f"fractions must lie in (0, 1]: {bad}")
    if any(b <= a for a, b in zip(fr, fr[1:])):
        raise ValueError("fractions must be sorted ascending and distinct")
    return fr


def resolve_metric(report: dict, metric: str) -> float:
    """``metric`` is a full report key or a short name such as ``auc`` (validation zero-shot)."""
    for key in (metric, f"validation.zeroshot.{metric}"):
        if key in report:
            return float(report[key])
    raise KeyError(f"metric {metric!r} not in report")


def collect_points(runs_dir: str | Path, metric: str = DEFAULT_METRIC) -> list[tuple[float, float]]:
    """(training-set size, metric) for every ``report.json`` directly below ``runs_dir``."""
    points = []
    for report_path in sorted(Path(runs_dir).glob(f"*/{REPORT}")):
        report = json.loads(report_path.read_text("utf-8"))
        points.append((float(report["n_train"]), resolve_metric(report, metric)))
    return sorted(points)


def plot_scaling(path: str | Path, fit: ScalingLawFit | None, points, metric: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import numpy as np

    n = np.array([p[0] for p in points])
    y = np.array([p[1] for p in points])
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(n, y, "o", label="runs")
    if fit is not None:
        grid = np.geomspace(n.min(), n.max(), 100)
        ax.plot(grid, fit.predict(grid), "-", label=f"{fit.a:.3g} n^{fit.b:.3g}")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("training volumes")
    ax.set_ylabel(metric)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def fit_and_plot(points, out_dir: str | Path, metric: str = DEFAULT_METRIC) -> dict:
    """Fit, write ``fit.json`` and ``scaling.png``; with fewer than two points the fit is refused."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        fit = fit_scaling_law(points)
        result = fit.to_dict()
    except ValueError as exc:
        log.warning("scaling-law fit refused: %s", exc)
        fit, result = None, {"points": [list(p) for p in points], "error": str(exc)}
    result["metric"] = metric
    (out / "fit.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    plot_scaling(out / "scaling.png", fit, points, metric)
    return result


def sweep_data_fractions(config: dict, fractions, out_dir: str | Path | None = None, metric: str = DEFAULT_METRIC,
                         force: bool = False) -> dict:
    """Run the whole pipeline once per training fraction, each in ``fraction_<f>/``.

    All runs share the seed, so the data and the fraction subsets are nested
    (every smaller subset lies inside every larger one). Returns the fit result
    with its points; ``error`` replaces ``a``/``b`` when fewer than two fractions ran.
    """
    fr = check_fractions(fractions)
    out = Path(out_dir or config["output_root"])
    points = []
    for f in fr:
        cfg = copy.deepcopy(config)
        cfg["data"]["train_fraction"] = f
        cfg["output_root"] = str(out / f"fraction_{f:g}")
        log.info("sweep: fraction %g", f)
        run_pipeline(cfg, force=force)
        report = json.loads((Path(cfg["output_root"]) / REPORT).read_text("utf-8"))
        points.append((float(report["n_train"]), resolve_metric(report, metric)))
    return fit_and_plot(points, out, metric)
