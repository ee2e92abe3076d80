"""Cross-strategy summaries, learning-curve plots and curriculum-trend analysis."""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from .harness import SCHEMA_VERSION, mean_stderr


@dataclass
class StrategyCurves:
    strategy: str
    steps: np.ndarray
    success: np.ndarray  # (seeds, steps)
    interventions: np.ndarray  # (seeds, steps)


def read_metrics(path: str | Path) -> list[dict]:
    path = Path(path)
    if path.is_dir():
        path = path / "metrics.csv"
    with open(path) as f:
        first = f.readline()
        if first.strip() != f"# schema_version={SCHEMA_VERSION}":
            raise ValueError(f"{path}: unsupported metrics schema {first.strip()!r}")
        return list(csv.DictReader(f))


def curves_from_rows(rows: list[dict]) -> list[StrategyCurves]:
    by_strategy: dict[str, dict[int, list[dict]]] = {}
    for r in rows:
        by_strategy.setdefault(r["strategy"], {}).setdefault(int(r["seed"]), []).append(r)
    out = []
    for name, seeds in by_strategy.items():
        runs = list(seeds.values())
        steps = np.array([int(r["step"]) for r in runs[0]])
        n = min(len(run) for run in runs)
        steps = steps[:n]
        succ = np.array([[float(r["eval_success"]) for r in run[:n]] for run in runs])
        inter = np.array([[float(r["intervention_count"]) for r in run[:n]] for run in runs])
        out.append(StrategyCurves(name, steps, succ, inter))
    return out


def align(curves: list[StrategyCurves]) -> tuple[np.ndarray, list[StrategyCurves]]:
    """Put every strategy on a common step grid.

    If the grids differ, all curves are linearly resampled onto the coarsest
    one (fewest points) and a warning is issued.
    """
    grids = [c.steps for c in curves]
    if all(len(g) == len(grids[0]) and np.array_equal(g, grids[0]) for g in grids):
        return grids[0], curves
    coarse = min(grids, key=len)
    warnings.warn("evaluation grids differ; resampling onto the coarsest grid")
    out = []
    for c in curves:
        succ = np.array([np.interp(coarse, c.steps, row) for row in c.success])
        inter = np.array([np.interp(coarse, c.steps, row) for row in c.interventions])
        out.append(StrategyCurves(c.strategy, coarse, succ, inter))
    return coarse, out


def comparison_csv(steps: np.ndarray, curves: list[StrategyCurves]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["step"]
    for c in curves:
        header += [f"{c.strategy}_mean", f"{c.strategy}_stderr"]
    w.writerow(header)
    for j, step in enumerate(steps):
        row = [int(step)]
        for c in curves:
            mean, se = mean_stderr(c.success[:, j])
            row += [repr(mean), "" if se is None else repr(se)]
        w.writerow(row)
    return buf.getvalue()


def interventions_csv(curves: list[StrategyCurves]) -> str:
    """Final success and interventions per strategy, with the ratio to the fewest resets."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["strategy", "final_success_mean", "final_success_stderr",
                "interventions_mean", "intervention_ratio"])
    finals = [(c, c.interventions[:, -1].mean()) for c in curves]
    fewest = min(i for _, i in finals) or 1.0
    for c, inter in finals:
        mean, se = mean_stderr(c.success[:, -1])
        w.writerow([c.strategy, repr(mean), "" if se is None else repr(se),
                    repr(float(inter)), repr(float(inter / fewest))])
    return buf.getvalue()


def plot_curves(steps: np.ndarray, curves: list[StrategyCurves], path: str | Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for c in curves:
        mean = c.success.mean(axis=0)
        ax.plot(steps, mean, label=c.strategy)
        if c.success.shape[0] >= 2:
            se = c.success.std(axis=0, ddof=1) / math.sqrt(c.success.shape[0])
            ax.fill_between(steps, mean - se, mean + se, alpha=0.25)
    ax.set_xlabel("training steps")
    ax.set_ylabel("evaluation success")
    ax.set_ylim(-0.05, 1.05)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def emit_summary(inputs: list[str | Path], out: str | Path) -> dict[str, str]:
    """Aggregate metrics from run directories into comparison artifacts under ``out``."""
    if not inputs:
        raise ValueError("need at least one metrics set")
    rows = []
    for p in inputs:
        rows.extend(read_metrics(p))
    steps, curves = align(curves_from_rows(rows))
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "comparison.csv": comparison_csv(steps, curves),
        "interventions.csv": interventions_csv(curves),
    }
    for name, text in files.items():
        (out / name).write_text(text)
    plot_curves(steps, curves, out / "learning_curves.svg")
    return files


def read_trace(path: str | Path) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Per-seed (training_step, normalized_distance) arrays from a trace CSV."""
    path = Path(path)
    if path.is_dir():
        path = path / "curriculum_trace.csv"
    series: dict[int, tuple[list, list]] = {}
    with open(path) as f:
        for r in csv.DictReader(f):
            if r["normalized_distance"] == "":
                continue
            steps, dists = series.setdefault(int(r["seed"]), ([], []))
            steps.append(int(r["training_step"]))
            dists.append(float(r["normalized_distance"]))
    return {k: (np.array(s), np.array(d)) for k, (s, d) in series.items()}


@dataclass
class TrendStats:
    n_subgoals: int
    spearman: float
    final_decile_max: float
    final_decile_mean: float


def trend_stats(steps: np.ndarray, distances: np.ndarray, tail: float = 0.1) -> TrendStats:
    """Rank correlation of curriculum distance with time, plus tail statistics."""
    n = len(distances)
    k = max(1, int(math.ceil(tail * n)))
    if n < 2 or np.all(distances == distances[0]) or np.all(steps == steps[0]):
        rho = math.nan
    else:
        rho = float(spearmanr(steps, distances).statistic)
    tail_d = distances[-k:]
    return TrendStats(n, rho, float(tail_d.max()), float(tail_d.mean()))
