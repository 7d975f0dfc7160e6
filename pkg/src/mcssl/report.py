"""Render figures from evaluation output: per-condition F-measure bars,
threshold-sweep curves, ELBO traces, and spatial spectra.

Figures are written as PNG files next to the delimited report output.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def plot_breakdown(report: dict, out_path) -> None:
    groups = report.get("breakdown", {})
    if not groups:
        return
    labels = list(groups)
    f_vals = [groups[k]["f_measure"] for k in labels]
    acc = [groups[k]["count_accuracy"] for k in labels]
    x = np.arange(len(labels))
    fig, ax = plt.subplots(figsize=(1.5 + 1.2 * len(labels), 3.5))
    ax.bar(x - 0.18, f_vals, width=0.36, label="F-measure")
    ax.bar(x + 0.18, acc, width=0.36, label="count accuracy")
    ax.set_xticks(x)
    ax.set_xticklabels(labels)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("score")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def plot_sweep(sweep: dict, out_path) -> None:
    per = sweep.get("per_threshold", {})
    if not per:
        return
    ths = sorted(float(t) for t in per)
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.plot(ths, [per[t] if t in per else per[str(t)] for t in ths], marker="o")
    ax.axvline(float(sweep["best_threshold"]), color="k", ls="--", lw=0.8)
    ax.set_xlabel("indicator-peak threshold")
    ax.set_ylabel("mean F-measure")
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def plot_elbo_trace(trace, out_path, scene_id: str = "") -> None:
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.plot(np.arange(len(trace)), trace)
    ax.set_xlabel("iteration")
    ax.set_ylabel("ELBO")
    if scene_id:
        ax.set_title(scene_id, fontsize=9)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def plot_spectrum(values, out_path, method: str = "", true_doas=None) -> None:
    values = np.asarray(values, dtype=float)
    D = values.shape[0]
    deg = np.arange(D) * 360.0 / D
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    ax.plot(deg, values / max(values.max(), 1e-30), label=method or "spectrum")
    if true_doas:
        for i, t in enumerate(true_doas):
            ax.axvline(t, color="r", ls=":", lw=0.9,
                       label="true DoA" if i == 0 else None)
    ax.set_xlabel("azimuth (deg)")
    ax.set_ylabel("normalized response")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def render_report_dir(eval_dir, results_dir=None, out_dir=None) -> list:
    """Render every figure derivable from an evaluation directory (and,
    optionally, per-scene localization results). Returns written paths."""
    eval_dir = Path(eval_dir)
    out = Path(out_dir) if out_dir else eval_dir
    out.mkdir(parents=True, exist_ok=True)
    written = []

    report_path = eval_dir / "report.json"
    if report_path.exists():
        with open(report_path) as f:
            report = json.load(f)
        p = out / "scores_by_condition.png"
        plot_breakdown(report, p)
        written.append(p)

    sweep_path = eval_dir / "sweep.json"
    if sweep_path.exists():
        with open(sweep_path) as f:
            sweep = json.load(f)
        sweep["per_threshold"] = {float(k): v for k, v in sweep["per_threshold"].items()}
        p = out / "threshold_sweep.png"
        plot_sweep(sweep, p)
        written.append(p)

    if results_dir is not None:
        for path in sorted(Path(results_dir).glob("*.json")):
            with open(path) as f:
                doc = json.load(f)
            if "elbo_trace" in doc and doc["elbo_trace"]:
                p = out / f"{path.stem}.elbo.png"
                plot_elbo_trace(doc["elbo_trace"], p, doc.get("scene_id", path.stem))
                written.append(p)
            if "spectrum" in doc and doc["spectrum"]:
                p = out / f"{path.stem}.spectrum.png"
                plot_spectrum(doc["spectrum"], p, doc.get("method", ""))
                written.append(p)
    return [str(p) for p in written]
