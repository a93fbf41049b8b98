"""Delimited outputs and their rendered figure twins.

Every report path writes machine-readable CSV/JSON and, alongside it, a PNG
rendered with the Agg backend, so batch runs on headless machines produce
both the numbers and the pictures.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np

from .graph import GraphStats
from .training import GapReport, HistoryRow, Metrics

_FIG_DPI = 120


def write_provenance(out_dir: str | Path, command: str, seed: int,
                     config: dict) -> Path:
    """Echo of everything needed to reproduce the outputs in out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"command": command, "seed": seed, "config": config,
               "schema_version": 1}
    path = out_dir / "provenance.json"
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n",
                    encoding="utf-8")
    return path


def _save_fig(fig, path: Path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=_FIG_DPI)
    plt.close(fig)


def _histogram_files(values, title: str, stem: Path, bins: int = 40,
                     log_count: bool = False) -> None:
    values = np.asarray(values, dtype=np.float64)
    counts, edges = np.histogram(values, bins=bins)
    with open(stem.with_suffix(".csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            w.writerow([f"{lo:.6g}", f"{hi:.6g}", int(c)])
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.hist(values, bins=bins, color="#4878a8", edgecolor="white")
    if log_count:
        ax.set_yscale("log")
    ax.set_xlabel(title)
    ax.set_ylabel("graphs")
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    _save_fig(fig, stem.with_suffix(".png"))


def stats_report(out_dir: str | Path, names: list[str], kinds: list[str],
                 stats: list[GraphStats],
                 labels: dict | None = None) -> dict:
    """Per-graph stats table plus distribution histograms.

    Returns a summary dict (also written as summary.json).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    with open(out_dir / "stats.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "kind", "num_nodes", "num_edges", "num_back_edges",
                    "num_loops", "max_loop_length", "truncated"])
        for name, kind, st in zip(names, kinds, stats):
            w.writerow([name, kind, st.num_nodes, st.num_edges,
                        st.num_back_edges, st.num_loops, st.max_loop_length,
                        int(st.truncated)])

    _histogram_files([s.num_nodes for s in stats], "nodes per graph",
                     out_dir / "hist_nodes")
    _histogram_files([s.num_edges for s in stats], "edges per graph",
                     out_dir / "hist_edges")
    _histogram_files([s.num_loops for s in stats], "loops per graph",
                     out_dir / "hist_loops", bins=20)
    _histogram_files([s.max_loop_length for s in stats], "longest loop length",
                     out_dir / "hist_loop_length", bins=20)

    if labels:
        sizes, luts, cps = [], [], []
        for name, st in zip(names, stats):
            lv = labels.get(name)
            if lv is not None:
                sizes.append(st.num_nodes)
                luts.append(lv.lut)
                cps.append(lv.cp_ns)
        if sizes:
            fig, axes = plt.subplots(1, 2, figsize=(8, 3.2))
            axes[0].scatter(sizes, luts, s=6, alpha=0.4, color="#4878a8")
            axes[0].set_xlabel("nodes")
            axes[0].set_ylabel("LUT")
            axes[1].scatter(sizes, cps, s=6, alpha=0.4, color="#a85448")
            axes[1].set_xlabel("nodes")
            axes[1].set_ylabel("CP (ns)")
            _save_fig(fig, out_dir / "labels_vs_size.png")
            with open(out_dir / "labels_vs_size.csv", "w", newline="",
                      encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(["num_nodes", "lut", "cp_ns"])
                for row in zip(sizes, luts, cps):
                    w.writerow(row)

    summary = {
        "graphs": len(stats),
        "mean_nodes": float(np.mean([s.num_nodes for s in stats])),
        "mean_edges": float(np.mean([s.num_edges for s in stats])),
        "graphs_with_loops": int(sum(1 for s in stats if s.num_loops > 0)),
        "max_loop_length": int(max((s.max_loop_length for s in stats), default=0)),
        "truncated_loop_searches": int(sum(1 for s in stats if s.truncated)),
    }
    (out_dir / "summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return summary


def write_history(out_dir: str | Path, history: list[HistoryRow],
                  target: str) -> None:
    """history.csv plus the loss/error training curves."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"history_{target}.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "split", "loss", "rel_err"])
        for row in history:
            w.writerow([row.epoch, row.split, f"{row.loss:.9g}",
                        f"{row.rel_err:.9g}"])

    fig, axes = plt.subplots(1, 2, figsize=(8, 3.2))
    for split_name, color in (("train", "#4878a8"), ("val", "#a85448")):
        xs = [r.epoch for r in history if r.split == split_name]
        if not xs:
            continue
        axes[0].plot(xs, [r.loss for r in history if r.split == split_name],
                     label=split_name, color=color)
        axes[1].plot(xs, [r.rel_err for r in history if r.split == split_name],
                     label=split_name, color=color)
    axes[0].set_xlabel("epoch")
    axes[0].set_ylabel("loss")
    axes[0].set_yscale("log")
    axes[1].set_xlabel("epoch")
    axes[1].set_ylabel("relative error")
    axes[1].legend(frameon=False)
    _save_fig(fig, out_dir / f"curve_{target}.png")


def write_metrics(out_dir: str | Path, metrics: dict[str, Metrics] | Metrics,
                  filename: str = "metrics.json") -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if isinstance(metrics, Metrics):
        payload = metrics.to_dict()
    else:
        payload = {
            "targets": {t: m.to_dict() for t, m in metrics.items()},
            "mean_rel_err": {t: m.mean_rel_err for t, m in metrics.items()},
        }
    path = out_dir / filename
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n",
                    encoding="utf-8")
    return path


def gap_files(out_dir: str | Path, gap: GapReport) -> None:
    """gap_report.json plus the error-versus-size scatter (CSV and PNG)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "gap_report.json").write_text(
        json.dumps(gap.to_dict(), sort_keys=True, indent=2) + "\n",
        encoding="utf-8")

    with open(out_dir / "gap_scatter.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "num_nodes", "truth", "prediction", "rel_err"])
        for r in gap.records:
            w.writerow([r["name"], r["num_nodes"], f"{r['truth']:.9g}",
                        f"{r['prediction']:.9g}", f"{r['rel_err']:.9g}"])

    fig, ax = plt.subplots(figsize=(5, 3.4))
    xs = [r["num_nodes"] for r in gap.records]
    ys = [r["rel_err"] for r in gap.records]
    ax.scatter(xs, ys, s=8, alpha=0.5, color="#4878a8", label="out-of-dist")
    ax.axhline(gap.in_dist_err, color="#a85448", linestyle="--",
               label=f"in-dist mean {gap.in_dist_err:.3f}")
    ax.set_xlabel("graph size (nodes)")
    ax.set_ylabel(f"{gap.target} relative error")
    ax.set_xscale("log")
    ax.legend(frameon=False)
    _save_fig(fig, out_dir / "gap_scatter.png")
