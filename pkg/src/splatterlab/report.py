"""Fit-run reporting: loss-curve and metric figures plus CSV/JSON tables.

All figures render headless (Agg) to PNG files next to the machine-readable
outputs, so a fit directory is self-describing: trace.jsonl for the loss
log, metrics.json/metrics.csv for the numbers, and the figures for a quick
look.
"""

from __future__ import annotations

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .evaluation import MetricsReport


def write_trace(path: str, trace) -> None:
    """One JSON object per iteration: index plus the full loss breakdown."""
    with open(path, "w") as f:
        for i, bd in enumerate(trace):
            row = {"iteration": i}
            row.update(bd.to_json())
            f.write(json.dumps(row, sort_keys=True) + "\n")


def loss_curve_figure(path: str, trace) -> None:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    iters = range(len(trace))
    ax.plot(iters, [b.total for b in trace], label="total", lw=1.8)
    ax.plot(iters, [b.L_d for b in trace], label="data (L_e + lp*L_p)", lw=1.0)
    ax.plot(iters, [b.L_m for b in trace], label="opacity mean", lw=1.0)
    ax.plot(iters, [b.L_c for b in trace], label="scale reg", lw=1.0)
    ax.plot(iters, [b.L_j for b in trace], label="jitter", lw=1.0)
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_title("fit loss trace")
    ax.legend(loc="upper right", fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def view_psnr_figure(path: str, report: MetricsReport) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    n = len(report.view_psnr)
    labels = ["input"] + [f"v{k}" for k in range(1, n)]
    colors = ["#c44e52"] + ["#4c72b0"] * (n - 1)
    ax.bar(range(n), report.view_psnr, color=colors)
    ax.axhline(report.mean_psnr, color="gray", ls="--", lw=1,
               label=f"mean {report.mean_psnr:.2f} dB")
    ax.set_xticks(range(n))
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_ylabel("PSNR (dB)")
    ax.set_title("per-view reconstruction quality")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def metrics_csv(path: str, report: MetricsReport) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["view", "psnr_db", "ssim"])
        for i, (p, s) in enumerate(zip(report.view_psnr, report.view_ssim)):
            w.writerow(["input" if i == 0 else f"view_{i:02d}",
                        f"{p:.4f}", f"{s:.5f}"])
        w.writerow(["mean", f"{report.mean_psnr:.4f}", f"{report.mean_ssim:.5f}"])
        w.writerow(["jitter_metric", f"{report.jitter:.6f}", ""])


def write_report(out_dir: str, trace, report: MetricsReport) -> list:
    """Write every report artifact; returns the list of file paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []

    def _p(name):
        paths.append(os.path.join(out_dir, name))
        return paths[-1]

    write_trace(_p("trace.jsonl"), trace)
    loss_curve_figure(_p("loss_curve.png"), trace)
    view_psnr_figure(_p("view_psnr.png"), report)
    metrics_csv(_p("metrics.csv"), report)
    with open(_p("metrics.json"), "w") as f:
        json.dump(report.to_json(), f, indent=1, sort_keys=True)
        f.write("\n")
    return paths
