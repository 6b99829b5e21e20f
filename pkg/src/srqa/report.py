"""Static report rendering: loss/lr curves and evaluation tables.

Figures are written as PNG files next to tab-delimited tables so runs can
be inspected without any interactive tooling.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .downstream import EvalReport
from .errors import DataError


def plot_run_log(rows: list[dict], out_path: str) -> None:
    """Training curves: loss components on top, learning rate below."""
    if not rows:
        raise DataError("run log holds no rows")
    steps = [r["step"] for r in rows]
    fig, (ax_loss, ax_lr) = plt.subplots(
        2, 1, figsize=(8, 6), sharex=True, gridspec_kw={"height_ratios": [3, 1]}
    )
    ax_loss.plot(steps, [r["L_total"] for r in rows], label="total", lw=1.2)
    ax_loss.plot(steps, [r["L_contr"] for r in rows], label="contrastive", lw=0.8)
    ax_loss.plot(steps, [r["L_aux"] for r in rows], label="auxiliary", lw=0.8)
    ax_loss.set_ylabel("loss")
    ax_loss.legend(frameon=False)
    ax_loss.grid(alpha=0.3)
    ax_lr.plot(steps, [r["lr"] for r in rows], color="tab:red", lw=1.0)
    ax_lr.set_ylabel("lr")
    ax_lr.set_xlabel("step")
    ax_lr.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def run_log_table(rows: list[dict]) -> str:
    """Per-epoch means of the logged loss components, tab delimited."""
    if not rows:
        raise DataError("run log holds no rows")
    epochs = sorted({r["epoch"] for r in rows})
    lines = ["epoch\tsteps\tmean_L_contr\tmean_L_aux\tmean_L_total\tlast_lr"]
    for e in epochs:
        sub = [r for r in rows if r["epoch"] == e]
        lines.append(
            f"{e}\t{len(sub)}"
            f"\t{np.mean([r['L_contr'] for r in sub]):.6f}"
            f"\t{np.mean([r['L_aux'] for r in sub]):.6f}"
            f"\t{np.mean([r['L_total'] for r in sub]):.6f}"
            f"\t{sub[-1]['lr']:.3e}"
        )
    return "\n".join(lines) + "\n"


def write_run_report(rows: list[dict], out_dir: str) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    png = os.path.join(out_dir, "loss_curves.png")
    tsv = os.path.join(out_dir, "run_summary.tsv")
    plot_run_log(rows, png)
    with open(tsv, "w", encoding="utf-8") as fh:
        fh.write(run_log_table(rows))
    return [png, tsv]


def eval_comparison_table(reports: list[EvalReport], names: list[str]) -> str:
    """Side-by-side aggregate table for one or more evaluation reports."""
    if not reports or len(reports) != len(names):
        raise DataError("need one name per report")
    lines = ["report\titerations\tplcc_mean\tplcc_std\tsrcc_mean\tsrcc_std"]
    for name, report in zip(names, reports):
        lines.append(
            f"{name}\t{len(report.iterations)}"
            f"\t{report.plcc_mean:.6f}\t{report.plcc_std:.6f}"
            f"\t{report.srcc_mean:.6f}\t{report.srcc_std:.6f}"
        )
    scales = sorted({s for r in reports for s in r.per_scale})
    for scale in scales:
        for name, report in zip(names, reports):
            agg = report.per_scale.get(scale)
            if agg:
                lines.append(
                    f"{name} (x{scale})\t{agg['iterations']}"
                    f"\t{agg['plcc_mean']:.6f}\t{agg['plcc_std']:.6f}"
                    f"\t{agg['srcc_mean']:.6f}\t{agg['srcc_std']:.6f}"
                )
    return "\n".join(lines) + "\n"


def plot_eval_reports(reports: list[EvalReport], names: list[str], out_path: str) -> None:
    """Per-iteration correlation traces for each report."""
    fig, (ax_p, ax_s) = plt.subplots(1, 2, figsize=(10, 4), sharey=True)
    for name, report in zip(names, reports):
        its = [r["iteration"] for r in report.iterations]
        ax_p.plot(its, [r["plcc"] for r in report.iterations], marker="o", ms=3, label=name)
        ax_s.plot(its, [r["srcc"] for r in report.iterations], marker="o", ms=3, label=name)
    ax_p.set_title("PLCC per split")
    ax_s.set_title("SRCC per split")
    for ax in (ax_p, ax_s):
        ax.set_xlabel("iteration")
        ax.grid(alpha=0.3)
    ax_p.set_ylabel("correlation")
    ax_p.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def write_eval_report_files(
    reports: list[EvalReport], names: list[str], out_dir: str
) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    tsv = os.path.join(out_dir, "eval_comparison.tsv")
    png = os.path.join(out_dir, "eval_correlations.png")
    with open(tsv, "w", encoding="utf-8") as fh:
        fh.write(eval_comparison_table(reports, names))
    plot_eval_reports(reports, names, png)
    return [tsv, png]
