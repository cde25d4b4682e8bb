"""Figure rendering for evaluation reports.

Renders parity plots and SOH-versus-cycle traces as PNG files next to the
delimited outputs. Uses the Agg backend so it works headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .metrics import EvalReport  # noqa: E402


def _parity_axes(ax, true, pred, label: str):
    lo = min(np.min(true), np.min(pred))
    hi = max(np.max(true), np.max(pred))
    pad = 0.03 * (hi - lo + 1e-12)
    ax.plot([lo - pad, hi + pad], [lo - pad, hi + pad], "k--", lw=1, label="y = x")
    ax.plot(true, pred, ".", ms=3, alpha=0.5)
    ax.set_xlabel(f"measured {label}")
    ax.set_ylabel(f"predicted {label}")
    ax.set_xlim(lo - pad, hi + pad)
    ax.set_ylim(lo - pad, hi + pad)
    ax.legend(loc="upper left", fontsize=8)


def parity_plot(true, pred, label: str, path, r2_value: float | None = None) -> Path:
    true = np.asarray(true)
    pred = np.asarray(pred)
    # parity plots with >20k points rasterize slowly and show nothing extra
    if true.size > 20000:
        step = true.size // 20000 + 1
        true, pred = true[::step], pred[::step]
    fig, ax = plt.subplots(figsize=(4.2, 4.0))
    _parity_axes(ax, true, pred, label)
    if r2_value is not None:
        ax.set_title(f"{label}: R$^2$ = {r2_value:.4f}", fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def soh_trace_plot(report: EvalReport, path) -> Path:
    """Per-cell SOH vs cycle number: truth, direct output, capacity-calibrated."""
    cells = sorted({r.cell for r in report.rows})
    ncols = min(3, len(cells))
    nrows = (len(cells) + ncols - 1) // ncols
    fig, axes = plt.subplots(nrows, ncols, figsize=(3.6 * ncols, 2.6 * nrows),
                             squeeze=False, sharey=True)
    for ax, cell in zip(axes.flat, cells):
        rows = sorted((r for r in report.rows if r.cell == cell),
                      key=lambda r: r.cycle_index)
        k = [r.cycle_index for r in rows]
        ax.plot(k, [r.soh_true for r in rows], "k-", lw=1.2, label="true")
        ax.plot(k, [r.soh_cali for r in rows], "C0.", ms=2.5, label="calibrated")
        ax.plot(k, [r.soh_pred for r in rows], "C1.", ms=2.5, alpha=0.6, label="direct")
        ax.set_title(cell, fontsize=9)
        ax.set_xlabel("cycle")
        ax.set_ylabel("SOH")
    for ax in axes.flat[len(cells):]:
        ax.axis("off")
    handles, labels = axes.flat[0].get_legend_handles_labels()
    fig.legend(handles, labels, loc="lower right", fontsize=8, ncol=3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def render_report_figures(report: EvalReport, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if report.soc_true is not None and report.soc_true.size:
        written.append(parity_plot(report.soc_true, report.soc_pred, "SOC",
                                   out_dir / "parity_soc.png", report.soc.r2))
    written.append(parity_plot([r.q_true for r in report.rows],
                               [r.q_pred for r in report.rows], "capacity [Ah]",
                               out_dir / "parity_capacity.png", report.q_ah.r2))
    written.append(soh_trace_plot(report, out_dir / "soh_vs_cycle.png"))
    return written


def training_trace_plot(trace_rows: list[dict], path) -> Path:
    """Loss and validation-selection curves from a training trace."""
    epochs = [int(r["epoch"]) for r in trace_rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.0, 3.0))
    ax1.semilogy(epochs, [float(r["train_loss"]) for r in trace_rows], "C0-")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("training loss")
    ax2.plot(epochs, [float(r["valid_r2_q"]) for r in trace_rows], label="R$^2$(Q)")
    ax2.plot(epochs, [float(r["valid_r2_soh"]) for r in trace_rows], label="R$^2$(SOH)")
    ax2.plot(epochs, [float(r["valid_r2_avg"]) for r in trace_rows], "k--",
             label="selection metric")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("validation R$^2$")
    ax2.set_ylim(top=1.02)
    ax2.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)
