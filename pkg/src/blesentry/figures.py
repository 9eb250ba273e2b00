"""Render evaluation reports as figures alongside the delimited output."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .detector import decision_region
from .evaluate import DeviceOutcome, EvaluationReport

_BENIGN_COLOR = "#2a7e43"
_ATTACK_COLORS = ("#c23b22", "#e08020", "#8246af")


def _safe_name(text: str) -> str:
    return "".join(c if c.isalnum() or c in "._-" else "_" for c in text)


def render_device_figure(outcome: DeviceOutcome, t_mitm: float, path: str) -> str:
    """Histograms of benign and attacked intervals per operation, with the
    profile's decision regions shaded."""
    fig, axes = plt.subplots(len(outcome.ops), 1, figsize=(8, 2.8 * len(outcome.ops)), squeeze=False)
    for ax, op_outcome in zip(axes[:, 0], outcome.ops):
        series = [(op_outcome.benign_trs, "benign", _BENIGN_COLOR)]
        for color, (tool, trs) in zip(_ATTACK_COLORS, sorted(op_outcome.attacked_trs.items())):
            series.append((trs, f"attacked [{tool}]", color))
        all_values = [v * 1000.0 for trs, _, _ in series for v in trs]
        lo, hi = min(all_values), max(all_values)
        pad = max(1.0, 0.05 * (hi - lo))
        bins = 80
        for trs, label, color in series:
            ax.hist(
                [v * 1000.0 for v in trs],
                bins=bins,
                range=(lo - pad, hi + pad),
                alpha=0.65,
                label=label,
                color=color,
            )
        for mode in outcome.profile.modes_for(op_outcome.op):
            region_lo, region_hi = decision_region(mode, t_mitm)
            ax.axvspan(region_lo * 1000.0, region_hi * 1000.0, color="0.82", zorder=0)
            ax.axvline(mode.mean * 1000.0, color="0.4", linewidth=0.8, linestyle="--")
        ax.set_yscale("log")
        ax.set_ylabel("samples")
        ax.set_title(f"{outcome.device.name} {op_outcome.op.value.lower()} (regions shaded)")
        ax.legend(fontsize=8)
    axes[-1, 0].set_xlabel("response time (ms)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_summary_figure(report: EvaluationReport, path: str) -> str:
    """Per-device FP/FN bar chart with the overall accuracy."""
    names = [o.device.name for o in report.devices]
    fp = [o.fp_rate for o in report.devices]
    fn = [o.fn_rate for o in report.devices]
    x = range(len(names))
    fig, ax = plt.subplots(figsize=(8, 3.5))
    width = 0.38
    ax.bar([i - width / 2 for i in x], fp, width, label="FP %", color="#e08020")
    ax.bar([i + width / 2 for i in x], fn, width, label="FN %", color="#c23b22")
    ax.set_xticks(list(x))
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("error rate (%)")
    ax.set_title(
        "per-sample decisions: accuracy %.2f%% over %d decisions"
        % (report.accuracy, report.total_decisions)
    )
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_report_figures(report: EvaluationReport, outdir: str) -> list[str]:
    """Write one figure per device plus a summary; returns the paths."""
    os.makedirs(outdir, exist_ok=True)
    paths = []
    for outcome in report.devices:
        path = os.path.join(outdir, f"{_safe_name(outcome.device.name)}.png")
        paths.append(render_device_figure(outcome, report.config.t_mitm, path))
    paths.append(render_summary_figure(report, os.path.join(outdir, "summary.png")))
    return paths
