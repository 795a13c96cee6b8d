"""Terminal summaries for each pipeline stage."""

from typing import Optional

import pandas as pd

from src.evaluate import EvalReport
from src.sweep import SweepReport


def format_metric(value: Optional[float], digits: int = 4) -> str:
    """Fixed-precision number, or n/a for missing values."""
    if value is None:
        return "n/a"
    return f"{value:.{digits}f}"


def format_delta(value: Optional[float]) -> str:
    if value is None:
        return "n/a"
    return f"{value:+.4f}"


def format_lambda(lam: Optional[float]) -> str:
    return "dense" if lam is None else f"{lam:.2f}"


def render_training_log(stage: str, log: pd.DataFrame) -> str:
    """First and last loss of a training run, plus windowed averages."""
    if log.empty:
        return f"{stage}: no steps"
    window = max(1, len(log) // 10)
    lines = [
        f"{stage}: {len(log)} steps",
        f"  loss  first {format_metric(log['loss'].iloc[0])}  last {format_metric(log['loss'].iloc[-1])}",
        f"  mean over first/last {window} steps: "
        f"{format_metric(log['loss'].iloc[:window].mean())} -> {format_metric(log['loss'].iloc[-window:].mean())}",
    ]
    return "\n".join(lines)


def render_score_summary(frame: pd.DataFrame, lam: float, top: int = 5) -> str:
    lines = [f"Importance scores (lambda={lam:.2f})"]
    for unit_type in ("head", "neuron"):
        part = frame[frame["unit_type"] == unit_type]
        if part.empty:
            continue
        lines.append(
            f"  {unit_type:6} n={len(part):5}  min {part['score'].min():.3e}  "
            f"median {part['score'].median():.3e}  max {part['score'].max():.3e}"
        )
    heads = frame[frame["unit_type"] == "head"].sort_values(["score", "layer", "index"])
    if not heads.empty:
        lines.append(f"  lowest {min(top, len(heads))} heads:")
        for row in heads.head(top).to_dict("records"):
            lines.append(f"    L{row['layer']} H{row['index']}  {row['score']:.3e}")
    return "\n".join(lines)


def render_prune_summary(summary: dict) -> str:
    lines = [
        f"Pruned at s={summary['sparsity']:.2f} (lambda={format_lambda(summary.get('lambda'))})",
        f"  heads   {summary['heads_pruned']}/{summary['heads_total']}  "
        f"threshold {format_metric(summary.get('head_threshold'), 6)}",
        f"  neurons {summary['neurons_pruned']}/{summary['neurons_total']}  "
        f"threshold {format_metric(summary.get('neuron_threshold'), 6)}",
    ]
    if "parameter_sparsity" in summary:
        lines.append(
            f"  parameters {summary['parameters_retained']}/{summary['parameters_dense']} retained "
            f"({summary['parameter_sparsity']:.1%} removed)"
        )
    return "\n".join(lines)


def render_eval_report(report: EvalReport) -> str:
    lines = [
        f"Evaluation: {report.model_id}",
        f"  spearman    {format_metric(report.spearman)}",
        f"  alignment   {format_metric(report.alignment)}",
        f"  uniformity  {format_metric(report.uniformity)}",
    ]
    if report.probe_accuracy is not None:
        lines.append(f"  probe acc   {format_metric(report.probe_accuracy)}")
    return "\n".join(lines)


def render_sweep_report(report: SweepReport) -> str:
    """Sweep table followed by the best sparsity per lambda."""
    lines = ["Sweep"]
    lines.append(f"{'s':>6} {'lambda':>7} {'spearman':>9} {'align':>8} {'uniform':>8} {'probe':>7}")
    for r in report.all_rows():
        lines.append(
            f"{r.sparsity:6.2f} {format_lambda(r.lam):>7} {r.spearman:9.4f} "
            f"{r.alignment:8.4f} {r.uniformity:8.4f} {format_metric(r.probe_accuracy, 3):>7}"
        )

    best = report.best_rows()
    if not best.empty:
        lines.append("Best sparsity per lambda:")
        # "lambda" is a keyword, so rows are read as dicts
        for row in best.to_dict("records"):
            probe = ""
            if pd.notna(row["probe_delta"]):
                probe = f"  probe {format_delta(row['probe_delta'])}"
            lines.append(
                f"  lambda {row['lambda']:.2f}: s={row['best_s']:.2f}  "
                f"spearman {row['spearman']:.4f} ({format_delta(row['spearman_delta'])} vs dense){probe}"
            )
    return "\n".join(lines)
