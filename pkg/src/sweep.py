"""Sparsity x lambda sweeps: score, prune, rewind, retrain, evaluate."""

from __future__ import annotations

import logging
import multiprocessing
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import pandas as pd

from src.checkpoint import write_frame, write_text
from src.config import RunConfig
from src.data import LabeledSet, ScoredPairSet, SentenceCorpus, Vocab
from src.evaluate import EvalReport, evaluate_model
from src.model import EncoderWeights, MaskSet
from src.pruner import SparsitySpec, select_prune_set
from src.scoring import estimate_importance
from src.train import RewindCheckpoint, rewind_and_retrain

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["s", "lambda", "spearman", "alignment", "uniformity", "probe_accuracy"]


@dataclass
class SweepInputs:
    """Everything a sweep cell needs; shared by all cells."""
    trained: EncoderWeights
    checkpoint: RewindCheckpoint
    corpus: SentenceCorpus
    vocab: Vocab
    scoring_pairs: ScoredPairSet
    eval_pairs: ScoredPairSet
    config: RunConfig
    probe_sets: Optional[tuple[LabeledSet, LabeledSet]] = None


@dataclass
class SweepReport:
    """Rows keyed by (s, lambda); the dense row has s = 0 and no lambda."""
    dense: EvalReport
    rows: list[EvalReport]
    wallclock: dict[tuple[float, Optional[float]], float] = field(default_factory=dict)

    def all_rows(self) -> list[EvalReport]:
        return [self.dense] + sorted(self.rows, key=lambda r: (r.sparsity, r.lam))

    def to_frame(self) -> pd.DataFrame:
        records = [
            {
                "s": r.sparsity,
                "lambda": r.lam,
                "spearman": r.spearman,
                "alignment": r.alignment,
                "uniformity": r.uniformity,
                "probe_accuracy": r.probe_accuracy,
            }
            for r in self.all_rows()
        ]
        return pd.DataFrame(records, columns=REPORT_COLUMNS)

    def lambdas(self) -> list[float]:
        return sorted({r.lam for r in self.rows})

    def curve(self, lam: float) -> pd.DataFrame:
        """Spearman against sparsity for one lambda, starting at the dense point."""
        points = [(0.0, self.dense.spearman)]
        points += sorted((r.sparsity, r.spearman) for r in self.rows if r.lam == lam)
        return pd.DataFrame(points, columns=["s", "spearman"])

    def best_rows(self) -> pd.DataFrame:
        """Per lambda, the sparsity with the highest Spearman and its gain over dense."""
        records = []
        for lam in self.lambdas():
            candidates = [r for r in self.rows if r.lam == lam]
            best = max(candidates, key=lambda r: (r.spearman, -r.sparsity))
            probe_delta = None
            if best.probe_accuracy is not None and self.dense.probe_accuracy is not None:
                probe_delta = best.probe_accuracy - self.dense.probe_accuracy
            records.append({
                "lambda": lam,
                "best_s": best.sparsity,
                "spearman": best.spearman,
                "spearman_delta": best.spearman - self.dense.spearman,
                "probe_accuracy": best.probe_accuracy,
                "probe_delta": probe_delta,
            })
        return pd.DataFrame(records, columns=[
            "lambda", "best_s", "spearman", "spearman_delta", "probe_accuracy", "probe_delta",
        ])

    def timing_frame(self) -> pd.DataFrame:
        records = [{"s": s, "lambda": lam, "wallclock_s": t}
                   for (s, lam), t in sorted(self.wallclock.items(), key=lambda kv: (kv[0][0], kv[0][1] or -1.0))]
        return pd.DataFrame(records, columns=["s", "lambda", "wallclock_s"])


def sweep_grid(sparsities: Sequence[float], lambdas: Sequence[float]) -> list[tuple[float, float]]:
    """Unique (s, lambda) keys with s > 0, in request order."""
    keys: list[tuple[float, float]] = []
    for lam in lambdas:
        for s in sparsities:
            if s == 0.0:
                logger.info("s=0 is the dense row; not adding it per lambda")
                continue
            key = (float(s), float(lam))
            if key in keys:
                logger.warning("Duplicate sweep cell s=%.2f lambda=%.2f ignored", s, lam)
                continue
            keys.append(key)
    return keys


def _run_cell(inputs: SweepInputs, masks: MaskSet, s: float, lam: Optional[float], rewind: bool):
    config = inputs.config
    start = time.perf_counter()
    if rewind:
        weights, _ = rewind_and_retrain(masks, inputs.checkpoint, inputs.corpus, inputs.vocab,
                                        config.model, config.train)
        model_id = "rewound"
    else:
        weights = inputs.trained
        model_id = "pruned"
    report = evaluate_model(
        weights, masks, inputs.eval_pairs, inputs.vocab, config.eval,
        probe_sets=inputs.probe_sets, probe_config=config.probe,
        model_id=f"{model_id}_s{s:.2f}" + ("" if lam is None else f"_l{lam:.2f}"),
        sparsity=s, lam=lam, eps_log=config.score.eps_log,
    )
    return report, time.perf_counter() - start


def run_sweep(
    inputs: SweepInputs,
    sparsities: Sequence[float],
    lambdas: Sequence[float],
    rewind: bool = True,
    jobs: int = 1,
) -> SweepReport:
    """Score once per lambda, then prune/rewind/retrain/evaluate every (s, lambda) cell.

    All cells share the same pretraining checkpoint and seeds. With rewind
    off the pruned stage-one model is evaluated directly.
    """
    keys = sweep_grid(sparsities, lambdas)
    ones = MaskSet.ones(inputs.config.model)

    tasks = [(ones, 0.0, None)]
    for lam in dict.fromkeys(lam for _, lam in keys):
        score_config = replace(inputs.config.score, lam=lam)
        table = estimate_importance(inputs.trained, ones, inputs.scoring_pairs, inputs.vocab, score_config)
        for s, cell_lam in keys:
            if cell_lam == lam:
                tasks.append((select_prune_set(table, SparsitySpec(s)).masks, s, lam))

    logger.info("Sweep: %d cells (%d sparsities x %d lambdas + dense), jobs=%d",
                len(tasks), len({s for s, _ in keys}), len({l for _, l in keys}), jobs)

    if jobs > 1:
        context = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=jobs, mp_context=context) as pool:
            futures = [pool.submit(_run_cell, inputs, masks, s, lam, rewind) for masks, s, lam in tasks]
            results = [f.result() for f in futures]
    else:
        results = []
        for n, (masks, s, lam) in enumerate(tasks, start=1):
            logger.info("Sweep cell %d/%d: s=%.2f lambda=%s", n, len(tasks), s, lam)
            results.append(_run_cell(inputs, masks, s, lam, rewind))

    dense, dense_time = results[0]
    wallclock = {(0.0, None): dense_time}
    rows = []
    for (_, s, lam), (report, elapsed) in zip(tasks[1:], results[1:]):
        rows.append(report)
        wallclock[(s, lam)] = elapsed
    return SweepReport(dense=dense, rows=rows, wallclock=wallclock)


def write_sweep_outputs(report: SweepReport, workdir: str) -> list[str]:
    """sweep.csv, sweep_best.csv, sweep_timing.csv, one curve file per lambda and the scatter file."""
    written = []

    def out(name: str) -> str:
        path = os.path.join(workdir, name)
        written.append(path)
        return path

    write_frame(out("sweep.csv"), report.to_frame())
    write_frame(out("sweep_best.csv"), report.best_rows())
    write_frame(out("sweep_timing.csv"), report.timing_frame())

    for lam in report.lambdas():
        curve = report.curve(lam)
        lines = [f"# spearman vs sparsity, lambda={lam:.2f}", "# s spearman"]
        lines += [f"{s:.4f} {rho:.6f}" for s, rho in curve.itertuples(index=False)]
        write_text(out(f"curve_lambda_{lam:.2f}.dat"), "\n".join(lines) + "\n")

    lines = ["# alignment uniformity s lambda"]
    for r in report.all_rows():
        lam = "dense" if r.lam is None else f"{r.lam:.2f}"
        lines.append(f"{r.alignment:.6f} {r.uniformity:.6f} {r.sparsity:.4f} {lam}")
    write_text(out("align_uniform.dat"), "\n".join(lines) + "\n")
    return written
