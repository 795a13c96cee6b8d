"""Command-line entry point: one command per pipeline stage.

    python -m src.main <command> --config config.yml [--override section.key=value ...]

Every command reads its upstream artifacts from paths.workdir and writes its
own there. Errors exit with the code of their SpcseError class.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, replace
from typing import Callable, Optional

import pandas as pd

from src.checkpoint import (
    artifact_path,
    checkpoint_load,
    checkpoint_save,
    write_frame,
    write_json,
)
from src.config import RunConfig, load_config
from src.data import (
    LabeledSet,
    SentenceCorpus,
    Vocab,
    build_vocab,
    load_corpus,
    load_labeled,
    load_scored_pairs,
    split_labeled,
)
from src.errors import CompatibilityError, ParseError, SpcseError, UsageError
from src.evaluate import EvalReport, evaluate_model
from src.model import MaskSet, init_model
from src.pruner import SparsitySpec, compact, select_prune_set
from src.render import (
    render_eval_report,
    render_prune_summary,
    render_score_summary,
    render_sweep_report,
    render_training_log,
)
from src.scoring import ScoreTable, estimate_importance
from src.sweep import SweepInputs, run_sweep, write_sweep_outputs
from src.synth import generate, write_synthetic
from src.train import RewindCheckpoint, pretrain_mlm, rewind_and_retrain, train_contrastive

logger = logging.getLogger("spcse")

LOG_LEVELS = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "warning": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}

# artifact name -> stage that writes it
PRETRAINED = ("pretrained.spcs", "pretrain")
REWIND = ("rewind.spcs", "pretrain")
TRAINED = ("trained.spcs", "train")
SCORES = ("scores.csv", "score")
SCORES_META = ("scores.json", "score")
PRUNED = ("pruned.spcs", "prune")
REWOUND = ("rewound.spcs", "rewind")

EVAL_MODELS = {
    "pretrained": PRETRAINED,
    "trained": TRAINED,
    "pruned": PRUNED,
    "rewound": REWOUND,
}


def setup_logging() -> None:
    """Level from SPCSE_LOG (error|warn|info|debug), default info."""
    raw = os.environ.get("SPCSE_LOG", "info").strip().lower()
    level = LOG_LEVELS.get(raw)
    logging.basicConfig(
        level=level or logging.INFO,
        format="%(asctime)s %(levelname)-7s %(name)s: %(message)s",
        datefmt="%H:%M:%S",
    )
    if level is None:
        logger.warning("Unknown SPCSE_LOG value %r; using info", raw)


@dataclass
class Workspace:
    """Config plus lazily loaded shared inputs for one run."""
    config: RunConfig
    _corpus: Optional[SentenceCorpus] = None
    _vocab: Optional[Vocab] = None

    @property
    def workdir(self) -> str:
        return self.config.paths.workdir

    def path(self, artifact: tuple[str, str]) -> str:
        return artifact_path(self.workdir, *artifact)

    def out(self, name: str) -> str:
        os.makedirs(self.workdir, exist_ok=True)
        return os.path.join(self.workdir, name)

    @property
    def corpus(self) -> SentenceCorpus:
        if self._corpus is None:
            self.config.require_inputs("corpus")
            self._corpus = load_corpus(self.config.data.corpus)
        return self._corpus

    @property
    def vocab(self) -> Vocab:
        # rebuilt from the corpus each time; the ranking is deterministic
        if self._vocab is None:
            self._vocab = build_vocab(self.corpus, self.config.model.vocab_size)
        return self._vocab

    def probe_sets(self) -> Optional[tuple[LabeledSet, LabeledSet]]:
        path = self.config.data.labeled
        if path is None:
            return None
        if not os.path.exists(path):
            logger.warning("Labeled set %s not found; skipping the linear probe", path)
            return None
        return split_labeled(load_labeled(path), self.config.probe.test_fraction, self.config.probe.seed)

    def load(self, artifact: tuple[str, str]):
        """Load a stage checkpoint and refuse it if it was made for another model."""
        loaded = checkpoint_load(self.path(artifact))
        if loaded.config.model != self.config.model:
            raise CompatibilityError(
                f"{artifact[0]} was produced with model config {loaded.config.model.config_hash()[:12]}, "
                f"current config is {self.config.model.config_hash()[:12]}"
            )
        return loaded

    def rewind_checkpoint(self) -> RewindCheckpoint:
        loaded = self.load(REWIND)
        return RewindCheckpoint(weights=loaded.weights, step=loaded.step,
                                config_hash=loaded.config.model.config_hash())


# --- commands ---

def cmd_gen_corpus(ws: Workspace, args: argparse.Namespace) -> None:
    gen = ws.config.gen
    if args.out is not None:
        gen = replace(gen, out=args.out)
    if args.sentences is not None:
        gen = replace(gen, sentences=args.sentences)
    if args.seed is not None:
        gen = replace(gen, seed=args.seed)
    paths = write_synthetic(generate(gen), gen.out)
    for name, path in paths.items():
        print(f"  {name:14} {path}")


def cmd_pretrain(ws: Workspace, args: argparse.Namespace) -> None:
    config = ws.config
    weights = init_model(config.model)
    final, checkpoint, log = pretrain_mlm(weights, ws.corpus, ws.vocab, config.train)
    ones = MaskSet.ones(config.model)
    checkpoint_save(ws.out(PRETRAINED[0]), final, ones, config, config.train.pretrain_steps)
    checkpoint_save(ws.out(REWIND[0]), checkpoint.weights, ones, config, checkpoint.step)
    write_frame(ws.out("pretrain_log.csv"), log)
    print(render_training_log("pretrain", log))


def cmd_train(ws: Workspace, args: argparse.Namespace) -> None:
    config = ws.config
    pretrained = ws.load(PRETRAINED)
    ones = MaskSet.ones(config.model)
    weights, log = train_contrastive(pretrained.weights, ws.corpus, ws.vocab, config.train, ones)
    checkpoint_save(ws.out(TRAINED[0]), weights, ones, config, config.train.steps)
    write_frame(ws.out("train_log.csv"), log)
    print(render_training_log("contrastive", log))


def cmd_score(ws: Workspace, args: argparse.Namespace) -> None:
    config = ws.config
    config.require_inputs("scoring_pairs")
    trained = ws.load(TRAINED)
    pairs = load_scored_pairs(config.data.scoring_pairs)
    table = estimate_importance(trained.weights, MaskSet.ones(config.model), pairs, ws.vocab, config.score)
    frame = table.to_frame()
    write_frame(ws.out(SCORES[0]), frame)
    write_json(ws.out(SCORES_META[0]), table.metadata())
    print(render_score_summary(frame, table.lam))


def _evaluate(ws: Workspace, weights, masks, model_id: str, sparsity: float = 0.0,
              lam: Optional[float] = None) -> EvalReport:
    config = ws.config
    config.require_inputs("eval_pairs")
    return evaluate_model(
        weights, masks, load_scored_pairs(config.data.eval_pairs), ws.vocab, config.eval,
        probe_sets=ws.probe_sets(), probe_config=config.probe,
        model_id=model_id, sparsity=sparsity, lam=lam, eps_log=config.score.eps_log,
    )


def load_score_table(ws: Workspace) -> ScoreTable:
    """Read scores.csv and scores.json back; malformed files are data errors."""
    meta_path, scores_path = ws.path(SCORES_META), ws.path(SCORES)
    try:
        with open(meta_path, "r", encoding="utf-8") as f:
            meta = json.load(f)
        lam, batch_count, dataset = float(meta["lambda"]), int(meta["batch_count"]), str(meta["dataset"])
    except (json.JSONDecodeError, UnicodeDecodeError, KeyError, TypeError, ValueError) as e:
        raise ParseError(meta_path, 0, f"malformed score metadata ({type(e).__name__}: {e})") from None
    try:
        frame = pd.read_csv(scores_path, float_precision="round_trip")
        return ScoreTable.from_frame(frame, lam=lam, batch_count=batch_count, dataset=dataset)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, KeyError, TypeError, ValueError) as e:
        raise ParseError(scores_path, 0, f"malformed score table ({type(e).__name__}: {e})") from None


def cmd_prune(ws: Workspace, args: argparse.Namespace) -> None:
    config = ws.config
    trained = ws.load(TRAINED)
    table = load_score_table(ws)
    decision = select_prune_set(table, SparsitySpec(config.prune.sparsity))
    compacted, _ = compact(trained.weights, decision)
    summary = decision.summary(trained.weights.num_parameters(), compacted.num_parameters())

    checkpoint_save(ws.out(PRUNED[0]), trained.weights, decision.masks, config, trained.step)
    write_frame(ws.out("prune.csv"), decision.to_frame())
    write_json(ws.out("prune.json"), summary)
    print(render_prune_summary(summary))

    if args.eval:
        report = _evaluate(ws, trained.weights, decision.masks, "pruned",
                           sparsity=decision.sparsity, lam=table.lam)
        print(render_eval_report(report))


def cmd_rewind(ws: Workspace, args: argparse.Namespace) -> None:
    config = ws.config
    pruned = ws.load(PRUNED)
    weights, log = rewind_and_retrain(pruned.masks, ws.rewind_checkpoint(), ws.corpus, ws.vocab,
                                      config.model, config.train)
    checkpoint_save(ws.out(REWOUND[0]), weights, pruned.masks, config, config.train.steps)
    write_frame(ws.out("rewind_log.csv"), log)
    print(render_training_log("retrain", log))


def cmd_eval(ws: Workspace, args: argparse.Namespace) -> None:
    artifact = EVAL_MODELS[args.model]
    loaded = ws.load(artifact)
    sparsity = 0.0
    if args.model in ("pruned", "rewound"):
        sparsity = ws.config.prune.sparsity
    report = _evaluate(ws, loaded.weights, loaded.masks, args.model, sparsity=sparsity)
    write_json(ws.out("eval.json"), report.to_row())
    print(render_eval_report(report))


def cmd_sweep(ws: Workspace, args: argparse.Namespace) -> None:
    config = ws.config
    config.require_inputs("scoring_pairs", "eval_pairs")
    trained = ws.load(TRAINED)
    inputs = SweepInputs(
        trained=trained.weights,
        checkpoint=ws.rewind_checkpoint(),
        corpus=ws.corpus,
        vocab=ws.vocab,
        scoring_pairs=load_scored_pairs(config.data.scoring_pairs),
        eval_pairs=load_scored_pairs(config.data.eval_pairs),
        config=config,
        probe_sets=ws.probe_sets(),
    )
    jobs = args.jobs if args.jobs is not None else config.sweep.jobs
    report = run_sweep(inputs, config.sweep.sparsities, config.sweep.lambdas,
                       rewind=config.sweep.rewind, jobs=jobs)
    write_sweep_outputs(report, ws.workdir)
    print(render_sweep_report(report))


def cmd_pipeline(ws: Workspace, args: argparse.Namespace) -> None:
    """pretrain -> train -> score -> prune -> rewind -> eval in one process."""
    for name, command in (
        ("pretrain", cmd_pretrain),
        ("train", cmd_train),
        ("score", cmd_score),
        ("prune", cmd_prune),
        ("rewind", cmd_rewind),
    ):
        logger.info("Pipeline stage: %s", name)
        command(ws, args)
    cmd_eval(ws, argparse.Namespace(**{**vars(args), "model": "rewound"}))


COMMANDS: dict[str, Callable[[Workspace, argparse.Namespace], None]] = {
    "gen-corpus": cmd_gen_corpus,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "score": cmd_score,
    "prune": cmd_prune,
    "rewind": cmd_rewind,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML/JSON run configuration (default: ./config.yml if present)")
    common.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config key; repeatable")
    common.add_argument("--jobs", type=int, help="parallel sweep cells")
    common.add_argument("--seeds", help="comma-separated seeds; runs the command once per seed")
    common.add_argument("--dry-run", action="store_true", help="validate the configuration and stop")

    parser = argparse.ArgumentParser(prog="spcse", description="Sparse contrastive sentence encoder lab")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-corpus", parents=[common], help="write a synthetic corpus and pair sets")
    gen.add_argument("--out")
    gen.add_argument("--sentences", type=int)
    gen.add_argument("--seed", type=int)

    sub.add_parser("pretrain", parents=[common], help="masked-token pretraining; saves the rewind target")
    sub.add_parser("train", parents=[common], help="contrastive training of the pretrained model")
    sub.add_parser("score", parents=[common], help="head/neuron importance scores")
    prune = sub.add_parser("prune", parents=[common], help="mask the lowest-scoring units")
    prune.add_argument("--eval", action="store_true", help="also evaluate the pruned model without retraining")
    sub.add_parser("rewind", parents=[common], help="rewind to the pretraining snapshot and retrain")
    ev = sub.add_parser("eval", parents=[common], help="STS and probe evaluation of a stage checkpoint")
    ev.add_argument("--model", choices=sorted(EVAL_MODELS), default="rewound")
    sub.add_parser("sweep", parents=[common], help="score/prune/rewind/evaluate over the sparsity x lambda grid")
    pipeline = sub.add_parser("pipeline", parents=[common], help="run every stage from pretrain to eval")
    pipeline.set_defaults(eval=False)
    return parser


def parse_seeds(raw: Optional[str]) -> list[Optional[int]]:
    if not raw:
        return [None]
    try:
        seeds = [int(part) for part in raw.split(",") if part.strip()]
    except ValueError:
        raise UsageError(f"--seeds must be comma-separated integers, got {raw!r}") from None
    if not seeds or any(s < 0 for s in seeds):
        raise UsageError(f"--seeds must list non-negative integers, got {raw!r}")
    return seeds


def run(argv: Optional[list[str]] = None) -> int:
    """Parse, configure and dispatch; returns the process exit code."""
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, args.override)
        if args.jobs is not None and args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        seeds = parse_seeds(args.seeds)

        for seed in seeds:
            run_config = config if seed is None else config.with_seed(seed).validate()
            if args.dry_run:
                print(f"{args.command}: configuration OK (workdir {run_config.paths.workdir})")
                print(run_config.to_json())
                continue
            if seed is not None:
                logger.info("Seed %d -> %s", seed, run_config.paths.workdir)
            COMMANDS[args.command](Workspace(run_config), args)
    except SpcseError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return e.exit_code
    return 0


def main():
    setup_logging()
    sys.exit(run())


if __name__ == "__main__":
    main()
