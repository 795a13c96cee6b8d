import logging
import os
from dataclasses import replace

import pytest

from src.config import DEFAULT_LAMBDAS, DEFAULT_SPARSITIES, RunConfig
from src.data import ScoredPairSet
from src.evaluate import evaluate_model
from src.model import MaskSet, init_model
from src.sweep import SweepInputs, run_sweep, sweep_grid, write_sweep_outputs
from src.train import RewindCheckpoint, rewind_and_retrain


@pytest.fixture
def inputs(tiny_config, tiny_train, make_weights, corpus, vocab, dev_pairs, eval_pairs):
    config = RunConfig(model=tiny_config, train=replace(tiny_train, steps=3))
    checkpoint = RewindCheckpoint(init_model(tiny_config), 2, tiny_config.config_hash())
    return SweepInputs(
        trained=make_weights(tiny_config, scale=0.05),
        checkpoint=checkpoint,
        corpus=corpus,
        vocab=vocab,
        scoring_pairs=ScoredPairSet(dev_pairs.pairs[:16], "dev"),
        eval_pairs=eval_pairs,
        config=config,
    )


class TestSweepGrid:
    def test_order_and_zero(self):
        assert sweep_grid([0.0, 0.1, 0.2], [0.5, 0.25]) == [
            (0.1, 0.5), (0.2, 0.5), (0.1, 0.25), (0.2, 0.25),
        ]

    def test_duplicates_warn(self, caplog):
        with caplog.at_level(logging.WARNING, logger="src.sweep"):
            keys = sweep_grid([0.1, 0.1], [0.5])
        assert keys == [(0.1, 0.5)]
        assert "Duplicate sweep cell" in caplog.text

    def test_default_grid_size(self):
        assert len(sweep_grid(DEFAULT_SPARSITIES, DEFAULT_LAMBDAS)) == 42


class TestRunSweep:
    def test_rows_and_dense_baseline(self, inputs):
        report = run_sweep(inputs, [0.25, 0.5], [0.5])
        frame = report.to_frame()
        assert list(frame["s"]) == [0.0, 0.25, 0.5]
        assert frame["lambda"].iloc[0] is None or frame["lambda"].isna().iloc[0]

        config = inputs.config
        weights, _ = rewind_and_retrain(MaskSet.ones(config.model), inputs.checkpoint, inputs.corpus,
                                        inputs.vocab, config.model, config.train)
        direct = evaluate_model(weights, MaskSet.ones(config.model), inputs.eval_pairs, inputs.vocab,
                                config.eval, eps_log=config.score.eps_log)
        assert report.dense.spearman == direct.spearman
        assert report.dense.alignment == direct.alignment
        assert report.dense.uniformity == direct.uniformity

    def test_prune_only_dense_row_is_trained_model(self, inputs):
        report = run_sweep(inputs, [0.25], [0.5], rewind=False)
        config = inputs.config
        direct = evaluate_model(inputs.trained, MaskSet.ones(config.model), inputs.eval_pairs,
                                inputs.vocab, config.eval, eps_log=config.score.eps_log)
        assert report.dense.spearman == direct.spearman
        assert report.rows[0].model_id == "pruned_s0.25_l0.50"

    def test_deterministic(self, inputs):
        a = run_sweep(inputs, [0.25], [0.25, 0.75], rewind=False)
        b = run_sweep(inputs, [0.25], [0.25, 0.75], rewind=False)
        assert a.to_frame().equals(b.to_frame())

    def test_outputs(self, inputs, tmp_path):
        report = run_sweep(inputs, [0.25, 0.5], [0.25, 0.75], rewind=False)
        written = write_sweep_outputs(report, str(tmp_path))
        names = sorted(os.path.basename(p) for p in written)
        assert names == sorted([
            "sweep.csv", "sweep_best.csv", "sweep_timing.csv",
            "curve_lambda_0.25.dat", "curve_lambda_0.75.dat", "align_uniform.dat",
        ])
        curve = (tmp_path / "curve_lambda_0.25.dat").read_text().splitlines()
        assert curve[0].startswith("#")
        assert [line.split()[0] for line in curve[2:]] == ["0.0000", "0.2500", "0.5000"]
        assert (tmp_path / "align_uniform.dat").read_text().splitlines()[1].endswith("dense")

        best = report.best_rows()
        assert list(best["lambda"]) == [0.25, 0.75]
        assert set(best["best_s"]) <= {0.25, 0.5}

    @pytest.mark.slow
    def test_parallel_matches_serial(self, inputs):
        serial = run_sweep(inputs, [0.25, 0.5], [0.5], jobs=1)
        parallel = run_sweep(inputs, [0.25, 0.5], [0.5], jobs=2)
        assert serial.to_frame().equals(parallel.to_frame())
