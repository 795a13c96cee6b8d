import math
from dataclasses import replace

import numpy as np
import pytest
import torch

from src.data import MASK_ID
from src.errors import CompatibilityError, ConfigError
from src.model import GradientTape, MaskSet, init_model, layer_key
from src.train import (
    RewindCheckpoint,
    _mask_tokens,
    derive_seed,
    mlm_loss,
    pretrain_mlm,
    rewind,
    rewind_and_retrain,
    train_contrastive,
)


def _same(a, b):
    return all(torch.equal(a.tensors[n], b.tensors[n]) for n in a.tensors)


class TestSeeds:
    def test_derive_seed_is_stable(self):
        assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
        assert derive_seed(1, 2, 3) != derive_seed(1, 2, 4)
        assert 0 <= derive_seed(7) < 2 ** 64


class TestMaskTokens:
    def test_positions_skip_cls(self):
        rng = np.random.default_rng(0)
        batch = [[10, 11, 12, 13], [20, 21]]
        corrupted, positions, targets = _mask_tokens(batch, 0.5, rng)
        assert positions
        for (row, pos), target in zip(positions, targets):
            assert corrupted[row][pos - 1] == MASK_ID
            assert batch[row][pos - 1] == target

    def test_at_least_one_mask(self):
        rng = np.random.default_rng(0)
        _, positions, _ = _mask_tokens([[10]], 1e-9, rng)
        assert positions == [(0, 1)]


class TestPretrain:
    def test_initial_loss_near_uniform(self, tiny_config, tiny_train, corpus, vocab):
        tape = GradientTape(init_model(tiny_config), MaskSet.ones(tiny_config))
        batch = [[vocab.id_of(w) for w in s.split()][:11] for s in corpus.sentences[:8]]
        loss = mlm_loss(tape, batch, tiny_train, 0).item()
        assert loss == pytest.approx(math.log(tiny_config.vocab_size), rel=0.1)

    def test_deterministic(self, tiny_config, tiny_train, corpus, vocab):
        a, ca, la = pretrain_mlm(init_model(tiny_config), corpus, vocab, tiny_train)
        b, cb, lb = pretrain_mlm(init_model(tiny_config), corpus, vocab, tiny_train)
        assert _same(a, b)
        assert _same(ca.weights, cb.weights)
        assert la.equals(lb)

    def test_snapshot_at_rewind_step(self, tiny_config, tiny_train, corpus, vocab):
        init = init_model(tiny_config)
        final, checkpoint, log = pretrain_mlm(init, corpus, vocab, tiny_train)
        assert checkpoint.step == 2
        assert checkpoint.config_hash == tiny_config.config_hash()
        assert not _same(checkpoint.weights, init)
        assert not _same(checkpoint.weights, final)
        assert len(log) == tiny_train.pretrain_steps

    def test_rewind_step_zero_is_init(self, tiny_config, tiny_train, corpus, vocab):
        init = init_model(tiny_config)
        _, checkpoint, _ = pretrain_mlm(init, corpus, vocab, replace(tiny_train, rewind_step=0))
        assert _same(checkpoint.weights, init)

    def test_input_weights_untouched(self, tiny_config, tiny_train, corpus, vocab):
        init = init_model(tiny_config)
        pretrain_mlm(init, corpus, vocab, tiny_train)
        assert _same(init, init_model(tiny_config))

    @pytest.mark.slow
    def test_loss_decreases(self, tiny_config, tiny_train, corpus, vocab):
        _, _, log = pretrain_mlm(init_model(tiny_config), corpus, vocab,
                                 replace(tiny_train, pretrain_steps=200, rewind_step=20))
        assert log["loss"].tail(20).mean() < log["loss"].head(20).mean()


class TestContrastive:
    def test_pruned_units_stay_frozen(self, tiny_config, tiny_train, corpus, vocab, make_weights):
        weights = make_weights(tiny_config, scale=0.05)
        masks = MaskSet.ones(tiny_config)
        masks.head[0][1] = 0.0
        masks.neuron[1][9] = 0.0
        trained, _ = train_contrastive(weights, corpus, vocab, replace(tiny_train, steps=5), masks)

        for proj in ("query", "key", "value", "output"):
            for part in ("weight", "bias"):
                name = layer_key(0, f"attn.{proj}.{part}")
                assert torch.equal(trained.tensors[name][1], weights.tensors[name][1])
        assert torch.equal(trained.tensors[layer_key(1, "ffn.in.weight")][:, 9],
                           weights.tensors[layer_key(1, "ffn.in.weight")][:, 9])
        assert torch.equal(trained.tensors[layer_key(1, "ffn.in.bias")][9],
                           weights.tensors[layer_key(1, "ffn.in.bias")][9])
        assert torch.equal(trained.tensors[layer_key(1, "ffn.out.weight")][9],
                           weights.tensors[layer_key(1, "ffn.out.weight")][9])
        assert not torch.equal(trained.tensors[layer_key(0, "attn.query.weight")][0],
                               weights.tensors[layer_key(0, "attn.query.weight")][0])

    def test_deterministic(self, tiny_config, tiny_train, corpus, vocab, make_weights):
        weights = make_weights(tiny_config, scale=0.05)
        config = replace(tiny_train, steps=5)
        a, la = train_contrastive(weights, corpus, vocab, config, MaskSet.ones(tiny_config))
        b, lb = train_contrastive(weights, corpus, vocab, config, MaskSet.ones(tiny_config))
        assert _same(a, b)
        assert la.equals(lb)

    def test_batch_size_one(self, tiny_config, tiny_train, corpus, vocab):
        with pytest.raises(ConfigError):
            train_contrastive(init_model(tiny_config), corpus, vocab,
                              replace(tiny_train, batch_size=1), MaskSet.ones(tiny_config))

    @pytest.mark.slow
    def test_loss_decreases(self, tiny_config, tiny_train, corpus, vocab):
        pretrained, _, _ = pretrain_mlm(init_model(tiny_config), corpus, vocab,
                                        replace(tiny_train, pretrain_steps=100, rewind_step=10))
        _, log = train_contrastive(pretrained, corpus, vocab, replace(tiny_train, steps=100),
                                   MaskSet.ones(tiny_config))
        assert log["loss"].tail(10).mean() < log["loss"].head(10).mean()


class TestRewind:
    def test_hash_mismatch(self, tiny_config):
        checkpoint = RewindCheckpoint(init_model(tiny_config), 0, "0" * 64)
        with pytest.raises(CompatibilityError):
            rewind(checkpoint, tiny_config)

    def test_rewind_returns_a_copy(self, tiny_config):
        checkpoint = RewindCheckpoint(init_model(tiny_config), 0, tiny_config.config_hash())
        weights = rewind(checkpoint, tiny_config)
        weights.tensors["embeddings.token"].zero_()
        assert checkpoint.weights.tensors["embeddings.token"].abs().sum() > 0

    def test_unpruned_retrain_matches_training(self, tiny_config, tiny_train, corpus, vocab, make_weights):
        start = make_weights(tiny_config, scale=0.05)
        checkpoint = RewindCheckpoint(start, 3, tiny_config.config_hash())
        config = replace(tiny_train, steps=4)
        retrained, _ = rewind_and_retrain(MaskSet.ones(tiny_config), checkpoint, corpus, vocab,
                                          tiny_config, config)
        direct, _ = train_contrastive(start, corpus, vocab, config, MaskSet.ones(tiny_config))
        assert _same(retrained, direct)
