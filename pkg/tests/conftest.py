"""Shared tiny-model fixtures."""

from dataclasses import replace

import numpy as np
import pytest
import torch

from src.config import GenConfig, ModelConfig, ScoreConfig, TrainConfig
from src.data import ScoredPair, ScoredPairSet, SentenceCorpus, build_vocab
from src.model import EncoderWeights, init_model
from src.synth import generate

TINY_MODEL = ModelConfig(
    vocab_size=200,
    max_seq_len=12,
    hidden_dim=32,
    num_layers=2,
    num_heads=4,
    head_dim=8,
    ffn_dim=64,
    dropout_rate=0.1,
    seed=0,
)

TINY_TRAIN = TrainConfig(
    learning_rate=1e-3,
    pretrain_learning_rate=1e-3,
    batch_size=8,
    steps=20,
    pretrain_steps=20,
    rewind_step=2,
    seed=11,
    log_every=1000,
)


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run end-to-end trend checks")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long end-to-end run, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def tiny_config() -> ModelConfig:
    return TINY_MODEL


@pytest.fixture
def tiny_config64() -> ModelConfig:
    return replace(TINY_MODEL, dtype="float64")


@pytest.fixture
def tiny_train() -> TrainConfig:
    return TINY_TRAIN


@pytest.fixture
def make_weights():
    """Init weights plus Gaussian noise so every unit carries signal."""
    def _make(config: ModelConfig, seed: int = 0, scale: float = 0.3) -> EncoderWeights:
        weights = init_model(config)
        generator = torch.Generator().manual_seed(seed)
        for t in weights.tensors.values():
            t.add_(scale * torch.randn(t.shape, generator=generator, dtype=t.dtype))
        return weights
    return _make


@pytest.fixture
def token_batch():
    rng = np.random.default_rng(5)
    return [rng.integers(4, TINY_MODEL.vocab_size, size=n).tolist() for n in (3, 7, 11, 5, 9, 4)]


@pytest.fixture(scope="session")
def synthetic():
    return generate(GenConfig(sentences=200, seed=3))


@pytest.fixture(scope="session")
def corpus(synthetic) -> SentenceCorpus:
    return SentenceCorpus(tuple(synthetic.corpus), "synthetic")


@pytest.fixture(scope="session")
def vocab(corpus):
    return build_vocab(corpus, TINY_MODEL.vocab_size)


@pytest.fixture(scope="session")
def dev_pairs(synthetic) -> ScoredPairSet:
    return ScoredPairSet(tuple(ScoredPair(a, b, g) for a, b, g in synthetic.dev_pairs), "dev")


@pytest.fixture(scope="session")
def eval_pairs(synthetic) -> ScoredPairSet:
    return ScoredPairSet(tuple(ScoredPair(a, b, g) for a, b, g in synthetic.test_pairs), "test")


@pytest.fixture
def score_config() -> ScoreConfig:
    return ScoreConfig(lam=0.5, batch_size=8)
