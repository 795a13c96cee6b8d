"""Surrogate pretraining, contrastive training and rewinding."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterator

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F

from src.config import ModelConfig, TrainConfig
from src.data import MASK_ID, SentenceCorpus, Vocab, make_batches, tokenize
from src.errors import CompatibilityError, DataError, NumericError
from src.losses import contrastive_loss
from src.model import EncoderWeights, GradientSet, GradientTape, MaskSet

logger = logging.getLogger(__name__)

# Seed stream tags keep the random streams of the stages independent.
PRETRAIN_STREAM = 1
CONTRASTIVE_STREAM = 2


@dataclass
class RewindCheckpoint:
    """Weights at pretraining step k, the target that pruned models rewind to."""
    weights: EncoderWeights
    step: int
    config_hash: str


def derive_seed(*parts: int) -> int:
    """64-bit seed from a tuple of non-negative integers."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1, dtype=np.uint64)[0])


def _batch_stream(corpus: SentenceCorpus, batch_size: int, seed: int, stream: int) -> Iterator[list[str]]:
    epoch = 0
    while True:
        batches = make_batches(corpus, batch_size, derive_seed(seed, stream, epoch))
        if not batches:
            raise DataError(f"corpus {corpus.source} is too small for batches of {batch_size}")
        yield from batches
        epoch += 1


def _make_optimizer(weights: EncoderWeights, lr: float, config: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(
        list(weights.tensors.values()),
        lr=lr,
        betas=(config.beta1, config.beta2),
        eps=config.eps,
        weight_decay=config.weight_decay,
    )


def _apply(tape: GradientTape, grads: GradientSet, optimizer: torch.optim.Optimizer) -> None:
    for name, param in tape.weights.tensors.items():
        param.grad = grads.weights[name]
    optimizer.step()
    optimizer.zero_grad(set_to_none=True)


def _mask_tokens(
    token_batch: list[list[int]], mask_prob: float, rng: np.random.Generator
) -> tuple[list[list[int]], list[tuple[int, int]], list[int]]:
    """Replace a mask_prob fraction of tokens with MASK.

    Returns the corrupted batch, (row, position) pairs of masked tokens with
    position counted after the CLS token, and the original ids there.
    """
    corrupted, positions, targets = [], [], []
    for row, seq in enumerate(token_batch):
        chosen = rng.random(len(seq)) < mask_prob
        new_seq = list(seq)
        for pos in np.flatnonzero(chosen):
            positions.append((row, int(pos) + 1))
            targets.append(seq[pos])
            new_seq[pos] = MASK_ID
        corrupted.append(new_seq)
    if not positions:
        row = int(rng.integers(len(token_batch)))
        pos = int(rng.integers(len(token_batch[row])))
        positions.append((row, pos + 1))
        targets.append(token_batch[row][pos])
        corrupted[row][pos] = MASK_ID
    return corrupted, positions, targets


def mlm_loss(tape: GradientTape, token_batch: list[list[int]], config: TrainConfig,
             step: int) -> torch.Tensor:
    """Masked-token cross entropy with the output projection tied to the token embedding."""
    rng = np.random.default_rng(derive_seed(config.seed, PRETRAIN_STREAM, step))
    corrupted, positions, targets = _mask_tokens(token_batch, config.mask_prob, rng)
    hidden, _ = tape.encode(
        corrupted, dropout_on=True, dropout_seed=derive_seed(config.seed, PRETRAIN_STREAM, step, 0)
    )
    rows = torch.tensor([r for r, _ in positions])
    cols = torch.tensor([c for _, c in positions])
    logits = hidden[rows, cols] @ tape.weights.tensors["embeddings.token"].T
    return F.cross_entropy(logits, torch.tensor(targets))


def pretrain_mlm(
    weights: EncoderWeights,
    corpus: SentenceCorpus,
    vocab: Vocab,
    config: TrainConfig,
) -> tuple[EncoderWeights, RewindCheckpoint, pd.DataFrame]:
    """Masked-token pretraining; snapshots the weights after rewind_step updates."""
    config.validate()
    model_config = weights.config
    limit = model_config.max_seq_len - 1
    rewind_step = config.resolved_rewind_step

    tape = GradientTape(weights, MaskSet.ones(model_config))
    optimizer = _make_optimizer(tape.weights, config.pretrain_learning_rate, config)
    stream = _batch_stream(corpus, config.batch_size, config.seed, PRETRAIN_STREAM)

    snapshot = tape.detached_weights() if rewind_step == 0 else None
    log = []
    for step in range(config.pretrain_steps):
        batch = [tokenize(s, vocab)[:limit] for s in next(stream)]
        loss = mlm_loss(tape, batch, config, step)
        _apply(tape, tape.backward(loss), optimizer)
        log.append({"step": step, "loss": loss.item()})

        if step + 1 == rewind_step:
            snapshot = tape.detached_weights()
        if step % config.log_every == 0 or step + 1 == config.pretrain_steps:
            logger.info("pretrain step %d/%d  loss %.4f", step + 1, config.pretrain_steps, loss.item())

    final = tape.detached_weights()
    final.check_finite()
    checkpoint = RewindCheckpoint(weights=snapshot, step=rewind_step,
                                  config_hash=model_config.config_hash())
    return final, checkpoint, pd.DataFrame(log, columns=["step", "loss"])


def train_contrastive(
    weights: EncoderWeights,
    corpus: SentenceCorpus,
    vocab: Vocab,
    config: TrainConfig,
    masks: MaskSet,
) -> tuple[EncoderWeights, pd.DataFrame]:
    """Dropout-augmented contrastive training under fixed masks.

    Masks are never updated; a unit with mask 0 receives exactly zero
    gradient, so with weight decay off its parameters stay bit-identical.
    """
    config.validate()
    limit = weights.config.max_seq_len - 1
    tokens = {s: tokenize(s, vocab)[:limit] for s in corpus.sentences}

    tape = GradientTape(weights, masks)
    optimizer = _make_optimizer(tape.weights, config.learning_rate, config)
    stream = _batch_stream(corpus, config.batch_size, config.seed, CONTRASTIVE_STREAM)

    log = []
    for step in range(config.steps):
        batch = [tokens[s] for s in next(stream)]
        H = tape.forward_embed(batch, True, derive_seed(config.seed, CONTRASTIVE_STREAM, step, 0))
        H_plus = tape.forward_embed(batch, True, derive_seed(config.seed, CONTRASTIVE_STREAM, step, 1))
        loss = contrastive_loss(H, H_plus, config.temperature)
        _apply(tape, tape.backward(loss), optimizer)
        log.append({"step": step, "loss": loss.item()})

        if step % config.log_every == 0 or step + 1 == config.steps:
            logger.info("contrastive step %d/%d  loss %.4f", step + 1, config.steps, loss.item())

    final = tape.detached_weights()
    try:
        final.check_finite()
    except NumericError:
        logger.error("Contrastive training diverged; lower train.learning_rate")
        raise
    return final, pd.DataFrame(log, columns=["step", "loss"])


def rewind(checkpoint: RewindCheckpoint, model_config: ModelConfig) -> EncoderWeights:
    """Reset to the pretraining snapshot after checking it belongs to this model."""
    expected = model_config.config_hash()
    if checkpoint.config_hash != expected:
        raise CompatibilityError(
            f"rewind checkpoint was produced by model config {checkpoint.config_hash[:12]}, "
            f"current config is {expected[:12]}"
        )
    return checkpoint.weights.clone()


def rewind_and_retrain(
    pruned_masks: MaskSet,
    checkpoint: RewindCheckpoint,
    corpus: SentenceCorpus,
    vocab: Vocab,
    model_config: ModelConfig,
    config: TrainConfig,
) -> tuple[EncoderWeights, pd.DataFrame]:
    """Rewind to pretraining step k and retrain contrastively with the pruned masks.

    The contrastive hyperparameters of the first training stage are reused.
    """
    weights = rewind(checkpoint, model_config)
    pruned_masks.check_compatible(model_config)
    logger.info("Rewound to pretraining step %d; retraining with pruned masks", checkpoint.step)
    return train_contrastive(weights, corpus, vocab, config, pruned_masks)
