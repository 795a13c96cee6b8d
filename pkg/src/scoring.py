"""Alignment/uniformity importance scores for attention heads and FFN neurons."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F

from src.config import ScoreConfig
from src.data import ScoredPairSet, Vocab, pair_batches, tokenize
from src.errors import DataError, ParseError, StateError
from src.losses import alignment_loss, joint_score_loss, uniformity_loss
from src.model import EncoderWeights, GradientTape, MaskSet

logger = logging.getLogger(__name__)

UNIT_TYPES = ("head", "neuron")


@dataclass
class ScoreTable:
    """Mean absolute mask gradient of the score loss, per maskable unit."""
    head_scores: np.ndarray     # (layers, heads)
    neuron_scores: np.ndarray   # (layers, ffn_dim)
    lam: float
    batch_count: int
    dataset: str

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for unit_type, scores in (("head", self.head_scores), ("neuron", self.neuron_scores)):
            for layer in range(scores.shape[0]):
                for index in range(scores.shape[1]):
                    rows.append((unit_type, layer, index, float(scores[layer, index])))
        return pd.DataFrame(rows, columns=["unit_type", "layer", "index", "score"])

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, lam: float, batch_count: int, dataset: str) -> "ScoreTable":
        unknown = set(frame["unit_type"]) - set(UNIT_TYPES)
        if unknown:
            raise ParseError(dataset, 0, f"unknown unit types {sorted(unknown)}")
        arrays = {}
        for unit_type in UNIT_TYPES:
            part = frame[frame["unit_type"] == unit_type]
            grid = part.pivot(index="layer", columns="index", values="score").sort_index()
            if grid.isna().any().any():
                raise ParseError(dataset, 0, f"{unit_type} scores do not form a full grid")
            arrays[unit_type] = grid.sort_index(axis=1).to_numpy(dtype=np.float64)
        return cls(arrays["head"], arrays["neuron"], lam, batch_count, dataset)

    def metadata(self) -> dict:
        return {"lambda": self.lam, "batch_count": self.batch_count, "dataset": self.dataset}


def score_loss(H: torch.Tensor, H_plus: torch.Tensor, config: ScoreConfig) -> torch.Tensor:
    """lam * alignment(H, H+) + (1 - lam) * uniformity(H and H+ together)."""
    if config.normalize_embeddings:
        H, H_plus = F.normalize(H, dim=-1), F.normalize(H_plus, dim=-1)
    align = alignment_loss(H, H_plus, config.eps_log)
    uniform = uniformity_loss(torch.cat([H, H_plus], dim=0))
    return joint_score_loss(align, uniform, config.lam)


def estimate_importance(
    weights: EncoderWeights,
    masks: MaskSet,
    pairs: ScoredPairSet,
    vocab: Vocab,
    config: ScoreConfig,
) -> ScoreTable:
    """E_D |dL_score / d mask| over consecutive batches of the scoring pairs.

    Each pair (a, b) is a positive pair for alignment; every embedding of
    the batch enters uniformity. Dropout is off. Absolute values are taken
    per batch before averaging.
    """
    config.validate()
    if not masks.is_all_ones():
        raise StateError("importance scores are defined at all-ones masks")
    if len(pairs) == 0:
        raise DataError("scoring set is empty")

    limit = weights.config.max_seq_len - 1
    tape = GradientTape(weights, masks)
    head_sum = np.zeros((masks.num_layers, len(masks.head[0])), dtype=np.float64)
    neuron_sum = np.zeros((masks.num_layers, len(masks.neuron[0])), dtype=np.float64)

    batches = pair_batches(pairs, config.batch_size)
    for n, batch in enumerate(batches):
        tokens_a = [tokenize(p.sentence_a, vocab)[:limit] for p in batch]
        tokens_b = [tokenize(p.sentence_b, vocab)[:limit] for p in batch]
        H = tape.forward_embed(tokens_a)
        H_plus = tape.forward_embed(tokens_b)
        loss = score_loss(H, H_plus, config)
        grads = tape.backward(loss)

        head_sum += torch.stack(grads.head_masks).abs().double().numpy()
        neuron_sum += torch.stack(grads.neuron_masks).abs().double().numpy()
        logger.debug("score batch %d/%d  L_score %.5f", n + 1, len(batches), loss.item())

    table = ScoreTable(
        head_scores=head_sum / len(batches),
        neuron_scores=neuron_sum / len(batches),
        lam=config.lam,
        batch_count=len(batches),
        dataset=pairs.source,
    )
    logger.info("Scored %d heads and %d neurons over %d batches (lambda=%.2f)",
                table.head_scores.size, table.neuron_scores.size, len(batches), config.lam)
    return table
