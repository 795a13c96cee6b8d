"""Sparsity-constrained selection of heads and neurons, masking and compaction."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
import pandas as pd
import torch

from src.config import ModelConfig
from src.errors import CompatibilityError, ConfigError, NumericError, ShapeError, StateError
from src.model import EncoderWeights, MaskSet, TORCH_DTYPES, forward_embed, layer_key
from src.scoring import ScoreTable

logger = logging.getLogger(__name__)

# s * pool_size can land a hair below an integer (0.29 * 100 = 28.999...).
_FLOOR_SLACK = 1e-9

_HEAD_TENSORS = (
    "attn.query.weight", "attn.query.bias",
    "attn.key.weight", "attn.key.bias",
    "attn.value.weight", "attn.value.bias",
    "attn.output.weight", "attn.output.bias",
)


@dataclass(frozen=True)
class SparsitySpec:
    """Fraction s of each pool (heads, neurons) to prune."""
    s: float

    def validate(self) -> None:
        if not 0.0 <= self.s < 1.0:
            raise ConfigError(f"sparsity must be in [0, 1), got {self.s}")

    def prune_count(self, pool_size: int) -> int:
        return int(math.floor(self.s * pool_size + _FLOOR_SLACK))


@dataclass
class PruneDecision:
    masks: MaskSet
    pruned_heads: list[tuple[int, int]]
    pruned_neurons: list[tuple[int, int]]
    head_threshold: Optional[float]
    neuron_threshold: Optional[float]
    sparsity: float
    scores: ScoreTable

    def to_frame(self) -> pd.DataFrame:
        frame = self.scores.to_frame()
        pruned = {("head", l, i) for l, i in self.pruned_heads}
        pruned |= {("neuron", l, i) for l, i in self.pruned_neurons}
        frame["pruned"] = [
            (u, l, i) in pruned
            for u, l, i in zip(frame["unit_type"], frame["layer"], frame["index"])
        ]
        return frame

    def summary(self, dense_params: Optional[int] = None, compact_params: Optional[int] = None) -> dict:
        heads_total = self.scores.head_scores.size
        neurons_total = self.scores.neuron_scores.size
        out = {
            "sparsity": self.sparsity,
            "lambda": self.scores.lam,
            "heads_pruned": len(self.pruned_heads),
            "heads_total": heads_total,
            "neurons_pruned": len(self.pruned_neurons),
            "neurons_total": neurons_total,
            "head_threshold": self.head_threshold,
            "neuron_threshold": self.neuron_threshold,
        }
        if dense_params is not None and compact_params is not None:
            out["parameters_dense"] = dense_params
            out["parameters_retained"] = compact_params
            out["parameter_sparsity"] = 1.0 - compact_params / dense_params
        return out


def _select_pool(scores: np.ndarray, count: int) -> tuple[list[tuple[int, int]], Optional[float]]:
    layers, index = np.indices(scores.shape)
    flat_scores, flat_layers, flat_index = scores.ravel(), layers.ravel(), index.ravel()
    # lexsort sorts by the last key first: score, then layer, then index
    order = np.lexsort((flat_index, flat_layers, flat_scores))[:count]
    chosen = sorted((int(flat_layers[k]), int(flat_index[k])) for k in order)
    threshold = float(flat_scores[order].max()) if count else None
    return chosen, threshold


def select_prune_set(scores: ScoreTable, spec: SparsitySpec) -> PruneDecision:
    """Prune the floor(s * pool) lowest-scoring units of each pool.

    Ties are broken by (layer, index) so lower positions go first.
    """
    spec.validate()
    for name, arr in (("head", scores.head_scores), ("neuron", scores.neuron_scores)):
        if not np.isfinite(arr).all() or (arr < 0).any():
            raise NumericError(f"{name} scores must be finite and nonnegative")

    heads, head_threshold = _select_pool(scores.head_scores, spec.prune_count(scores.head_scores.size))
    neurons, neuron_threshold = _select_pool(
        scores.neuron_scores, spec.prune_count(scores.neuron_scores.size)
    )

    head_masks = np.ones(scores.head_scores.shape)
    neuron_masks = np.ones(scores.neuron_scores.shape)
    for layer, index in heads:
        head_masks[layer, index] = 0.0
    for layer, index in neurons:
        neuron_masks[layer, index] = 0.0

    masks = MaskSet(
        head=[torch.tensor(row, dtype=torch.float32) for row in head_masks],
        neuron=[torch.tensor(row, dtype=torch.float32) for row in neuron_masks],
    )
    logger.info("Sparsity %.2f: pruning %d/%d heads and %d/%d neurons", spec.s,
                len(heads), head_masks.size, len(neurons), neuron_masks.size)
    return PruneDecision(masks, heads, neurons, head_threshold, neuron_threshold, spec.s, scores)


@dataclass
class MaskedModel:
    """Weights paired with the masks every forward pass uses."""
    weights: EncoderWeights
    masks: MaskSet

    def embed(self, token_batch: Sequence[Sequence[int]]) -> torch.Tensor:
        with torch.no_grad():
            return forward_embed(token_batch, self.weights, self.masks)


def _cast_masks(masks: MaskSet, config: ModelConfig) -> MaskSet:
    dtype = TORCH_DTYPES[config.dtype]
    return MaskSet(head=[m.to(dtype) for m in masks.head], neuron=[m.to(dtype) for m in masks.neuron])


def apply_masks(weights: EncoderWeights, decision: PruneDecision) -> MaskedModel:
    if not decision.masks.is_binary():
        raise StateError("prune masks must contain only 0 and 1")
    masks = _cast_masks(decision.masks, weights.config)
    try:
        masks.check_compatible(weights.config)
    except ShapeError as e:
        raise CompatibilityError(f"prune decision does not fit the model: {e}") from None
    return MaskedModel(weights=weights, masks=masks)


def compact(weights: EncoderWeights, decision: PruneDecision) -> tuple[EncoderWeights, ModelConfig]:
    """Physically drop pruned heads' Q/K/V/O blocks and pruned neurons' W1 columns / W2 rows."""
    config = weights.config
    apply_masks(weights, decision)

    tensors = dict(weights.tensors)
    layer_heads, layer_ffn = [], []
    for i in range(config.num_layers):
        keep_heads = torch.nonzero(decision.masks.head[i] != 0).flatten()
        keep_neurons = torch.nonzero(decision.masks.neuron[i] != 0).flatten()
        for name in _HEAD_TENSORS:
            key = layer_key(i, name)
            tensors[key] = tensors[key].index_select(0, keep_heads)
        tensors[layer_key(i, "ffn.in.weight")] = tensors[layer_key(i, "ffn.in.weight")].index_select(1, keep_neurons)
        tensors[layer_key(i, "ffn.in.bias")] = tensors[layer_key(i, "ffn.in.bias")].index_select(0, keep_neurons)
        tensors[layer_key(i, "ffn.out.weight")] = tensors[layer_key(i, "ffn.out.weight")].index_select(0, keep_neurons)
        layer_heads.append(len(keep_heads))
        layer_ffn.append(len(keep_neurons))

    if all(h == config.num_heads for h in layer_heads) and all(f == config.ffn_dim for f in layer_ffn):
        new_config = config
    else:
        new_config = replace(config, layer_heads=tuple(layer_heads), layer_ffn_dims=tuple(layer_ffn))
    compacted = EncoderWeights(config=new_config, tensors={k: t.detach().clone() for k, t in tensors.items()})
    compacted.check_shapes()
    return compacted, new_config
