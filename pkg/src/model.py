"""Desk-scale transformer encoder with head and neuron mask variables.

Weights are a flat mapping of named tensors. Attention parameters are stacked
per head, so a layer's query weight has shape (heads, hidden, head_dim); this
is what lets compaction drop heads with a single index_select and lets the
checkpoint format store every tensor as one named record.

Each layer is a post-layer-norm residual block:

    X = LN1(X + sum_i xi_i * Attn_i(X))
    X = LN2(X + (GELU(X W1 + b1) * nu) W2 + b2)

The sentence embedding is the final hidden state at the prepended CLS token.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import torch
import torch.nn.functional as F

from src.config import ModelConfig
from src.data import CLS_ID, PAD_ID
from src.errors import InputError, NumericError, ShapeError, StateError, VocabError

logger = logging.getLogger(__name__)

INIT_STD = 0.02
LAYER_NORM_EPS = 1e-12

TORCH_DTYPES = {"float32": torch.float32, "float64": torch.float64}

# A (batch x hidden) matrix of CLS hidden states, one row per sentence.
EmbeddingMatrix = torch.Tensor


def layer_key(layer: int, name: str) -> str:
    return f"layers.{layer}.{name}"


def expected_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Tensor name -> shape, in canonical order."""
    d, da = config.hidden_dim, config.head_dim
    shapes: dict[str, tuple[int, ...]] = {
        "embeddings.token": (config.vocab_size, d),
        "embeddings.position": (config.max_seq_len, d),
    }
    for i in range(config.num_layers):
        h, f = config.heads_at(i), config.ffn_at(i)
        for proj in ("query", "key", "value"):
            shapes[layer_key(i, f"attn.{proj}.weight")] = (h, d, da)
            shapes[layer_key(i, f"attn.{proj}.bias")] = (h, da)
        shapes[layer_key(i, "attn.output.weight")] = (h, da, d)
        shapes[layer_key(i, "attn.output.bias")] = (h, d)
        shapes[layer_key(i, "ln1.weight")] = (d,)
        shapes[layer_key(i, "ln1.bias")] = (d,)
        shapes[layer_key(i, "ffn.in.weight")] = (d, f)
        shapes[layer_key(i, "ffn.in.bias")] = (f,)
        shapes[layer_key(i, "ffn.out.weight")] = (f, d)
        shapes[layer_key(i, "ffn.out.bias")] = (d,)
        shapes[layer_key(i, "ln2.weight")] = (d,)
        shapes[layer_key(i, "ln2.bias")] = (d,)
    return shapes


@dataclass
class LayerWeights:
    """View of one layer's tensors."""
    query_w: torch.Tensor
    query_b: torch.Tensor
    key_w: torch.Tensor
    key_b: torch.Tensor
    value_w: torch.Tensor
    value_b: torch.Tensor
    out_w: torch.Tensor
    out_b: torch.Tensor
    ln1_w: torch.Tensor
    ln1_b: torch.Tensor
    ffn_in_w: torch.Tensor
    ffn_in_b: torch.Tensor
    ffn_out_w: torch.Tensor
    ffn_out_b: torch.Tensor
    ln2_w: torch.Tensor
    ln2_b: torch.Tensor

    @property
    def num_heads(self) -> int:
        return self.query_w.shape[0]

    @property
    def head_dim(self) -> int:
        return self.query_w.shape[2]

    @property
    def ffn_dim(self) -> int:
        return self.ffn_in_w.shape[1]


@dataclass
class EncoderWeights:
    config: ModelConfig
    tensors: dict[str, torch.Tensor]

    def layer(self, i: int) -> LayerWeights:
        t = self.tensors
        return LayerWeights(
            query_w=t[layer_key(i, "attn.query.weight")],
            query_b=t[layer_key(i, "attn.query.bias")],
            key_w=t[layer_key(i, "attn.key.weight")],
            key_b=t[layer_key(i, "attn.key.bias")],
            value_w=t[layer_key(i, "attn.value.weight")],
            value_b=t[layer_key(i, "attn.value.bias")],
            out_w=t[layer_key(i, "attn.output.weight")],
            out_b=t[layer_key(i, "attn.output.bias")],
            ln1_w=t[layer_key(i, "ln1.weight")],
            ln1_b=t[layer_key(i, "ln1.bias")],
            ffn_in_w=t[layer_key(i, "ffn.in.weight")],
            ffn_in_b=t[layer_key(i, "ffn.in.bias")],
            ffn_out_w=t[layer_key(i, "ffn.out.weight")],
            ffn_out_b=t[layer_key(i, "ffn.out.bias")],
            ln2_w=t[layer_key(i, "ln2.weight")],
            ln2_b=t[layer_key(i, "ln2.bias")],
        )

    @property
    def dtype(self) -> torch.dtype:
        return TORCH_DTYPES[self.config.dtype]

    def clone(self) -> "EncoderWeights":
        """Detached deep copy."""
        return EncoderWeights(
            config=self.config,
            tensors={name: t.detach().clone() for name, t in self.tensors.items()},
        )

    def as_leaves(self) -> "EncoderWeights":
        copy = self.clone()
        for t in copy.tensors.values():
            t.requires_grad_(True)
        return copy

    def num_parameters(self) -> int:
        return sum(t.numel() for t in self.tensors.values())

    def check_shapes(self) -> None:
        shapes = expected_shapes(self.config)
        if list(shapes) != list(self.tensors):
            raise ShapeError("weight names do not match the model configuration")
        for name, shape in shapes.items():
            if tuple(self.tensors[name].shape) != shape:
                raise ShapeError(
                    f"{name} has shape {tuple(self.tensors[name].shape)}, expected {shape}"
                )

    def check_finite(self) -> None:
        for name, t in self.tensors.items():
            if not torch.isfinite(t).all():
                raise NumericError(f"non-finite values in weight {name}")


@dataclass
class MaskSet:
    """Head masks xi and neuron masks nu, one vector per layer."""
    head: list[torch.Tensor]
    neuron: list[torch.Tensor]

    @classmethod
    def ones(cls, config: ModelConfig) -> "MaskSet":
        dtype = TORCH_DTYPES[config.dtype]
        return cls(
            head=[torch.ones(config.heads_at(i), dtype=dtype) for i in range(config.num_layers)],
            neuron=[torch.ones(config.ffn_at(i), dtype=dtype) for i in range(config.num_layers)],
        )

    @property
    def num_layers(self) -> int:
        return len(self.head)

    def clone(self) -> "MaskSet":
        return MaskSet(
            head=[m.detach().clone() for m in self.head],
            neuron=[m.detach().clone() for m in self.neuron],
        )

    def as_leaves(self) -> "MaskSet":
        copy = self.clone()
        for m in copy.head + copy.neuron:
            m.requires_grad_(True)
        return copy

    def is_all_ones(self) -> bool:
        return all(bool((m == 1.0).all()) for m in self.head + self.neuron)

    def is_binary(self) -> bool:
        return all(bool(((m == 0.0) | (m == 1.0)).all()) for m in self.head + self.neuron)

    def check_compatible(self, config: ModelConfig) -> None:
        if self.num_layers != config.num_layers or len(self.neuron) != config.num_layers:
            raise ShapeError(
                f"mask set has {self.num_layers} layers, model has {config.num_layers}"
            )
        for i in range(config.num_layers):
            if tuple(self.head[i].shape) != (config.heads_at(i),):
                raise ShapeError(f"layer {i} head mask shape {tuple(self.head[i].shape)}")
            if tuple(self.neuron[i].shape) != (config.ffn_at(i),):
                raise ShapeError(f"layer {i} neuron mask shape {tuple(self.neuron[i].shape)}")


@dataclass
class GradientSet:
    weights: dict[str, torch.Tensor]
    head_masks: list[torch.Tensor]
    neuron_masks: list[torch.Tensor]


def init_model(config: ModelConfig) -> EncoderWeights:
    """Truncated normal (std 0.02, cut at 2 std) matrices, zero biases, unit layer norms."""
    config.validate()
    dtype = TORCH_DTYPES[config.dtype]
    generator = torch.Generator().manual_seed(config.seed)
    tensors = {}
    for name, shape in expected_shapes(config).items():
        t = torch.empty(shape, dtype=dtype)
        if name.endswith(("ln1.weight", "ln2.weight")):
            t.fill_(1.0)
        elif name.endswith(".bias"):
            t.zero_()
        else:
            torch.nn.init.trunc_normal_(
                t, mean=0.0, std=INIT_STD, a=-2 * INIT_STD, b=2 * INIT_STD, generator=generator
            )
        tensors[name] = t
    return EncoderWeights(config=config, tensors=tensors)


def _dropout(x: torch.Tensor, rate: float, generator: Optional[torch.Generator]) -> torch.Tensor:
    if generator is None or rate == 0.0:
        return x
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype) >= rate
    return x * keep / (1.0 - rate)


def masked_mha(
    X: torch.Tensor,
    layer: LayerWeights,
    head_masks: torch.Tensor,
    key_padding: Optional[torch.Tensor] = None,
    dropout_rate: float = 0.0,
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    """Sum over heads of xi_i * Attn_i(X); X is (..., l, d).

    key_padding is a boolean (..., l) tensor, True at padded key positions.
    """
    d = layer.query_w.shape[1]
    if X.shape[-1] != d:
        raise ShapeError(f"attention input width {X.shape[-1]} != hidden size {d}")
    if tuple(head_masks.shape) != (layer.num_heads,):
        raise ShapeError(
            f"head mask shape {tuple(head_masks.shape)} != ({layer.num_heads},)"
        )

    q = torch.einsum("...ld,hde->...hle", X, layer.query_w) + layer.query_b[:, None, :]
    k = torch.einsum("...ld,hde->...hle", X, layer.key_w) + layer.key_b[:, None, :]
    v = torch.einsum("...ld,hde->...hle", X, layer.value_w) + layer.value_b[:, None, :]

    scores = q @ k.transpose(-1, -2) / math.sqrt(layer.head_dim)
    if key_padding is not None:
        scores = scores.masked_fill(key_padding[..., None, None, :], float("-inf"))
    probs = _dropout(torch.softmax(scores, dim=-1), dropout_rate, generator)

    heads = torch.einsum("...hle,hed->...hld", probs @ v, layer.out_w) + layer.out_b[:, None, :]
    return torch.einsum("h,...hld->...ld", head_masks, heads)


def masked_ffn(
    A: torch.Tensor,
    layer: LayerWeights,
    neuron_masks: torch.Tensor,
    dropout_rate: float = 0.0,
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    """(GELU(A W1 + b1) * nu) W2 + b2; nu gates one intermediate neuron each."""
    if A.shape[-1] != layer.ffn_in_w.shape[0]:
        raise ShapeError(f"FFN input width {A.shape[-1]} != hidden size {layer.ffn_in_w.shape[0]}")
    if tuple(neuron_masks.shape) != (layer.ffn_dim,):
        raise ShapeError(
            f"neuron mask shape {tuple(neuron_masks.shape)} != ({layer.ffn_dim},)"
        )
    hidden = F.gelu(A @ layer.ffn_in_w + layer.ffn_in_b)
    hidden = _dropout(hidden, dropout_rate, generator) * neuron_masks
    return hidden @ layer.ffn_out_w + layer.ffn_out_b


def pad_batch(token_batch: Sequence[Sequence[int]], config: ModelConfig) -> tuple[torch.Tensor, torch.Tensor]:
    """Prepend CLS, truncate, right-pad. Returns (ids, key_padding)."""
    if len(token_batch) == 0:
        raise InputError("empty token batch")
    limit = config.max_seq_len - 1
    rows = []
    for seq in token_batch:
        if len(seq) == 0:
            raise InputError("empty token sequence")
        for tok in seq:
            if not 0 <= tok < config.vocab_size:
                raise VocabError(f"token id {tok} outside [0, {config.vocab_size})")
        if len(seq) > limit:
            logger.debug("Truncating sequence of %d tokens to %d", len(seq), limit)
            seq = seq[:limit]
        rows.append([CLS_ID, *seq])

    length = max(len(r) for r in rows)
    ids = torch.full((len(rows), length), PAD_ID, dtype=torch.long)
    key_padding = torch.ones((len(rows), length), dtype=torch.bool)
    for i, row in enumerate(rows):
        ids[i, : len(row)] = torch.tensor(row, dtype=torch.long)
        key_padding[i, : len(row)] = False
    return ids, key_padding


def encode(
    token_batch: Sequence[Sequence[int]],
    weights: EncoderWeights,
    masks: MaskSet,
    dropout_on: bool = False,
    dropout_seed: int = 0,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Final-layer hidden states (batch, l, d) and the key padding mask."""
    config = weights.config
    masks.check_compatible(config)
    ids, key_padding = pad_batch(token_batch, config)

    generator = torch.Generator().manual_seed(dropout_seed) if dropout_on else None
    rate = config.dropout_rate

    t = weights.tensors
    x = t["embeddings.token"][ids] + t["embeddings.position"][: ids.shape[1]]
    d = config.hidden_dim
    for i in range(config.num_layers):
        layer = weights.layer(i)
        attn = masked_mha(x, layer, masks.head[i].to(x.dtype), key_padding, rate, generator)
        x = F.layer_norm(x + attn, (d,), layer.ln1_w, layer.ln1_b, LAYER_NORM_EPS)
        ffn = masked_ffn(x, layer, masks.neuron[i].to(x.dtype), rate, generator)
        x = F.layer_norm(x + ffn, (d,), layer.ln2_w, layer.ln2_b, LAYER_NORM_EPS)
    return x, key_padding


def forward_embed(
    token_batch: Sequence[Sequence[int]],
    weights: EncoderWeights,
    masks: MaskSet,
    dropout_on: bool = False,
    dropout_seed: int = 0,
) -> EmbeddingMatrix:
    hidden, _ = encode(token_batch, weights, masks, dropout_on, dropout_seed)
    return hidden[:, 0, :]


class GradientTape:
    """Records forward passes over leaf copies of weights and masks.

    backward() returns exact reverse-mode gradients for every weight and
    every mask entry at the current mask values. Each backward consumes the
    recorded passes; calling it again needs a new forward.
    """

    def __init__(self, weights: EncoderWeights, masks: MaskSet):
        self.weights = weights.as_leaves()
        self.masks = masks.as_leaves()
        self._recorded = False

    def encode(self, token_batch, dropout_on: bool = False, dropout_seed: int = 0):
        out = encode(token_batch, self.weights, self.masks, dropout_on, dropout_seed)
        self._recorded = True
        return out

    def forward_embed(self, token_batch, dropout_on: bool = False, dropout_seed: int = 0) -> EmbeddingMatrix:
        return self.encode(token_batch, dropout_on, dropout_seed)[0][:, 0, :]

    def backward(self, loss: torch.Tensor) -> GradientSet:
        if not self._recorded:
            raise StateError("backward called without a recorded forward pass")
        if loss.dim() != 0:
            raise ShapeError(f"loss must be a scalar, got shape {tuple(loss.shape)}")
        if not torch.isfinite(loss):
            raise NumericError(f"non-finite loss {loss.item()}")

        names = list(self.weights.tensors)
        leaves = [self.weights.tensors[n] for n in names] + self.masks.head + self.masks.neuron
        grads = torch.autograd.grad(loss, leaves, allow_unused=True)
        grads = [torch.zeros_like(leaf) if g is None else g for leaf, g in zip(leaves, grads)]
        self._recorded = False

        for g in grads:
            if not torch.isfinite(g).all():
                raise NumericError("non-finite gradient")

        n_w, n_layers = len(names), self.masks.num_layers
        return GradientSet(
            weights=dict(zip(names, grads[:n_w])),
            head_masks=list(grads[n_w:n_w + n_layers]),
            neuron_masks=list(grads[n_w + n_layers:]),
        )

    def detached_weights(self) -> EncoderWeights:
        return self.weights.clone()
