"""STS evaluation, alignment/uniformity measurement and the linear probe."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from scipy import stats

from src.config import EvalConfig, ProbeConfig
from src.data import (
    LabeledSet,
    ScoredPairSet,
    Vocab,
    high_similarity_pairs,
    tokenize_all,
    unique_sentences,
)
from src.errors import ConfigError, MetricError
from src.losses import DEFAULT_EPS_LOG, alignment_loss, uniformity_loss
from src.model import EncoderWeights, MaskSet, forward_embed

logger = logging.getLogger(__name__)

EMBED_BATCH = 64


@dataclass
class EvalReport:
    spearman: float
    alignment: float
    uniformity: float
    probe_accuracy: Optional[float]
    model_id: str
    sparsity: float
    lam: Optional[float]

    def to_row(self) -> dict:
        return asdict(self)


@dataclass
class StsResult:
    spearman: float
    alignment: float
    uniformity: float


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson correlation of average-tie ranks."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise MetricError(f"spearman inputs differ in shape: {x.shape} vs {y.shape}")
    if len(x) < 2:
        raise MetricError("spearman needs at least 2 points")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise MetricError("spearman is undefined for a constant input")
    return float(stats.spearmanr(x, y)[0])


def embed_sentences(
    weights: EncoderWeights,
    masks: MaskSet,
    sentences: Sequence[str],
    vocab: Vocab,
) -> torch.Tensor:
    """Dropout-off CLS embeddings, as float64 rows."""
    limit = weights.config.max_seq_len - 1
    chunks = []
    with torch.no_grad():
        for start in range(0, len(sentences), EMBED_BATCH):
            batch = [ids[:limit] for ids in tokenize_all(sentences[start:start + EMBED_BATCH], vocab)]
            chunks.append(forward_embed(batch, weights, masks).double())
    return torch.cat(chunks, dim=0)


def measure_alignment_uniformity(
    H: torch.Tensor,
    H_plus: torch.Tensor,
    H_all: torch.Tensor,
    eps_log: float = DEFAULT_EPS_LOG,
) -> tuple[float, float]:
    """Alignment over positive pairs and uniformity over distinct embeddings, on unit-normalized rows."""
    align = alignment_loss(F.normalize(H, dim=-1), F.normalize(H_plus, dim=-1), eps_log)
    uniform = uniformity_loss(F.normalize(H_all, dim=-1))
    return float(align), float(uniform)


def eval_sts(
    weights: EncoderWeights,
    masks: MaskSet,
    pairs: ScoredPairSet,
    vocab: Vocab,
    config: Optional[EvalConfig] = None,
    eps_log: float = DEFAULT_EPS_LOG,
) -> StsResult:
    """Spearman of predicted cosines against gold, plus alignment (gold >= threshold) and uniformity."""
    config = config or EvalConfig()
    if len(pairs) < 2:
        raise MetricError("STS evaluation needs at least 2 pairs")
    positives = high_similarity_pairs(pairs, config.alignment_threshold)
    if not positives:
        raise MetricError(f"no evaluation pairs with gold >= {config.alignment_threshold}")

    sentences = unique_sentences(pairs)
    position = {s: i for i, s in enumerate(sentences)}
    E = embed_sentences(weights, masks, sentences, vocab)
    idx_a = torch.tensor([position[p.sentence_a] for p in pairs.pairs])
    idx_b = torch.tensor([position[p.sentence_b] for p in pairs.pairs])

    unit = F.normalize(E, dim=-1)
    predictions = (unit[idx_a] * unit[idx_b]).sum(dim=-1).numpy()
    gold = np.array([p.gold for p in pairs.pairs])

    pos_a = torch.tensor([position[p.sentence_a] for p in positives])
    pos_b = torch.tensor([position[p.sentence_b] for p in positives])
    align, uniform = measure_alignment_uniformity(E[pos_a], E[pos_b], E, eps_log)

    rho = spearman(predictions, gold)
    return StsResult(spearman=rho, alignment=align, uniformity=uniform)


def fit_probe(
    X_train: np.ndarray,
    y_train: np.ndarray,
    X_test: np.ndarray,
    y_test: np.ndarray,
    config: Optional[ProbeConfig] = None,
    num_classes: Optional[int] = None,
) -> float:
    """Multinomial logistic regression by fixed-step full-batch gradient descent.

    Features are standardized with training statistics. Test labels the
    model never saw are counted as errors.
    """
    config = config or ProbeConfig()
    y_train = np.asarray(y_train, dtype=np.int64)
    y_test = np.asarray(y_test, dtype=np.int64)
    if len(np.unique(y_train)) < 2:
        raise ConfigError("linear probe needs at least 2 classes in the training set")
    num_classes = max(num_classes or 0, int(y_train.max()) + 1)

    X_train = np.asarray(X_train, dtype=np.float64)
    X_test = np.asarray(X_test, dtype=np.float64)
    mean = X_train.mean(axis=0)
    std = X_train.std(axis=0) + 1e-8
    Xtr = torch.from_numpy((X_train - mean) / std)
    Xte = torch.from_numpy((X_test - mean) / std)
    ytr = torch.from_numpy(y_train)

    generator = torch.Generator().manual_seed(config.seed)
    W = (0.01 * torch.randn(Xtr.shape[1], num_classes, generator=generator, dtype=torch.float64)).requires_grad_(True)
    b = torch.zeros(num_classes, dtype=torch.float64, requires_grad=True)
    optimizer = torch.optim.SGD([W, b], lr=config.learning_rate)
    for _ in range(config.iterations):
        optimizer.zero_grad()
        F.cross_entropy(Xtr @ W + b, ytr).backward()
        optimizer.step()

    with torch.no_grad():
        predicted = (Xte @ W + b).argmax(dim=1).numpy()
    accuracy = float(np.mean(predicted == y_test))
    if not math.isfinite(accuracy):
        raise MetricError("probe accuracy is not finite")
    return accuracy


def linear_probe(
    weights: EncoderWeights,
    masks: MaskSet,
    train: LabeledSet,
    test: LabeledSet,
    vocab: Vocab,
    config: Optional[ProbeConfig] = None,
) -> float:
    X_train = embed_sentences(weights, masks, train.sentences, vocab).numpy()
    X_test = embed_sentences(weights, masks, test.sentences, vocab).numpy()
    return fit_probe(X_train, train.labels, X_test, test.labels, config, train.num_classes)


def evaluate_model(
    weights: EncoderWeights,
    masks: MaskSet,
    pairs: ScoredPairSet,
    vocab: Vocab,
    eval_config: EvalConfig,
    probe_sets: Optional[tuple[LabeledSet, LabeledSet]] = None,
    probe_config: Optional[ProbeConfig] = None,
    model_id: str = "model",
    sparsity: float = 0.0,
    lam: Optional[float] = None,
    eps_log: float = DEFAULT_EPS_LOG,
) -> EvalReport:
    sts = eval_sts(weights, masks, pairs, vocab, eval_config, eps_log)
    probe = None
    if probe_sets is not None:
        probe = linear_probe(weights, masks, probe_sets[0], probe_sets[1], vocab, probe_config)
    report = EvalReport(
        spearman=sts.spearman,
        alignment=sts.alignment,
        uniformity=sts.uniformity,
        probe_accuracy=probe,
        model_id=model_id,
        sparsity=sparsity,
        lam=lam,
    )
    logger.info("%s: spearman %.4f  align %.4f  uniform %.4f", model_id,
                report.spearman, report.alignment, report.uniformity)
    return report
