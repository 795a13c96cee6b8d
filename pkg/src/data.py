"""Corpus and evaluation-set loading, tokenization and batching."""

from __future__ import annotations

import logging
import os
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from src.errors import ConfigError, DataError, DataIOError, ParseError

logger = logging.getLogger(__name__)

PAD_ID = 0
CLS_ID = 1
MASK_ID = 2
UNK_ID = 3
RESERVED_TOKENS = ("[PAD]", "[CLS]", "[MASK]", "[UNK]")

MIN_GOLD = 0.0
MAX_GOLD = 5.0


@dataclass(frozen=True)
class Vocab:
    """Token to id mapping; ids 0-3 are reserved."""
    token_to_id: dict[str, int]

    @property
    def size(self) -> int:
        return len(self.token_to_id)

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)


@dataclass(frozen=True)
class SentenceCorpus:
    sentences: tuple[str, ...]
    source: str = "<memory>"

    @property
    def count(self) -> int:
        return len(self.sentences)


@dataclass(frozen=True)
class ScoredPair:
    sentence_a: str
    sentence_b: str
    gold: float


@dataclass(frozen=True)
class ScoredPairSet:
    pairs: tuple[ScoredPair, ...]
    source: str = "<memory>"

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass(frozen=True)
class LabeledSet:
    examples: tuple[tuple[str, int], ...]
    num_classes: int
    source: str = "<memory>"

    def __len__(self) -> int:
        return len(self.examples)

    @property
    def sentences(self) -> list[str]:
        return [s for s, _ in self.examples]

    @property
    def labels(self) -> np.ndarray:
        return np.array([label for _, label in self.examples], dtype=np.int64)


def split_words(sentence: str) -> list[str]:
    return sentence.lower().split()


def build_vocab(corpus: SentenceCorpus, max_size: int) -> Vocab:
    """Rank lowercased whitespace tokens by frequency, ties broken lexicographically."""
    if corpus.count == 0:
        raise DataError(f"cannot build a vocabulary from an empty corpus ({corpus.source})")
    if max_size <= len(RESERVED_TOKENS):
        raise ConfigError(f"vocabulary size must exceed {len(RESERVED_TOKENS)}, got {max_size}")

    counts = Counter(tok for sentence in corpus.sentences for tok in split_words(sentence))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = ranked[: max_size - len(RESERVED_TOKENS)]

    token_to_id = {tok: i for i, tok in enumerate(RESERVED_TOKENS)}
    for tok, _ in kept:
        token_to_id[tok] = len(token_to_id)

    if len(kept) < len(ranked):
        logger.info("Vocabulary truncated: %d of %d distinct tokens kept", len(kept), len(ranked))
    return Vocab(token_to_id=token_to_id)


def tokenize(sentence: str, vocab: Vocab) -> list[int]:
    """Lowercase, split on whitespace, map with UNK fallback. Never emits PAD/CLS/MASK."""
    return [vocab.id_of(tok) for tok in split_words(sentence)]


def tokenize_all(sentences: Iterable[str], vocab: Vocab) -> list[list[int]]:
    return [tokenize(s, vocab) for s in sentences]


def _read_lines(path: str) -> list[str]:
    if not os.path.exists(path):
        raise DataIOError(f"file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            return f.read().splitlines()
    except (OSError, UnicodeDecodeError) as e:
        raise DataIOError(f"could not read {path}: {e}") from None


def load_corpus(path: str) -> SentenceCorpus:
    """One sentence per line; blank lines are skipped."""
    sentences = tuple(line.strip() for line in _read_lines(path) if line.strip())
    if not sentences:
        raise DataError(f"corpus {path} contains no sentences")
    logger.debug("Loaded %d sentences from %s", len(sentences), path)
    return SentenceCorpus(sentences=sentences, source=path)


def load_scored_pairs(path: str) -> ScoredPairSet:
    """Parse 'sentence_a<TAB>sentence_b<TAB>score' rows with scores in [0, 5]."""
    pairs = []
    for line_no, line in enumerate(_read_lines(path), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError(path, line_no, f"expected 3 tab-separated fields, got {len(parts)}")
        a, b, raw_score = (p.strip() for p in parts)
        if not a or not b:
            raise ParseError(path, line_no, "empty sentence")
        try:
            gold = float(raw_score)
        except ValueError:
            raise ParseError(path, line_no, f"score {raw_score!r} is not numeric") from None
        if not MIN_GOLD <= gold <= MAX_GOLD:
            raise ParseError(path, line_no, f"score {gold} outside [{MIN_GOLD}, {MAX_GOLD}]")
        pairs.append(ScoredPair(a, b, gold))
    if not pairs:
        raise DataError(f"pair file {path} contains no rows")
    return ScoredPairSet(pairs=tuple(pairs), source=path)


def load_labeled(path: str) -> LabeledSet:
    """Parse 'label<TAB>sentence' rows; labels must be dense in [0, num_classes)."""
    examples = []
    for line_no, line in enumerate(_read_lines(path), start=1):
        if not line.strip():
            continue
        label_text, sep, sentence = line.partition("\t")
        if not sep or not sentence.strip():
            raise ParseError(path, line_no, "expected 'label<TAB>sentence'")
        try:
            label = int(label_text)
        except ValueError:
            raise ParseError(path, line_no, f"label {label_text!r} is not an integer") from None
        if label < 0:
            raise ParseError(path, line_no, f"negative label {label}")
        examples.append((sentence.strip(), label))
    if not examples:
        raise DataError(f"labeled file {path} contains no rows")
    num_classes = max(label for _, label in examples) + 1
    missing = set(range(num_classes)) - {label for _, label in examples}
    if missing:
        raise DataError(f"labels in {path} are not dense; missing {sorted(missing)}")
    return LabeledSet(examples=tuple(examples), num_classes=num_classes, source=path)


def split_labeled(labeled: LabeledSet, test_fraction: float, seed: int) -> tuple[LabeledSet, LabeledSet]:
    """Deterministic train/test split of a labeled set."""
    order = np.random.default_rng(seed).permutation(len(labeled))
    n_test = max(1, int(round(len(labeled) * test_fraction)))
    test_idx = sorted(order[:n_test])
    train_idx = sorted(order[n_test:])
    train = LabeledSet(tuple(labeled.examples[i] for i in train_idx), labeled.num_classes,
                       f"{labeled.source}#train")
    test = LabeledSet(tuple(labeled.examples[i] for i in test_idx), labeled.num_classes,
                      f"{labeled.source}#test")
    return train, test


def make_batches(corpus: SentenceCorpus, batch_size: int, epoch_seed: int) -> list[list[str]]:
    """Permute the corpus with epoch_seed and cut it into batches.

    A trailing batch with fewer than 2 sentences is dropped since it has
    no in-batch negative.
    """
    if batch_size < 2:
        raise ConfigError(f"batch size must be >= 2, got {batch_size}")
    order = np.random.default_rng(epoch_seed).permutation(corpus.count)
    batches = [
        [corpus.sentences[i] for i in order[start:start + batch_size]]
        for start in range(0, corpus.count, batch_size)
    ]
    if batches and len(batches[-1]) < 2:
        batches.pop()
    return batches


def pair_batches(pairs: ScoredPairSet, batch_size: int) -> list[list[ScoredPair]]:
    """Consecutive, unshuffled batches of scored pairs (the last may be short)."""
    return [
        list(pairs.pairs[start:start + batch_size])
        for start in range(0, len(pairs), batch_size)
    ]


def high_similarity_pairs(pairs: ScoredPairSet, threshold: float) -> list[ScoredPair]:
    return [p for p in pairs.pairs if p.gold >= threshold]


def unique_sentences(pairs: ScoredPairSet, extra: Optional[Iterable[str]] = None) -> list[str]:
    """Distinct sentences of a pair set in first-seen order."""
    seen: dict[str, None] = {}
    for p in pairs.pairs:
        seen.setdefault(p.sentence_a, None)
        seen.setdefault(p.sentence_b, None)
    for s in extra or ():
        seen.setdefault(s, None)
    return list(seen)
