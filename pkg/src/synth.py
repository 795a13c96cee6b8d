"""Templated synthetic corpus with graded paraphrase pairs.

A sentence is five concept slots (adjective, subject, verb, object, place)
rendered through one of several frames, each concept picking one of its
synonyms. Two sentences sharing k of the five slot concepts get gold score
k, so a pair with every concept in common scores 5.0 and a pair with
nothing in common scores 0.0. Subjects, objects and places belong to a
topic, which is the class label of the labeled set.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.checkpoint import write_text
from src.config import GenConfig

logger = logging.getLogger(__name__)

SLOTS = ("adj", "subject", "verb", "object", "place")

FRAMES = (
    "the {adj} {subject} {verb} the {object} in the {place}",
    "in the {place} the {adj} {subject} {verb} the {object}",
    "a {adj} {subject} {verb} a {object} near the {place}",
    "near the {place} a {adj} {subject} {verb} a {object}",
)

ADJECTIVES = (
    ("small", "little", "tiny"),
    ("big", "large", "huge"),
    ("happy", "cheerful", "glad"),
    ("old", "aged", "ancient"),
    ("quick", "fast", "rapid"),
    ("quiet", "silent", "calm"),
    ("bright", "shiny", "vivid"),
    ("tired", "sleepy", "weary"),
)

VERBS = (
    ("watches", "observes", "sees"),
    ("carries", "holds", "brings"),
    ("finds", "discovers", "spots"),
    ("likes", "enjoys", "loves"),
    ("moves", "pushes", "shifts"),
    ("cleans", "washes", "scrubs"),
    ("paints", "colors", "decorates"),
    ("breaks", "cracks", "smashes"),
)


@dataclass(frozen=True)
class Topic:
    name: str
    subjects: tuple[tuple[str, ...], ...]
    objects: tuple[tuple[str, ...], ...]
    places: tuple[tuple[str, ...], ...]


TOPICS = (
    Topic(
        name="animals",
        subjects=(("dog", "puppy", "hound"), ("cat", "kitten", "feline"), ("horse", "pony", "stallion")),
        objects=(("bone", "stick", "twig"), ("blanket", "rug", "mat"), ("bucket", "pail", "trough")),
        places=(("farm", "ranch", "barn"), ("forest", "woods", "grove"), ("field", "meadow", "pasture")),
    ),
    Topic(
        name="kitchen",
        subjects=(("chef", "cook", "baker"), ("waiter", "server", "steward"), ("dishwasher", "porter", "helper")),
        objects=(("pan", "skillet", "pot"), ("knife", "blade", "cleaver"), ("plate", "dish", "platter")),
        places=(("kitchen", "galley", "cookhouse"), ("restaurant", "bistro", "diner"), ("bakery", "pastry", "patisserie")),
    ),
    Topic(
        name="sports",
        subjects=(("player", "athlete", "competitor"), ("coach", "trainer", "mentor"), ("referee", "umpire", "official")),
        objects=(("racket", "bat", "club"), ("helmet", "visor", "headgear"), ("trophy", "medal", "prize")),
        places=(("stadium", "arena", "coliseum"), ("gym", "studio", "fitness"), ("court", "track", "pitch")),
    ),
    Topic(
        name="travel",
        subjects=(("pilot", "aviator", "flyer"), ("driver", "chauffeur", "motorist"), ("sailor", "mariner", "seaman")),
        objects=(("map", "chart", "atlas"), ("ticket", "pass", "voucher"), ("suitcase", "luggage", "baggage")),
        places=(("airport", "airfield", "terminal"), ("harbor", "port", "dock"), ("station", "depot", "platform")),
    ),
)

# Independent random streams per output file.
_CORPUS_STREAM = 0
_DEV_STREAM = 1
_TEST_STREAM = 2
_LABELED_STREAM = 3


@dataclass(frozen=True)
class Concepts:
    """Concept index per slot; subject/object/place index into the topic's lists."""
    topic: int
    adj: int
    subject: int
    verb: int
    object: int
    place: int

    def shared_with(self, other: "Concepts") -> int:
        same_topic = self.topic == other.topic
        count = int(self.adj == other.adj) + int(self.verb == other.verb)
        for slot in ("subject", "object", "place"):
            count += int(same_topic and getattr(self, slot) == getattr(other, slot))
        return count


@dataclass
class SyntheticData:
    corpus: list[str]
    dev_pairs: list[tuple[str, str, float]]
    test_pairs: list[tuple[str, str, float]]
    labeled: list[tuple[int, str]]


def _pool(topic: Topic, slot: str) -> tuple[tuple[str, ...], ...]:
    if slot == "adj":
        return ADJECTIVES
    if slot == "verb":
        return VERBS
    return {"subject": topic.subjects, "object": topic.objects, "place": topic.places}[slot]


def _draw(rng: np.random.Generator, topic_index: Optional[int] = None) -> Concepts:
    if topic_index is None:
        topic_index = int(rng.integers(len(TOPICS)))
    topic = TOPICS[topic_index]
    values = {slot: int(rng.integers(len(_pool(topic, slot)))) for slot in SLOTS}
    return Concepts(topic=topic_index, **values)


def render(concepts: Concepts, rng: np.random.Generator) -> str:
    topic = TOPICS[concepts.topic]
    words = {}
    for slot in SLOTS:
        synonyms = _pool(topic, slot)[getattr(concepts, slot)]
        words[slot] = synonyms[int(rng.integers(len(synonyms)))]
    frame = FRAMES[int(rng.integers(len(FRAMES)))]
    return frame.format(**words)


def _perturb(base: Concepts, shared: int, rng: np.random.Generator) -> Concepts:
    """Keep `shared` slots of base and change the rest, staying in the same topic."""
    keep = set(rng.choice(len(SLOTS), size=shared, replace=False).tolist())
    topic = TOPICS[base.topic]
    values = {}
    for i, slot in enumerate(SLOTS):
        current = getattr(base, slot)
        if i in keep:
            values[slot] = current
        else:
            size = len(_pool(topic, slot))
            values[slot] = (current + 1 + int(rng.integers(size - 1))) % size
    return Concepts(topic=base.topic, **values)


def _pairs(count: int, rng: np.random.Generator) -> list[tuple[str, str, float]]:
    rows = []
    for _ in range(count):
        base = _draw(rng)
        shared = int(rng.integers(len(SLOTS) + 1))
        if shared == 0 and rng.random() < 0.5:
            # an unrelated sentence, usually from another topic
            other = _draw(rng)
        else:
            other = _perturb(base, shared, rng)
        gold = 5.0 * base.shared_with(other) / len(SLOTS)
        rows.append((render(base, rng), render(other, rng), gold))
    return rows


def generate(config: GenConfig) -> SyntheticData:
    """Deterministic corpus, dev/test pair sets and labeled set for one seed."""
    config.validate()
    n = config.sentences

    rng = np.random.default_rng([config.seed, _CORPUS_STREAM])
    corpus = [render(_draw(rng), rng) for _ in range(n)]

    n_pairs = max(50, n // 4)
    dev = _pairs(n_pairs, np.random.default_rng([config.seed, _DEV_STREAM]))
    test = _pairs(n_pairs, np.random.default_rng([config.seed, _TEST_STREAM]))

    rng = np.random.default_rng([config.seed, _LABELED_STREAM])
    labeled = []
    for i in range(max(200, n // 5)):
        concepts = _draw(rng, i % len(TOPICS))
        labeled.append((concepts.topic, render(concepts, rng)))

    return SyntheticData(corpus=corpus, dev_pairs=dev, test_pairs=test, labeled=labeled)


def write_synthetic(data: SyntheticData, out_dir: str) -> dict[str, str]:
    """corpus.txt, sts_dev.tsv, sts_test.tsv and labeled.tsv under out_dir."""
    paths = {name: os.path.join(out_dir, name)
             for name in ("corpus.txt", "sts_dev.tsv", "sts_test.tsv", "labeled.tsv")}
    write_text(paths["corpus.txt"], "".join(f"{s}\n" for s in data.corpus))
    write_text(paths["sts_dev.tsv"], "".join(f"{a}\t{b}\t{g:.1f}\n" for a, b, g in data.dev_pairs))
    write_text(paths["sts_test.tsv"], "".join(f"{a}\t{b}\t{g:.1f}\n" for a, b, g in data.test_pairs))
    write_text(paths["labeled.tsv"], "".join(f"{label}\t{s}\n" for label, s in data.labeled))
    logger.info("Wrote %d sentences, %d+%d scored pairs and %d labeled rows to %s",
                len(data.corpus), len(data.dev_pairs), len(data.test_pairs), len(data.labeled), out_dir)
    return paths
