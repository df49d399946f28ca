"""Seeded synthetic tasks.

Classification: every class owns one ordering of a shared motif multiset,
planted contiguously among filler tokens drawn from outside the motif. Token
histograms carry no label signal, only the order does.

Toy MLM: sequences from a seeded order-2 Markov chain with a fraction of
positions replaced by the mask id.
"""
import logging
from itertools import permutations
from typing import Iterator, List, Set, Tuple

import numpy as np

from models.config import TaskKind, TaskSpec
from tasks.dataset import CLS_ID, NO_TARGET, PAD_ID, Batch, Example, TaskSplits, mask_id
from utils.errors import ConfigurationError
from utils.seeding import make_rng

logger = logging.getLogger(__name__)

# generator streams, keyed under the task's generator_seed
MOTIF_STREAM = 0
SAMPLE_STREAM = 1
CHAIN_STREAM = 2

MAX_DRAWS_PER_EXAMPLE = 50


def regular_tokens(vocab_size: int) -> np.ndarray:
    """Token ids that are neither pad, CLS nor mask"""
    return np.arange(CLS_ID + 1, mask_id(vocab_size))


class MotifTask:
    """Class motifs and filler vocabulary for one TaskSpec"""

    def __init__(self, spec: TaskSpec):
        if spec.kind not in (TaskKind.SEQUENCE_CLASSIFICATION, TaskKind.TOKEN_CLASSIFICATION):
            raise ConfigurationError(f"motif tasks need a classification kind, got {spec.kind.value}")
        # one slot is taken by the leading CLS token
        if spec.motif_length > spec.shortest - 1:
            raise ConfigurationError(
                f"motif length {spec.motif_length} does not fit sequences of length {spec.shortest} (seq_len {spec.seq_len})"
            )
        vocabulary = regular_tokens(spec.vocab_size)
        if spec.motif_length >= len(vocabulary):
            raise ConfigurationError(
                f"vocabulary of {spec.vocab_size} leaves no filler tokens for a motif of length {spec.motif_length}"
            )
        self.spec = spec
        rng = make_rng(spec.generator_seed, MOTIF_STREAM)
        tokens = rng.choice(vocabulary, size=spec.motif_length, replace=False)
        self.motifs = self._orderings(tokens, spec.num_classes, rng)
        self.fillers = np.setdiff1d(vocabulary, tokens)

    @staticmethod
    def _orderings(tokens: np.ndarray, num_classes: int, rng: np.random.Generator) -> List[np.ndarray]:
        orders = list(permutations(range(len(tokens))))
        if num_classes > len(orders):
            raise ConfigurationError(
                f"{num_classes} classes need more distinct motif orderings than {len(tokens)} tokens allow"
            )
        picked = rng.choice(len(orders), size=num_classes, replace=False)
        return [tokens[list(orders[i])] for i in picked]

    def sample(self, label: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """ids, mask and per-token tags for one example of `label`"""
        spec = self.spec
        length = int(rng.integers(spec.shortest, spec.seq_len + 1))
        ids = np.full(spec.seq_len, PAD_ID, dtype=np.int64)
        tags = np.zeros(spec.seq_len, dtype=np.int64)
        ids[0] = CLS_ID
        ids[1:length] = rng.choice(self.fillers, size=length - 1)
        start = int(rng.integers(1, length - spec.motif_length + 1))
        ids[start:start + spec.motif_length] = self.motifs[label]
        tags[start:start + spec.motif_length] = label + 1
        mask = np.arange(spec.seq_len) < length
        return ids, mask, tags


def _flip(label: int, num_classes: int, noise_rate: float, rng: np.random.Generator) -> int:
    if noise_rate > 0 and rng.random() < noise_rate:
        return int((label + rng.integers(1, num_classes)) % num_classes)
    return label


def _unique_examples(spec: TaskSpec, count: int, draw, seen: Set[bytes], split: str) -> List[Example]:
    examples = []
    for _ in range(count * MAX_DRAWS_PER_EXAMPLE):
        if len(examples) == count:
            break
        example, key = draw(len(examples))
        if key in seen:
            continue
        seen.add(key)
        examples.append(example)
    if len(examples) < count:
        raise ConfigurationError(
            f"could only draw {len(examples)} distinct {split} sequences of {count}; enlarge seq_len or vocab_size"
        )
    return examples


def generate_classification(spec: TaskSpec) -> TaskSplits:
    """Disjoint, class-balanced train and eval sets for a motif classification task"""
    task = MotifTask(spec)
    rng = make_rng(spec.generator_seed, SAMPLE_STREAM)

    def draw(index: int):
        # round-robin labels keep classes balanced within one example
        label = index % spec.num_classes
        ids, mask, tags = task.sample(label, rng)
        noisy = _flip(label, spec.num_classes, spec.noise_rate, rng)
        if noisy != label:
            tags = np.where(tags > 0, noisy + 1, 0)
        example = Example(ids=ids, mask=mask, label=noisy)
        if spec.kind == TaskKind.TOKEN_CLASSIFICATION:
            example.tags = tags
        return example, ids.tobytes()

    seen: Set[bytes] = set()
    train = _unique_examples(spec, spec.num_train, draw, seen, "train")
    evaluation = _unique_examples(spec, spec.num_eval, draw, seen, "eval")
    logger.info(
        "generated %s task: %d train / %d eval, %d classes",
        spec.kind.value, len(train), len(evaluation), spec.num_classes,
    )
    return TaskSplits(Batch.from_examples(spec.kind, train), Batch.from_examples(spec.kind, evaluation))


def generate_token_classification(spec: TaskSpec) -> TaskSplits:
    """Motif tagging: motif tokens carry class + 1, every other token 0"""
    if spec.kind != TaskKind.TOKEN_CLASSIFICATION:
        raise ConfigurationError(f"expected token_classification, got {spec.kind.value}")
    return generate_classification(spec)


def markov_table(spec: TaskSpec) -> np.ndarray:
    """Order-2 transition probabilities over regular tokens: [prev2, prev1, next]"""
    size = len(regular_tokens(spec.vocab_size))
    rng = make_rng(spec.generator_seed, CHAIN_STREAM)
    return rng.dirichlet(np.full(size, spec.markov_concentration), size=(size, size))


def stream_toy_mlm(spec: TaskSpec, stream: int = SAMPLE_STREAM) -> Iterator[Tuple[Example, np.ndarray]]:
    """Endless masked sequences, each paired with its unmasked token ids"""
    if spec.kind != TaskKind.TOY_MLM:
        raise ConfigurationError(f"expected toy_mlm, got {spec.kind.value}")
    if spec.shortest < 3:
        raise ConfigurationError("toy MLM sequences need room for CLS plus two chain tokens")
    vocabulary = regular_tokens(spec.vocab_size)
    table = markov_table(spec)
    rng = make_rng(spec.generator_seed, stream)
    size = len(vocabulary)
    mask_token = mask_id(spec.vocab_size)

    while True:
        length = int(rng.integers(spec.shortest, spec.seq_len + 1))
        chain = list(rng.integers(0, size, size=2))
        for _ in range(length - 3):
            chain.append(int(rng.choice(size, p=table[chain[-2], chain[-1]])))
        original = np.full(spec.seq_len, PAD_ID, dtype=np.int64)
        original[0] = CLS_ID
        original[1:length] = vocabulary[chain]

        body = length - 1
        count = max(1, int(round(spec.mask_rate * body)))
        positions = 1 + rng.choice(body, size=count, replace=False)
        ids = original.copy()
        ids[positions] = mask_token
        targets = np.full(spec.seq_len, NO_TARGET, dtype=np.int64)
        targets[positions] = original[positions]
        mask = np.arange(spec.seq_len) < length
        yield Example(ids=ids, mask=mask, targets=targets), original


def generate_toy_mlm(spec: TaskSpec) -> TaskSplits:
    """Train and eval splits cut from the masked stream, disjoint on unmasked sequences"""
    stream = stream_toy_mlm(spec)

    def draw(index: int):
        example, original = next(stream)
        return example, original.tobytes()

    seen: Set[bytes] = set()
    train = _unique_examples(spec, spec.num_train, draw, seen, "train")
    evaluation = _unique_examples(spec, spec.num_eval, draw, seen, "eval")
    logger.info("generated toy MLM task: %d train / %d eval", len(train), len(evaluation))
    return TaskSplits(Batch.from_examples(spec.kind, train), Batch.from_examples(spec.kind, evaluation))


def generate_task(spec: TaskSpec) -> TaskSplits:
    if spec.kind == TaskKind.SEQUENCE_CLASSIFICATION:
        return generate_classification(spec)
    if spec.kind == TaskKind.TOKEN_CLASSIFICATION:
        return generate_token_classification(spec)
    return generate_toy_mlm(spec)
