"""Array-backed example sets and batching"""
from dataclasses import dataclass
from typing import Iterator, List, Optional

import numpy as np

from models.config import TaskKind
from utils.errors import InputError

PAD_ID = 0
CLS_ID = 1
# ids >= 0 in `targets` mark masked positions; -1 everywhere else
NO_TARGET = -1


def mask_id(vocab_size: int) -> int:
    return vocab_size - 1


@dataclass
class Batch:
    """Padded token ids with their mask and whichever labels the task uses"""
    kind: TaskKind
    ids: np.ndarray
    mask: np.ndarray
    labels: Optional[np.ndarray] = None
    tags: Optional[np.ndarray] = None
    targets: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return self.ids.shape[0]

    @property
    def shape(self):
        return self.ids.shape

    def take(self, index) -> "Batch":
        def pick(a):
            return None if a is None else a[index]
        return Batch(self.kind, self.ids[index], self.mask[index], pick(self.labels), pick(self.tags), pick(self.targets))

    def masked_positions(self) -> np.ndarray:
        """(example, position) pairs of masked tokens, row-major order"""
        return np.argwhere(self.targets >= 0)

    def real_positions(self) -> np.ndarray:
        return np.argwhere(self.mask)

    def examples(self) -> List["Example"]:
        rows = []
        for i in range(len(self)):
            rows.append(Example(
                ids=self.ids[i],
                mask=self.mask[i],
                label=None if self.labels is None else int(self.labels[i]),
                tags=None if self.tags is None else self.tags[i],
                targets=None if self.targets is None else self.targets[i],
            ))
        return rows

    @classmethod
    def from_examples(cls, kind: TaskKind, examples: List["Example"]) -> "Batch":
        if not examples:
            raise InputError("cannot build a batch from zero examples")

        def stack(field_name, dtype):
            values = [getattr(e, field_name) for e in examples]
            if any(v is None for v in values):
                return None
            return np.asarray(values, dtype=dtype)

        return cls(
            kind,
            stack("ids", np.int64),
            stack("mask", bool),
            labels=stack("label", np.int64),
            tags=stack("tags", np.int64),
            targets=stack("targets", np.int64),
        )


@dataclass
class Example:
    """One padded sequence: token ids, real-token mask and its supervision"""
    ids: np.ndarray
    mask: np.ndarray
    label: Optional[int] = None
    tags: Optional[np.ndarray] = None
    targets: Optional[np.ndarray] = None


# a whole split is stored the same way as a batch
TaskData = Batch


@dataclass
class TaskSplits:
    train: TaskData
    eval: TaskData


def iter_batches(data: TaskData, batch_size: int, rng: Optional[np.random.Generator] = None) -> Iterator[Batch]:
    """One pass over `data`; shuffled when a generator is given"""
    order = np.arange(len(data)) if rng is None else rng.permutation(len(data))
    for start in range(0, len(data), batch_size):
        yield data.take(order[start:start + batch_size])


def endless_batches(data: TaskData, batch_size: int, rng: np.random.Generator) -> Iterator[Batch]:
    """Reshuffled epochs forever, every batch full-size"""
    while True:
        order = rng.permutation(len(data))
        for start in range(0, len(data) - batch_size + 1, batch_size):
            yield data.take(order[start:start + batch_size])
        if len(data) < batch_size:
            yield data.take(order)
