"""Line-delimited JSON dumps of task splits.

One object per line:

    {"kind": "sequence_classification", "ids": [...], "mask": [...], "label": 1}

`tags` (token classification) or `targets` (toy MLM, -1 where not masked)
replace or accompany `label` as the task requires; `mask` holds 0/1.
"""
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
from pydantic import BaseModel, ValidationError

from models.config import TaskKind, TaskSpec
from tasks.dataset import Batch, Example, TaskData, TaskSplits
from utils.errors import ConfigurationError, InputError
from utils.validators import validation_error_paths


class ExampleLine(BaseModel):
    kind: TaskKind
    ids: List[int]
    mask: List[int]
    label: Optional[int] = None
    tags: Optional[List[int]] = None
    targets: Optional[List[int]] = None


def _listed(values) -> Optional[List[int]]:
    return None if values is None else [int(v) for v in values]


def dump_examples(path: Union[str, Path], data: TaskData) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for example in data.examples():
            line = ExampleLine(
                kind=data.kind,
                ids=_listed(example.ids),
                mask=_listed(example.mask),
                label=example.label,
                tags=_listed(example.tags),
                targets=_listed(example.targets),
            )
            handle.write(line.model_dump_json(exclude_none=True) + "\n")
    return path


def load_examples(path: Union[str, Path]) -> TaskData:
    path = Path(path)
    examples, kinds = [], set()
    with path.open(encoding="utf-8") as handle:
        for number, raw in enumerate(handle, start=1):
            if not raw.strip():
                continue
            try:
                line = ExampleLine.model_validate_json(raw)
            except ValidationError as err:
                raise InputError(f"{path}:{number}: " + "; ".join(validation_error_paths(err))) from None
            if len(line.ids) != len(line.mask):
                raise InputError(f"{path}:{number}: ids and mask lengths differ")
            kinds.add(line.kind)
            examples.append(Example(
                ids=np.asarray(line.ids, dtype=np.int64),
                mask=np.asarray(line.mask, dtype=bool),
                label=line.label,
                tags=None if line.tags is None else np.asarray(line.tags, dtype=np.int64),
                targets=None if line.targets is None else np.asarray(line.targets, dtype=np.int64),
            ))
    if len(kinds) > 1:
        raise InputError(f"{path} mixes task kinds {sorted(k.value for k in kinds)}")
    if not examples:
        raise InputError(f"{path} holds no examples")
    return Batch.from_examples(kinds.pop(), examples)


def load_splits(directory: Union[str, Path], spec: TaskSpec) -> TaskSplits:
    """train.jsonl and eval.jsonl from `directory`, checked against the configured task"""
    directory = Path(directory)
    splits = TaskSplits(load_examples(directory / "train.jsonl"), load_examples(directory / "eval.jsonl"))
    for name, data in (("train", splits.train), ("eval", splits.eval)):
        if data.kind != spec.kind:
            raise ConfigurationError(
                f"{name} split in {directory} is {data.kind.value}, config expects {spec.kind.value}"
            )
        if data.ids.shape[1] > spec.seq_len:
            raise ConfigurationError(
                f"{name} split in {directory} has sequences of length {data.ids.shape[1]}, config allows {spec.seq_len}"
            )
    return splits
