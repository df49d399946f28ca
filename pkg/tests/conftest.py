import numpy as np
import pytest

from encoder.params import init_params
from encoder.transformer import MiniTransformer
from models.config import EncoderConfig, ExperimentConfig, TaskKind, TaskSpec
from tasks.dataset import CLS_ID, Batch


@pytest.fixture
def tiny_encoder():
    return EncoderConfig(
        num_layers=2, hidden_size=8, num_heads=2, intermediate_size=16, vocab_size=16, max_seq_len=8, dropout_rate=0.0
    )


@pytest.fixture
def tiny_task():
    return TaskSpec(
        vocab_size=16, seq_len=6, min_seq_len=4, num_classes=2, num_train=32, num_eval=16, motif_length=2
    )


@pytest.fixture
def tiny_model(tiny_encoder):
    return MiniTransformer(tiny_encoder)


@pytest.fixture
def tiny_params(tiny_encoder, tiny_task):
    return init_params(tiny_encoder, seed=0, task=tiny_task)


@pytest.fixture
def tiny_batch():
    ids = np.array([
        [CLS_ID, 3, 4, 5, 6, 7],
        [CLS_ID, 8, 9, 10, 0, 0],
        [CLS_ID, 2, 0, 0, 0, 0],
    ])
    mask = ids != 0
    return Batch(TaskKind.SEQUENCE_CLASSIFICATION, ids, mask, labels=np.array([0, 1, 1]))


@pytest.fixture
def make_experiment(tiny_encoder, tiny_task):
    """Small ExperimentConfig with nested overrides for train and attack"""

    def build(mode="none", steps=6, encoder=None, task=None, **train_overrides):
        attack = {"mode": mode, "ascent_steps": 1}
        attack.update(train_overrides.pop("attack", {}))
        train = {
            "batch_size": 8,
            "max_steps": steps,
            "log_every": 2,
            "attack": attack,
            "task": (task or tiny_task).model_dump(mode="json"),
        }
        train.update(train_overrides)
        return ExperimentConfig.model_validate({
            "encoder": (encoder or tiny_encoder).model_dump(),
            "train": train,
        })

    return build
