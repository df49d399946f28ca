"""Finite-difference cases over a whole toy model: parameter gradients of the
task loss and perturbation gradients of every attack objective."""
from typing import Dict, List, Tuple

import numpy as np

from attacks.attacker import attack_objective
from autodiff.gradcheck import GradCase, GradCheckOutcome, check_case
from autodiff.tensor import Tensor
from encoder.params import ModelParams, decoder_outputs, decoder_shapes, encoder_shapes
from encoder.transformer import DropoutMode, MiniTransformer
from models.config import AttackConfig, AttackMode, EncoderConfig, SimilarityAggregation, TaskKind, TaskSpec
from tasks.dataset import CLS_ID, Batch

# parameter tensors are sampled, delta is checked exhaustively
PARAM_COORDS = 16
CHECK_CONFIG = EncoderConfig(
    num_layers=2, hidden_size=32, num_heads=4, intermediate_size=64, vocab_size=16, max_seq_len=8, dropout_rate=0.0
)
CHECK_TASK = TaskSpec(vocab_size=16, seq_len=5, num_classes=3)
OBJECTIVE_CASES = [
    ("objective.AT.delta", AttackMode.AT, SimilarityAggregation.MEAN),
    ("objective.CreAT.delta", AttackMode.CREAT, SimilarityAggregation.MEAN),
    ("objective.CreAT.min.delta", AttackMode.CREAT, SimilarityAggregation.MIN),
    ("objective.CreAT.flattened.delta", AttackMode.CREAT, SimilarityAggregation.FLATTENED),
    ("objective.CreAT_minus.delta", AttackMode.CREAT_MINUS, SimilarityAggregation.MEAN),
]


def _check_params(seed: int) -> Tuple[List[str], List[np.ndarray], Batch]:
    # wider than the training init so every gradient is well above finite-difference noise
    rng = np.random.default_rng(seed)
    shapes = {
        **encoder_shapes(CHECK_CONFIG),
        **decoder_shapes(CHECK_CONFIG, CHECK_TASK.kind, decoder_outputs(CHECK_TASK)),
    }
    names, arrays = [], []
    for name, shape in shapes.items():
        if name.endswith(".gain"):
            value = 1.0 + 0.1 * rng.standard_normal(shape)
        elif name.endswith(".bias"):
            value = 0.1 * rng.standard_normal(shape)
        else:
            value = 0.3 * rng.standard_normal(shape)
        names.append(name)
        arrays.append(value)
    ids = rng.integers(CLS_ID + 1, CHECK_CONFIG.vocab_size - 1, size=(2, CHECK_TASK.seq_len))
    ids[:, 0] = CLS_ID
    mask = np.array([[True] * 5, [True, True, True, False, False]])
    ids[~mask] = 0
    batch = Batch(TaskKind.SEQUENCE_CLASSIFICATION, ids, mask, labels=np.array([2, 0]))
    return names, arrays, batch


def _assemble(names: List[str], tensors: List[Tensor]) -> ModelParams:
    params = ModelParams(CHECK_CONFIG, CHECK_TASK.kind, decoder_outputs(CHECK_TASK))
    for name, tensor in zip(names, tensors):
        target = params.decoder if name.startswith(params.decoder_prefix + ".") else params.encoder
        target[name] = tensor
    return params


def model_cases(seed: int = 0) -> Dict[str, GradCase]:
    model = MiniTransformer(CHECK_CONFIG)
    names, arrays, batch = _check_params(seed)
    frozen = _assemble(names, [Tensor(a) for a in arrays])
    x = model.embed(batch.ids, frozen)
    anchor = model.encode(x, batch.mask, frozen)
    delta0 = np.where(batch.mask[..., None], 0.05 * np.random.default_rng(seed + 1).standard_normal(x.shape), 0.0)

    def task_loss(tensors: List[Tensor]) -> Tensor:
        params = _assemble(names, tensors)
        output = model.encode(model.embed(batch.ids, params), batch.mask, params, DropoutMode.disabled())
        return model.task_output(output, batch, params).loss

    cases = [GradCase("model.task_loss", arrays, task_loss, max_coords=PARAM_COORDS, names=names)]
    for name, mode, aggregation in OBJECTIVE_CASES:
        config = AttackConfig(mode=mode, temperature=1.0, similarity_aggregation=aggregation)

        def objective(tensors: List[Tensor], config=config) -> Tensor:
            return attack_objective(model, frozen, batch, x, tensors[0], config, anchor)

        cases.append(GradCase(name, [delta0], objective, names=("delta",)))
    return {case.name: case for case in cases}


def run_model_suite(seed: int = 0) -> List[GradCheckOutcome]:
    return [check_case(case, seed=seed) for case in model_cases(seed).values()]
