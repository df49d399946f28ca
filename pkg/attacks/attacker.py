"""Inner maximization: attack objectives and the PGD loop that optimizes them"""
import logging
from typing import List, Optional

import numpy as np

from attacks.perturbation import Perturbation, init_perturbation, pgd_step
from autodiff import losses, ops
from autodiff.tensor import Graph, Tensor, backward
from encoder.params import ModelParams
from encoder.transformer import DropoutMode, EncodeOutput, MiniTransformer
from models.config import AttackConfig, AttackMode, SimilarityAggregation
from tasks.dataset import Batch
from utils.errors import ConfigurationError, NumericalError

logger = logging.getLogger(__name__)

ASCENDING_MODES = (AttackMode.AT, AttackMode.CREAT, AttackMode.CREAT_MINUS)
ANCHORED_MODES = (AttackMode.CREAT, AttackMode.CREAT_MINUS)
PADDING_SIMILARITY = 2.0


def masked_mean_similarity(anchor: Tensor, perturbed: Tensor, mask: np.ndarray) -> Tensor:
    """Per-token cosine similarity, mean over real tokens, then over the batch"""
    mask = np.asarray(mask, dtype=bool)
    per_token = losses.cosine_similarity(anchor, perturbed, axis=-1)
    weights = mask / mask.sum(axis=1, keepdims=True)
    per_example = ops.reduce_sum(ops.mul(per_token, Tensor(weights)), axis=1)
    return ops.reduce_mean(per_example)


def masked_min_similarity(anchor: Tensor, perturbed: Tensor, mask: np.ndarray) -> Tensor:
    """Per example, the least similar real token, then the batch mean"""
    mask = np.asarray(mask, dtype=bool)
    per_token = losses.cosine_similarity(anchor, perturbed, axis=-1)
    # padding can never be the minimum
    per_token = ops.masked_fill(per_token, ~mask, PADDING_SIMILARITY)
    return ops.reduce_mean(ops.reduce_min(per_token, axis=1))


def flattened_similarity(anchor: Tensor, perturbed: Tensor, mask: np.ndarray) -> Tensor:
    """Cosine between each example's real-token matrices read as one vector"""
    mask = np.asarray(mask, dtype=bool)
    batch = mask.shape[0]
    keep = Tensor(mask[..., None].astype(np.float64))
    a = ops.reshape(ops.mul(anchor, keep), (batch, -1))
    b = ops.reshape(ops.mul(perturbed, keep), (batch, -1))
    return ops.reduce_mean(losses.cosine_similarity(a, b, axis=-1))


SIMILARITY_AGGREGATIONS = {
    SimilarityAggregation.MEAN: masked_mean_similarity,
    SimilarityAggregation.MIN: masked_min_similarity,
    SimilarityAggregation.FLATTENED: flattened_similarity,
}


def attack_objective(
    model: MiniTransformer,
    params: ModelParams,
    batch: Batch,
    x: Tensor,
    delta: Tensor,
    config: AttackConfig,
    anchor: Optional[EncodeOutput] = None,
) -> Tensor:
    """Scalar the attacker maximizes over delta.

    AT: task loss at x + delta. CreAT: AT term - tau * similarity to the
    benign representation. CreAT_minus: - similarity.
    """
    if config.mode not in ASCENDING_MODES:
        raise ConfigurationError(f"mode {config.mode.value} does not evaluate an attack objective")
    if config.mode == AttackMode.CREAT and config.temperature < 0:
        raise ConfigurationError(f"CreAT temperature must be non-negative, got {config.temperature}")
    if config.mode in ANCHORED_MODES and anchor is None:
        raise ConfigurationError(f"mode {config.mode.value} needs the benign representation as anchor")

    output = model.encode(ops.add(x, delta), batch.mask, params, DropoutMode.disabled())
    if config.mode == AttackMode.AT:
        return model.task_output(output, batch, params).loss

    aggregate = SIMILARITY_AGGREGATIONS[config.similarity_aggregation]
    similarity = aggregate(anchor.final_hidden.detach(), output.final_hidden, batch.mask)
    if config.mode == AttackMode.CREAT_MINUS:
        return ops.scale(similarity, -1.0)
    task_loss = model.task_output(output, batch, params).loss
    return ops.sub(task_loss, ops.scale(similarity, config.temperature))


class PerturbationAttacker:
    def __init__(self, model: MiniTransformer, config: AttackConfig):
        self.model = model
        self.config = config
        # instrumentation
        self.backward_calls = 0
        self.last_trace: List[float] = []

    def benign_anchor(self, batch: Batch, params: ModelParams, x: Optional[Tensor] = None) -> EncodeOutput:
        """Dropout-free benign representation used as the constant anchor"""
        x = self.model.embed(batch.ids, params) if x is None else x
        return self.model.encode(x.detach(), batch.mask, params, DropoutMode.disabled())

    def objective_value(
        self,
        batch: Batch,
        params: ModelParams,
        perturbation: Perturbation,
        anchor: Optional[EncodeOutput] = None,
        x: Optional[Tensor] = None,
    ) -> float:
        """Untracked evaluation of the objective at a given perturbation"""
        x = self.model.embed(batch.ids, params) if x is None else x
        value = attack_objective(
            self.model, params, batch, x.detach(), Tensor(perturbation.delta), self.config, anchor
        )
        return value.item()

    def run_attack(
        self,
        batch: Batch,
        params: ModelParams,
        seed: int,
        anchor: Optional[EncodeOutput] = None,
        x: Optional[Tensor] = None,
    ) -> Perturbation:
        """init, then k rounds of adversarial forward, backward to delta, PGD step"""
        # attack graphs nest above any graph the caller has open; only delta is differentiated
        x = (self.model.embed(batch.ids, params) if x is None else x).detach()
        self.last_trace = []
        if self.config.mode == AttackMode.NONE:
            return Perturbation.zeros(x.shape, batch.mask)

        perturbation = init_perturbation(x.shape, batch.mask, self.config.decision_boundary, seed)
        steps = self.config.effective_steps
        if steps and self.config.mode in ANCHORED_MODES and anchor is None:
            anchor = self.benign_anchor(batch, params, x)

        for step in range(1, steps + 1):
            with Graph(f"attack-step-{step}"):
                delta = Tensor(perturbation.delta, requires_grad=True, name="delta")
                objective = attack_objective(self.model, params, batch, x, delta, self.config, anchor)
            value = objective.item()
            if not np.isfinite(value):
                raise NumericalError(f"attack objective is not finite at ascent step {step}", {"step": step})
            self.last_trace.append(value)
            (grad,) = backward(objective, [delta])
            self.backward_calls += 1
            perturbation = pgd_step(perturbation, grad, self.config.ascent_step_size, self.config.decision_boundary)
        return perturbation
