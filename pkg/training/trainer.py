"""Outer min-max loop: benign forward, attack, adversarial forward, mixed loss, update"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterator, List, Optional, Tuple

import numpy as np

from attacks.attacker import PerturbationAttacker
from attacks.perturbation import Perturbation
from autodiff import ops
from autodiff.tensor import Graph, Tensor, backward
from encoder.checkpoint import load_checkpoint
from encoder.params import ModelParams, init_params, reinit_decoder
from encoder.transformer import DropoutMode, MiniTransformer
from metrics.representation import build_record, early_phase_summary
from models.config import AttackConfig, EncoderConfig, ExperimentConfig, TrainConfig
from models.results import EvaluationResult, MetricsRecord, RunSummary
from tasks.dataset import Batch, TaskData, TaskSplits, endless_batches, iter_batches
from tasks.generators import generate_task
from training.optimizer import AdamW, clip_grad_norm
from utils.errors import ConfigurationError, InputError, NumericalError
from utils.seeding import (
    ADVERSARIAL_DROPOUT,
    BENIGN_DROPOUT,
    DATA_ORDER,
    EVAL_ATTACK,
    PERTURBATION_INIT,
    derive_seed,
    make_rng,
)

logger = logging.getLogger(__name__)

EVAL_BATCH_SIZE = 64


@dataclass
class StepResult:
    record: MetricsRecord
    perturbation: Perturbation
    grad_norm: float
    learning_rate: float


@dataclass
class TrainingRun:
    params: ModelParams
    records: List[MetricsRecord]
    summary: RunSummary
    evaluation: EvaluationResult
    train_evaluation: EvaluationResult
    model: Optional[MiniTransformer] = field(default=None, repr=False)


def mix_losses(benign_loss: Tensor, adv_loss: Tensor, mix_lambda: float) -> Tensor:
    """lambda * benign + (1 - lambda) * adversarial"""
    return ops.add(ops.scale(benign_loss, mix_lambda), ops.scale(adv_loss, 1.0 - mix_lambda))


class Trainer:
    """Owns one model, its parameters and optimizer for a single run"""

    def __init__(
        self,
        encoder_config: EncoderConfig,
        config: TrainConfig,
        params: Optional[ModelParams] = None,
        seed: Optional[int] = None,
    ):
        self.config = config
        self.seed = config.seed if seed is None else seed
        self.model = MiniTransformer(encoder_config)
        self.params = params if params is not None else init_params(encoder_config, self.seed, config.task)
        self.attacker = PerturbationAttacker(self.model, config.attack)
        self.optimizer = AdamW(self.params, config)

    @property
    def mode(self) -> str:
        return self.config.attack.mode.value

    def _dropout_modes(self, step: int):
        benign = DropoutMode.seeded(derive_seed(self.seed, step, BENIGN_DROPOUT))
        if self.config.share_dropout_mask:
            return benign, benign
        return benign, DropoutMode.seeded(derive_seed(self.seed, step, ADVERSARIAL_DROPOUT))

    def training_step(self, batch: Batch, step: int) -> StepResult:
        model, params, config = self.model, self.params, self.config
        benign_dropout, adv_dropout = self._dropout_modes(step)
        # metrics and the attack anchor always see dropout-free passes
        with_dropout = model.config.dropout_rate > 0
        benign_ref = self.attacker.benign_anchor(batch, params) if with_dropout else None

        params.zero_grad()
        with Graph(f"train-step-{step}"):
            x = model.embed(batch.ids, params)
            benign = model.encode(x, batch.mask, params, benign_dropout)
            benign_task = model.task_output(benign, batch, params)
            if benign_ref is None:
                benign_ref = benign

            perturbation = self.attacker.run_attack(
                batch, params, derive_seed(self.seed, step, PERTURBATION_INIT), anchor=benign_ref, x=x
            )
            delta = Tensor(perturbation.delta, name="delta*")
            adv = model.encode(ops.add(x, delta), batch.mask, params, adv_dropout)
            adv_task = model.task_output(adv, batch, params)
            total = mix_losses(benign_task.loss, adv_task.loss, config.mix_lambda)

        benign_loss, adv_loss, total_loss = benign_task.loss.item(), adv_task.loss.item(), total.item()
        if not np.isfinite(total_loss):
            diagnostics = {
                "step": step,
                "mode": self.mode,
                "benign_loss": benign_loss,
                "adv_loss": adv_loss,
                "delta_norm": float(perturbation.norms().max()),
            }
            logger.error("non-finite training loss, aborting: %s", diagnostics)
            raise NumericalError(f"non-finite total loss at step {step}", diagnostics)

        adv_ref = adv
        if with_dropout:
            # before the update, so both reference passes see the same parameters
            adv_ref = model.encode(ops.add(x.detach(), delta), batch.mask, params, DropoutMode.disabled())

        backward(total, params.tensors())
        grad_norm = clip_grad_norm(params.tensors(), config.gradient_clip)
        lr = self.optimizer.step()

        record = build_record(
            step=step,
            mode=self.mode,
            benign_loss=benign_loss,
            adv_loss=adv_loss,
            total_loss=total_loss,
            batch_accuracy=benign_task.correct / benign_task.total,
            benign=benign_ref,
            adv=adv_ref,
            delta=perturbation.delta,
        )
        return StepResult(record, perturbation, grad_norm, lr)


def initial_params(encoder_config: EncoderConfig, config: TrainConfig, seed: int) -> ModelParams:
    """Fresh parameters, or a checkpoint's encoder with a newly initialized decoder"""
    if config.init_checkpoint is None:
        return init_params(encoder_config, seed, config.task)
    params = load_checkpoint(config.init_checkpoint)
    if params.config != encoder_config:
        raise ConfigurationError(
            f"checkpoint {config.init_checkpoint} was trained with a different encoder config"
        )
    logger.info("loaded encoder from %s, decoder re-initialized for %s", config.init_checkpoint, config.task.kind.value)
    return reinit_decoder(params, seed, config.task)


def evaluate(
    model: MiniTransformer,
    params: ModelParams,
    data: TaskData,
    batch_size: int = EVAL_BATCH_SIZE,
    attack: Optional[AttackConfig] = None,
    seed: int = 0,
) -> EvaluationResult:
    """Dropout-free accuracy and mean loss; with `attack`, also under the attacker's perturbation"""
    if data is None or len(data) == 0:
        raise InputError("cannot evaluate on an empty set")
    attacker = PerturbationAttacker(model, attack) if attack is not None else None
    loss_sum = robust_loss_sum = 0.0
    correct = robust_correct = units = 0

    for index, batch in enumerate(iter_batches(data, batch_size)):
        x = model.embed(batch.ids, params)
        output = model.encode(x, batch.mask, params, DropoutMode.disabled())
        task = model.task_output(output, batch, params)
        loss_sum += task.loss.item() * task.total
        correct += task.correct
        units += task.total
        if attacker is not None:
            perturbation = attacker.run_attack(
                batch, params, derive_seed(seed, index, EVAL_ATTACK), anchor=output, x=x
            )
            adv = model.encode(ops.add(x, Tensor(perturbation.delta)), batch.mask, params, DropoutMode.disabled())
            robust = model.task_output(adv, batch, params)
            robust_loss_sum += robust.loss.item() * robust.total
            robust_correct += robust.correct

    result = EvaluationResult(accuracy=correct / units, loss=loss_sum / units, num_examples=len(data))
    if attacker is not None:
        result.robust_accuracy = robust_correct / units
        result.robust_loss = robust_loss_sum / units
    return result


def prepare_run(
    config: ExperimentConfig, seed: int, splits: Optional[TaskSplits] = None
) -> Tuple[Trainer, TaskSplits, Iterator[Batch]]:
    """Trainer, data and batch stream of a run; step n of the stream is step n of `train`"""
    splits = splits if splits is not None else generate_task(config.train.task)
    params = initial_params(config.encoder, config.train, seed)
    trainer = Trainer(config.encoder, config.train, params, seed)
    batches = endless_batches(splits.train, config.train.batch_size, make_rng(seed, DATA_ORDER))
    return trainer, splits, batches


def train(
    config: ExperimentConfig,
    seed: Optional[int] = None,
    on_record: Optional[Callable[[MetricsRecord], None]] = None,
    splits: Optional[TaskSplits] = None,
) -> TrainingRun:
    """Run max_steps training steps and evaluate; deterministic given the seed"""
    train_config = config.train
    seed = train_config.seed if seed is None else seed
    trainer, splits, batches = prepare_run(config, seed, splits)
    params = trainer.params

    logger.info(
        "training mode=%s seed=%d steps=%d lambda=%s",
        trainer.mode, seed, train_config.max_steps, train_config.mix_lambda,
    )
    records: List[MetricsRecord] = []
    for step in range(1, train_config.max_steps + 1):
        result = trainer.training_step(next(batches), step)
        records.append(result.record)
        if on_record is not None:
            on_record(result.record)
        if step % train_config.log_every == 0:
            record = result.record
            logger.info(
                "step %d: benign %.4f adv %.4f sim_lb %.4f acc %.3f lr %.2e",
                step, record.benign_loss, record.adv_loss, record.sim_lb, record.batch_accuracy, result.learning_rate,
            )

    model = trainer.model
    evaluation = evaluate(model, params, splits.eval, attack=train_config.eval_attack, seed=seed)
    train_evaluation = evaluate(model, params, splits.train)
    summary = RunSummary(
        mode=trainer.mode,
        seed=seed,
        max_steps=train_config.max_steps,
        **early_phase_summary(records, train_config.max_steps),
        final_train_accuracy=train_evaluation.accuracy,
        final_eval_accuracy=evaluation.accuracy,
        final_eval_loss=evaluation.loss,
        robust_eval_accuracy=evaluation.robust_accuracy,
        config=config.model_dump(mode="json"),
    )
    logger.info(
        "finished mode=%s seed=%d: train acc %.3f, eval acc %.3f",
        trainer.mode, seed, train_evaluation.accuracy, evaluation.accuracy,
    )
    return TrainingRun(params, records, summary, evaluation, train_evaluation, model)
