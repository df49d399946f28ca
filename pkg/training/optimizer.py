"""Decoupled-weight-decay Adam with a linear warmup/decay schedule and global clipping"""
from dataclasses import dataclass, field
from typing import Dict, Iterable

import numpy as np

from autodiff.tensor import Tensor
from encoder.params import ModelParams
from models.config import TrainConfig

BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-8
# parameters matching these suffixes are never decayed
NO_DECAY = (".bias", ".gain")


def warmup_steps(max_steps: int, warmup_proportion: float) -> int:
    return int(warmup_proportion * max_steps)


def lr_at(update: int, base_lr: float, max_steps: int, warmup_proportion: float) -> float:
    """Learning rate for the update with 0-based index `update`"""
    warmup = warmup_steps(max_steps, warmup_proportion)
    if update < warmup:
        return base_lr * update / warmup
    return base_lr * max(0.0, (max_steps - update) / max(1, max_steps - warmup))


def global_grad_norm(tensors: Iterable[Tensor]) -> float:
    return float(np.sqrt(sum(float((t.grad ** 2).sum()) for t in tensors)))


def clip_grad_norm(tensors: Iterable[Tensor], max_norm: float) -> float:
    """Rescale gradients in place so their joint norm is at most max_norm; returns the norm before clipping"""
    tensors = list(tensors)
    norm = global_grad_norm(tensors)
    if norm > max_norm:
        factor = max_norm / norm
        for t in tensors:
            t.grad = t.grad * factor
    return norm


@dataclass
class OptimizerState:
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    # number of updates applied so far
    step: int = 0


class AdamW:
    def __init__(self, params: ModelParams, config: TrainConfig):
        self.params = params
        self.config = config
        self.state = OptimizerState()
        self.reset_moments()

    def reset_moments(self):
        """Zero moments for every current tensor, keeping the step counter"""
        for name, tensor in self.params.named().items():
            self.state.first_moment[name] = np.zeros_like(tensor.data)
            self.state.second_moment[name] = np.zeros_like(tensor.data)

    def current_lr(self) -> float:
        return lr_at(self.state.step, self.config.learning_rate, self.config.max_steps, self.config.warmup_proportion)

    def step(self) -> float:
        """Apply one update from the accumulated gradients; returns the learning rate used"""
        lr = self.current_lr()
        self.state.step += 1
        t = self.state.step
        correction1 = 1.0 - BETA1 ** t
        correction2 = 1.0 - BETA2 ** t

        for name, tensor in self.params.named().items():
            grad = tensor.grad
            m = BETA1 * self.state.first_moment[name] + (1.0 - BETA1) * grad
            v = BETA2 * self.state.second_moment[name] + (1.0 - BETA2) * grad ** 2
            self.state.first_moment[name] = m
            self.state.second_moment[name] = v

            update = (m / correction1) / (np.sqrt(v / correction2) + ADAM_EPS)
            data = tensor.data
            if not name.endswith(NO_DECAY):
                data = data - lr * self.config.weight_decay * data
            # fresh array: graphs may still hold the old values read-only
            tensor.data = data - lr * update
        return lr
