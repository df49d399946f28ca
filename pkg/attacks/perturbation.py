"""Perturbations on embedded batches: seeded init, Frobenius-ball projection, PGD ascent"""
import logging
from dataclasses import dataclass

import numpy as np

from utils.errors import ConfigurationError

logger = logging.getLogger(__name__)

GRAD_NORM_EPS = 1e-12


@dataclass
class Perturbation:
    """delta shaped batch x seq x d, zero wherever mask is false"""
    delta: np.ndarray
    mask: np.ndarray

    @classmethod
    def zeros(cls, shape, mask: np.ndarray) -> "Perturbation":
        return cls(np.zeros(shape), np.asarray(mask, dtype=bool))

    def norms(self) -> np.ndarray:
        return example_norms(self.delta)

    def copy(self) -> "Perturbation":
        return Perturbation(self.delta.copy(), self.mask.copy())


def example_norms(values: np.ndarray) -> np.ndarray:
    """Frobenius norm of each example (leading axis)"""
    return np.sqrt((values.reshape(values.shape[0], -1) ** 2).sum(axis=1))


def _zero_padding(delta: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return np.where(mask[..., None], delta, 0.0)


def project(perturbation: Perturbation, epsilon: float) -> Perturbation:
    """Scale each example back onto the epsilon ball when it lies outside"""
    if epsilon <= 0:
        raise ConfigurationError(f"decision boundary must be positive, got {epsilon}")
    delta = _zero_padding(perturbation.delta, perturbation.mask)
    norms = example_norms(delta)
    outside = norms > epsilon
    factors = np.ones_like(norms)
    factors[outside] = epsilon / norms[outside]
    return Perturbation(delta * factors[:, None, None], perturbation.mask)


def init_perturbation(shape, mask: np.ndarray, epsilon: float, seed: int) -> Perturbation:
    """Uniform entries in +-epsilon/sqrt(seq*d), padding zeroed, then projected"""
    if epsilon <= 0:
        raise ConfigurationError(f"decision boundary must be positive, got {epsilon}")
    batch, seq, width = shape
    bound = epsilon / np.sqrt(seq * width)
    rng = np.random.default_rng(seed)
    delta = rng.uniform(-bound, bound, size=(batch, seq, width))
    return project(Perturbation(delta, np.asarray(mask, dtype=bool)), epsilon)


def pgd_step(perturbation: Perturbation, grad: np.ndarray, alpha: float, epsilon: float) -> Perturbation:
    """delta + alpha * grad / |grad| per example, then projection"""
    grad = _zero_padding(grad, perturbation.mask)
    norms = example_norms(grad)
    if not norms.any():
        logger.warning("all-zero attack gradient; perturbation left unchanged")
        return perturbation.copy()
    flat = norms == 0
    if flat.any():
        logger.warning("zero attack gradient for %d example(s); those stay unchanged", int(flat.sum()))
    direction = grad / (norms + GRAD_NORM_EPS)[:, None, None]
    stepped = Perturbation(perturbation.delta + alpha * direction, perturbation.mask)
    return project(stepped, epsilon)
