"""Fused divergence, similarity and loss primitives"""
import numpy as np

from autodiff.ops import primitive
from autodiff.tensor import Tensor, make_result
from utils.errors import InputError
from utils.validators import validate_same_shape

# floor applied to p before the log of a KL term
KL_FLOOR = 1e-12
# added to each norm in the cosine denominator
COSINE_EPS = 1e-12


@primitive("kl_divergence")
def kl_divergence(q: Tensor, p: Tensor, axis: int = -1) -> Tensor:
    """sum_i q_i ln(q_i / p_i) along `axis`, with 0 ln(0/p) = 0"""
    validate_same_shape("kl_divergence", q.shape, p.shape)
    support = q.data > 0
    clamped = np.maximum(p.data, KL_FLOOR)
    safe_q = np.where(support, q.data, 1.0)
    log_ratio = np.where(support, np.log(safe_q) - np.log(clamped), 0.0)
    value = (q.data * log_ratio).sum(axis=axis)

    def backward(g):
        g = np.expand_dims(g, axis)
        grad_q = np.where(support, log_ratio + 1.0, 0.0) * g
        grad_p = np.where(support & (p.data > KL_FLOOR), -q.data / clamped, 0.0) * g
        return grad_q, grad_p

    return make_result("kl_divergence", np.asarray(value), (q, p), backward)


@primitive("cosine_similarity")
def cosine_similarity(a: Tensor, b: Tensor, axis: int = -1) -> Tensor:
    """a.b / ((|a| + eps)(|b| + eps)) along `axis`"""
    validate_same_shape("cosine_similarity", a.shape, b.shape)
    norm_a = np.sqrt((a.data ** 2).sum(axis=axis, keepdims=True))
    norm_b = np.sqrt((b.data ** 2).sum(axis=axis, keepdims=True))
    denom_a = norm_a + COSINE_EPS
    denom_b = norm_b + COSINE_EPS
    dot = (a.data * b.data).sum(axis=axis, keepdims=True)
    value = dot / (denom_a * denom_b)

    def backward(g):
        g = np.expand_dims(g, axis)
        unit_a = np.divide(a.data, norm_a, out=np.zeros_like(a.data), where=norm_a > 0)
        unit_b = np.divide(b.data, norm_b, out=np.zeros_like(b.data), where=norm_b > 0)
        grad_a = (b.data / (denom_a * denom_b) - value / denom_a * unit_a) * g
        grad_b = (a.data / (denom_a * denom_b) - value / denom_b * unit_b) * g
        return grad_a, grad_b

    return make_result("cosine_similarity", np.squeeze(value, axis=axis), (a, b), backward)


@primitive("cross_entropy")
def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Per-row -log softmax(logits)[label], max-shifted for stability"""
    labels = np.asarray(labels, dtype=np.int64)
    num_classes = logits.shape[-1]
    validate_same_shape("cross_entropy", logits.shape[:-1], labels.shape)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise InputError(f"cross_entropy: labels outside [0, {num_classes})")
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_probs = shifted - log_norm
    picked = np.take_along_axis(log_probs, labels[..., None], axis=-1)[..., 0]

    def backward(g):
        grad = np.exp(log_probs)
        np.put_along_axis(grad, labels[..., None], np.take_along_axis(grad, labels[..., None], axis=-1) - 1.0, axis=-1)
        return (grad * g[..., None],)

    return make_result("cross_entropy", np.asarray(-picked), (logits,), backward)


@primitive("frobenius_norm")
def frobenius_norm(t: Tensor, axis=None) -> Tensor:
    """Square root of the sum of squares over `axis` (all axes by default)"""
    axes = tuple(range(t.ndim)) if axis is None else ((axis,) if isinstance(axis, int) else tuple(axis))
    norm = np.sqrt((t.data ** 2).sum(axis=axes, keepdims=True))

    def backward(g):
        g = np.expand_dims(g, axes) if np.ndim(g) < t.ndim else g
        unit = np.divide(t.data, norm, out=np.zeros_like(t.data), where=norm > 0)
        return (unit * g,)

    return make_result("frobenius_norm", np.squeeze(norm, axis=axes), (t,), backward)
