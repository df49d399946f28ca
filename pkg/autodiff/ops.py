"""Differentiable primitives used by the encoder, the losses and the attacks"""
import math
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np

from autodiff.tensor import Tensor, make_result
from utils.errors import ConfigurationError, InputError
from utils.validators import (
    validate_axis,
    validate_broadcastable,
    validate_matmul,
    validate_same_shape,
)

# large negative logit used for masked attention scores
MASK_VALUE = -1e9
LAYER_NORM_EPS = 1e-12

PRIMITIVES: Dict[str, Callable] = {}

Axis = Optional[Union[int, Tuple[int, ...]]]


def primitive(name: str):
    """Register an op so the gradient checker can enumerate it"""
    def register(fn):
        PRIMITIVES[name] = fn
        return fn
    return register


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to an operand's shape"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


@primitive("add")
def add(a: Tensor, b: Tensor) -> Tensor:
    validate_broadcastable("add", a.shape, b.shape)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return make_result("add", a.data + b.data, (a, b), backward)


@primitive("sub")
def sub(a: Tensor, b: Tensor) -> Tensor:
    validate_broadcastable("sub", a.shape, b.shape)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return make_result("sub", a.data - b.data, (a, b), backward)


@primitive("mul")
def mul(a: Tensor, b: Tensor) -> Tensor:
    validate_broadcastable("mul", a.shape, b.shape)

    def backward(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return make_result("mul", a.data * b.data, (a, b), backward)


@primitive("scale")
def scale(a: Tensor, factor: float) -> Tensor:
    def backward(g):
        return (g * factor,)

    return make_result("scale", a.data * factor, (a,), backward)


@primitive("matmul")
def matmul(a: Tensor, b: Tensor) -> Tensor:
    validate_matmul(a.shape, b.shape)

    def backward(g):
        grad_a = unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        grad_b = unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return grad_a, grad_b

    return make_result("matmul", a.data @ b.data, (a, b), backward)


@primitive("reshape")
def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ConfigurationError(f"reshape: cannot reshape {a.shape} into {shape}") from None

    def backward(g):
        return (g.reshape(a.shape),)

    return make_result("reshape", data, (a,), backward)


@primitive("transpose")
def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(int(x) for x in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ConfigurationError(f"transpose: axes {axes} invalid for shape {a.shape}")
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (g.transpose(inverse),)

    return make_result("transpose", a.data.transpose(axes), (a,), backward)


@primitive("softmax")
def softmax(a: Tensor, axis: int = -1) -> Tensor:
    validate_axis("softmax", a.shape, axis)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=axis, keepdims=True)

    def backward(g):
        return (probs * (g - (g * probs).sum(axis=axis, keepdims=True)),)

    return make_result("softmax", probs, (a,), backward)


@primitive("layer_norm")
def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize over the last axis, then apply the learned gain and bias"""
    features = x.shape[-1]
    validate_same_shape("layer_norm", gain.shape, bias.shape, (features,))
    centered = x.data - x.data.mean(axis=-1, keepdims=True)
    variance = (centered ** 2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(variance + eps)
    normed = centered * inv_std

    def backward(g):
        grad_normed = g * gain.data
        grad_x = inv_std / features * (
            features * grad_normed
            - grad_normed.sum(axis=-1, keepdims=True)
            - normed * (grad_normed * normed).sum(axis=-1, keepdims=True)
        )
        grad_gain = unbroadcast(g * normed, gain.shape)
        grad_bias = unbroadcast(g, bias.shape)
        return grad_x, grad_gain, grad_bias

    return make_result("layer_norm", normed * gain.data + bias.data, (x, gain, bias), backward)


_GELU_C = math.sqrt(2.0 / math.pi)


@primitive("gelu")
def gelu(x: Tensor) -> Tensor:
    """tanh form of the Gaussian error linear unit"""
    inner = _GELU_C * (x.data + 0.044715 * x.data ** 3)
    tanh = np.tanh(inner)

    def backward(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x.data ** 2)
        local = 0.5 * (1.0 + tanh) + 0.5 * x.data * (1.0 - tanh ** 2) * d_inner
        return (g * local,)

    return make_result("gelu", 0.5 * x.data * (1.0 + tanh), (x,), backward)


@primitive("embedding")
def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather table rows by integer id"""
    ids = np.asarray(ids)
    if table.ndim != 2:
        raise ConfigurationError(f"embedding: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise InputError(f"embedding: ids outside [0, {table.shape[0]})")

    def backward(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, ids, g)
        return (grad,)

    return make_result("embedding", table.data[ids], (table,), backward)


@primitive("masked_fill")
def masked_fill(a: Tensor, mask: np.ndarray, value: float = MASK_VALUE) -> Tensor:
    """Replace entries where mask is true by a constant"""
    mask = np.asarray(mask, dtype=bool)
    validate_broadcastable("masked_fill", a.shape, mask.shape)
    if np.broadcast_shapes(a.shape, mask.shape) != a.shape:
        raise ConfigurationError(f"masked_fill: mask {mask.shape} would grow tensor {a.shape}")

    def backward(g):
        return (np.where(mask, 0.0, g),)

    return make_result("masked_fill", np.where(mask, value, a.data), (a,), backward)


@primitive("concat")
def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    reference = list(tensors[0].shape)
    validate_axis("concat", reference, axis)
    for tensor in tensors[1:]:
        other = list(tensor.shape)
        if len(other) != len(reference) or any(
            r != o for i, (r, o) in enumerate(zip(reference, other)) if i != axis % len(reference)
        ):
            raise ConfigurationError(
                f"concat: shapes {[t.shape for t in tensors]} differ off axis {axis}"
            )
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result("concat", np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


@primitive("slice")
def getitem(a: Tensor, index) -> Tensor:
    """Basic or integer-array indexing; duplicate indices accumulate"""
    try:
        data = a.data[index]
    except IndexError as err:
        raise ConfigurationError(f"slice: {err} for shape {a.shape}") from None

    def backward(g):
        grad = np.zeros_like(a.data)
        np.add.at(grad, index, g)
        return (grad,)

    return make_result("slice", np.array(data, dtype=np.float64), (a,), backward)


def _normalize_axis(shape, axis: Axis) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(len(shape)))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    for ax in axes:
        validate_axis("reduce", shape, ax)
    return tuple(ax % len(shape) for ax in axes)


def _expand_reduced(g: np.ndarray, shape, axes, keepdims: bool) -> np.ndarray:
    if not keepdims:
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


@primitive("reduce_sum")
def reduce_sum(a: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axis(a.shape, axis)

    def backward(g):
        return (np.array(_expand_reduced(g, a.shape, axes, keepdims)),)

    return make_result("reduce_sum", np.asarray(a.data.sum(axis=axes, keepdims=keepdims)), (a,), backward)


@primitive("reduce_mean")
def reduce_mean(a: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axis(a.shape, axis)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1

    def backward(g):
        return (np.array(_expand_reduced(g, a.shape, axes, keepdims)) / count,)

    return make_result("reduce_mean", np.asarray(a.data.mean(axis=axes, keepdims=keepdims)), (a,), backward)


@primitive("reduce_min")
def reduce_min(a: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Minimum along one axis; the gradient goes to the first minimizer"""
    validate_axis("reduce_min", a.shape, axis)
    winners = np.expand_dims(np.argmin(a.data, axis=axis), axis)
    data = np.take_along_axis(a.data, winners, axis=axis)
    if not keepdims:
        data = np.squeeze(data, axis=axis)

    def backward(g):
        grad = np.zeros_like(a.data)
        g = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(grad, winners, g, axis=axis)
        return (grad,)

    return make_result("reduce_min", np.asarray(data), (a,), backward)
