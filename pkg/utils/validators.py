"""Validation utilities for tensor ops and configuration files"""
from typing import List, Sequence

import numpy as np
from pydantic import ValidationError

from utils.errors import ConfigurationError, InputError


def validate_same_shape(op_name: str, *shapes: Sequence[int]):
    """Validate that every operand has the same shape"""
    first = tuple(shapes[0])
    for shape in shapes[1:]:
        if tuple(shape) != first:
            raise ConfigurationError(
                f"{op_name}: shape mismatch {' vs '.join(str(tuple(s)) for s in shapes)}"
            )
    return True


def validate_broadcastable(op_name: str, a_shape: Sequence[int], b_shape: Sequence[int]):
    """Validate that two shapes broadcast under numpy rules"""
    try:
        np.broadcast_shapes(tuple(a_shape), tuple(b_shape))
    except ValueError:
        raise ConfigurationError(
            f"{op_name}: shapes {tuple(a_shape)} and {tuple(b_shape)} do not broadcast"
        ) from None
    return True


def validate_matmul(a_shape: Sequence[int], b_shape: Sequence[int]):
    """Validate inner dimensions and batch dimensions of a matrix product"""
    if len(a_shape) < 2 or len(b_shape) < 2 or a_shape[-1] != b_shape[-2]:
        raise ConfigurationError(
            f"matmul: cannot multiply {tuple(a_shape)} by {tuple(b_shape)}"
        )
    validate_broadcastable("matmul", a_shape[:-2], b_shape[:-2])
    return True


def validate_axis(op_name: str, shape: Sequence[int], axis: int):
    """Validate that an axis exists for the given shape"""
    if not -len(shape) <= axis < len(shape):
        raise ConfigurationError(f"{op_name}: axis {axis} out of range for shape {tuple(shape)}")
    return True


def validate_token_ids(ids: np.ndarray, vocab_size: int):
    """Validate token ids against the vocabulary, naming the first bad position"""
    bad = np.argwhere((ids < 0) | (ids >= vocab_size))
    if bad.size:
        position = tuple(int(i) for i in bad[0])
        raise InputError(
            f"token id {int(ids[position])} at position {position} outside vocabulary of size {vocab_size}"
        )
    return True


def validate_mask(mask: np.ndarray):
    """Validate that every example keeps at least one real token"""
    empty = np.flatnonzero(~mask.reshape(mask.shape[0], -1).any(axis=1))
    if empty.size:
        raise InputError(f"example {int(empty[0])} has no real tokens")
    return True


def validation_error_paths(error: ValidationError) -> List[str]:
    """Flatten a pydantic ValidationError into 'field.path: message' lines"""
    lines = []
    for item in error.errors():
        path = ".".join(str(part) for part in item["loc"]) or "<root>"
        lines.append(f"{path}: {item['msg']}")
    return lines
