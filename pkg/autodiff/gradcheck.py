"""Central finite-difference checks of the analytic gradients"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from autodiff import losses, ops
from autodiff.ops import PRIMITIVES
from autodiff.tensor import Graph, Tensor, backward

logger = logging.getLogger(__name__)

FD_STEP = 1e-5
TOLERANCE = 1e-5

BuildFn = Callable[[List[Tensor]], Tensor]


@dataclass
class GradCase:
    """A scalar function of some input arrays whose gradient is checked"""
    name: str
    inputs: List[np.ndarray]
    build: BuildFn
    # inputs held constant (no gradient is checked for them)
    constant: Sequence[int] = ()
    # cap on checked coordinates per input; None checks every entry
    max_coords: Optional[int] = None
    tolerance: float = TOLERANCE
    names: Sequence[str] = field(default_factory=tuple)


@dataclass
class GradCheckOutcome:
    name: str
    max_relative_error: float
    checked_coordinates: int
    passed: bool
    worst_input: str = ""


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / scale)


def _evaluate(case: GradCase, arrays: List[np.ndarray]) -> float:
    return case.build([Tensor(a) for a in arrays]).item()


def check_case(case: GradCase, seed: int = 0, step: float = FD_STEP) -> GradCheckOutcome:
    """Compare backward() against central differences for one case"""
    tensors = [
        Tensor(a, requires_grad=i not in case.constant, name=_input_name(case, i))
        for i, a in enumerate(case.inputs)
    ]
    with Graph(case.name):
        loss = case.build(tensors)
    targets = [t for t in tensors if t.requires_grad]
    analytic = dict(zip((id(t) for t in targets), backward(loss, targets)))

    rng = np.random.default_rng(seed)
    worst, worst_name, checked = 0.0, "", 0
    for i, tensor in enumerate(tensors):
        if not tensor.requires_grad:
            continue
        flat_size = tensor.size
        if case.max_coords is None or flat_size <= case.max_coords:
            coords = np.arange(flat_size)
        else:
            coords = np.sort(rng.choice(flat_size, size=case.max_coords, replace=False))
        numeric = np.zeros(len(coords))
        for n, coord in enumerate(coords):
            arrays = [np.array(a, dtype=np.float64) for a in case.inputs]
            arrays[i].reshape(-1)[coord] += step
            upper = _evaluate(case, arrays)
            arrays[i].reshape(-1)[coord] -= 2 * step
            lower = _evaluate(case, arrays)
            numeric[n] = (upper - lower) / (2 * step)
        error = relative_error(analytic[id(tensor)].reshape(-1)[coords], numeric)
        checked += len(coords)
        if error >= worst:
            worst, worst_name = error, tensor.name
    passed = bool(worst <= case.tolerance)
    if not passed:
        logger.warning("gradient check failed for %s: relative error %.3e on %s", case.name, worst, worst_name)
    return GradCheckOutcome(case.name, worst, checked, passed, worst_name)


def _input_name(case: GradCase, index: int) -> str:
    return case.names[index] if index < len(case.names) else f"{case.name}[{index}]"


def _project(out: Tensor, weights: np.ndarray) -> Tensor:
    """Reduce a non-scalar output to a scalar with fixed random weights"""
    return ops.reduce_sum(ops.mul(out, Tensor(weights)))


def primitive_cases(seed: int = 0) -> Dict[str, GradCase]:
    """One case per registered primitive, keyed by registry name"""
    rng = np.random.default_rng(seed)
    normal = rng.standard_normal

    def weights(*shape):
        return normal(shape)

    w_2x3, w_3x3, w_2x4x3 = weights(2, 3), weights(3, 3), weights(2, 4, 3)
    w_2x3x3, w_2, w_3 = weights(2, 3, 3), weights(2), weights(3)
    mask = np.array([[False, True, False], [True, False, False]])
    ids = np.array([[0, 2, 2], [1, 3, 0]])
    labels = np.array([2, 0, 1])

    cases = [
        GradCase("add", [normal((2, 3)), normal((3,))], lambda t: _project(ops.add(t[0], t[1]), w_2x3)),
        GradCase("sub", [normal((2, 3)), normal((2, 1))], lambda t: _project(ops.sub(t[0], t[1]), w_2x3)),
        GradCase("mul", [normal((2, 3)), normal((2, 3))], lambda t: _project(ops.mul(t[0], t[1]), w_2x3)),
        GradCase("scale", [normal((2, 3))], lambda t: _project(ops.scale(t[0], -1.7), w_2x3)),
        GradCase("matmul", [normal((2, 4, 5)), normal((5, 3))], lambda t: _project(ops.matmul(t[0], t[1]), w_2x4x3)),
        GradCase("reshape", [normal((3, 2))], lambda t: _project(ops.reshape(t[0], (2, 3)), w_2x3)),
        GradCase("transpose", [normal((3, 2))], lambda t: _project(ops.transpose(t[0], (1, 0)), w_2x3)),
        GradCase("softmax", [normal((3, 3))], lambda t: _project(ops.softmax(t[0], axis=-1), w_3x3)),
        GradCase(
            "layer_norm", [normal((2, 3)), normal((3,)), normal((3,))],
            lambda t: _project(ops.layer_norm(t[0], t[1], t[2]), w_2x3),
        ),
        GradCase("gelu", [normal((2, 3))], lambda t: _project(ops.gelu(t[0]), w_2x3)),
        GradCase("embedding", [normal((4, 3))], lambda t: _project(ops.embedding(t[0], ids), w_2x3x3)),
        GradCase(
            "masked_fill", [normal((2, 3))],
            lambda t: _project(ops.softmax(ops.masked_fill(t[0], mask), axis=-1), w_2x3),
        ),
        GradCase(
            "concat", [normal((2, 1)), normal((2, 2))],
            lambda t: _project(ops.concat([t[0], t[1]], axis=1), w_2x3),
        ),
        GradCase("slice", [normal((4, 3))], lambda t: _project(ops.getitem(t[0], (np.array([0, 2]), slice(None))), w_2x3)),
        GradCase("reduce_sum", [normal((2, 3))], lambda t: _project(ops.reduce_sum(t[0], axis=0), w_3)),
        GradCase("reduce_mean", [normal((2, 3))], lambda t: _project(ops.reduce_mean(t[0], axis=1), w_2)),
        GradCase("reduce_min", [normal((2, 3))], lambda t: _project(ops.reduce_min(t[0], axis=1), w_2)),
        GradCase(
            "kl_divergence", [normal((2, 3)), normal((2, 3))],
            lambda t: _project(
                losses.kl_divergence(ops.softmax(t[0], axis=-1), ops.softmax(t[1], axis=-1)), w_2
            ),
        ),
        GradCase(
            "cosine_similarity", [normal((2, 3)), normal((2, 3))],
            lambda t: _project(losses.cosine_similarity(t[0], t[1]), w_2),
        ),
        GradCase(
            "cross_entropy", [normal((3, 3))],
            lambda t: _project(losses.cross_entropy(t[0], labels), w_3),
        ),
        GradCase(
            "frobenius_norm", [normal((2, 2, 3))],
            lambda t: _project(losses.frobenius_norm(t[0], axis=(1, 2)), w_2),
        ),
    ]
    return {case.name: case for case in cases}


def run_primitive_suite(seed: int = 0) -> List[GradCheckOutcome]:
    """Check every registered primitive; a primitive without a case fails"""
    cases = primitive_cases(seed)
    outcomes = []
    for name in sorted(PRIMITIVES):
        if name not in cases:
            logger.warning("no gradient case registered for primitive %s", name)
            outcomes.append(GradCheckOutcome(name, float("inf"), 0, False, "missing case"))
            continue
        outcomes.append(check_case(cases[name], seed=seed))
    return outcomes
