"""Define-by-run tensors and the operation tape they are recorded on"""
import logging
import threading
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from utils.errors import GraphError

logger = logging.getLogger(__name__)

BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class Tensor:
    """Dense float64 array that can take part in a recorded computation"""

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self._grad = None

    @classmethod
    def wrap(cls, array: np.ndarray, requires_grad: bool = False, name: Optional[str] = None) -> "Tensor":
        """Wrap an array produced by an op without copying it"""
        tensor = cls.__new__(cls)
        tensor.data = np.asarray(array, dtype=np.float64)
        tensor.requires_grad = requires_grad
        tensor.name = name
        tensor._grad = None
        return tensor

    @property
    def grad(self) -> Optional[np.ndarray]:
        if not self.requires_grad:
            return None
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value: Optional[np.ndarray]):
        self._grad = None if value is None else np.asarray(value, dtype=np.float64)

    def zero_grad(self):
        self._grad = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        """Constant view of the same values, never recorded"""
        return Tensor.wrap(self.data, requires_grad=False, name=self.name)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # operator sugar, resolved lazily to keep ops importing this module
    def __add__(self, other):
        from autodiff import ops
        return ops.add(self, as_tensor(other))

    def __radd__(self, other):
        from autodiff import ops
        return ops.add(as_tensor(other), self)

    def __sub__(self, other):
        from autodiff import ops
        return ops.sub(self, as_tensor(other))

    def __rsub__(self, other):
        from autodiff import ops
        return ops.sub(as_tensor(other), self)

    def __mul__(self, other):
        from autodiff import ops
        if np.isscalar(other):
            return ops.scale(self, float(other))
        return ops.mul(self, as_tensor(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        from autodiff import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from autodiff import ops
        return ops.matmul(self, as_tensor(other))

    def reshape(self, *shape):
        from autodiff import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from autodiff import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes)

    def sum(self, axis=None, keepdims: bool = False):
        from autodiff import ops
        return ops.reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        from autodiff import ops
        return ops.reduce_mean(self, axis=axis, keepdims=keepdims)

    def __getitem__(self, index):
        from autodiff import ops
        return ops.getitem(self, index)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


@dataclass
class Node:
    op: str
    output: Tensor
    inputs: Tuple[Tensor, ...]
    backward: BackwardFn


class Graph:
    """Append-only record of the operations of one forward pass.

    Use as a context manager; ops executed inside the block with at least one
    input that requires a gradient are appended in execution order, which is
    also the topological order. Outside any graph ops run untracked.
    """

    _local = threading.local()

    def __init__(self, name: str = "graph"):
        self.name = name
        self.nodes: List[Node] = []
        self._members: Dict[int, Tensor] = {}

    def __enter__(self) -> "Graph":
        stack = getattr(Graph._local, "stack", None)
        if stack is None:
            stack = Graph._local.stack = []
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        Graph._local.stack.pop()
        return False

    @classmethod
    def active(cls) -> Optional["Graph"]:
        stack = getattr(cls._local, "stack", None)
        return stack[-1] if stack else None

    def record(self, op: str, output: Tensor, inputs: Sequence[Tensor], backward: BackwardFn):
        for tensor in inputs:
            # values read by a recorded op are frozen for the rest of this graph
            tensor.data.flags.writeable = False
            self._members[id(tensor)] = tensor
        self._members[id(output)] = output
        self.nodes.append(Node(op, output, tuple(inputs), backward))

    def __contains__(self, tensor: Tensor) -> bool:
        return self._members.get(id(tensor)) is tensor

    def __len__(self) -> int:
        return len(self.nodes)


def make_result(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward: BackwardFn) -> Tensor:
    """Wrap an op's output and record it on the active graph when needed"""
    graph = Graph.active()
    tracked = graph is not None and any(t.requires_grad for t in inputs)
    output = Tensor.wrap(data, requires_grad=tracked)
    if tracked:
        output._graph = graph
        graph.record(op, output, inputs, backward)
    return output


def _describe(tensor: Tensor) -> str:
    return tensor.name or f"<unnamed tensor shape={tensor.shape}>"


def backward(loss: Tensor, targets: Iterable[Tensor]) -> List[np.ndarray]:
    """Accumulate d(loss)/d(target) into each target's grad.

    Nodes are visited in exact reverse record order; only nodes downstream of
    a target are differentiated, so tensors outside `targets` never see
    their accumulators touched. Returns the gradients of this call, aligned
    with `targets`.
    """
    targets = list(targets)
    if loss.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    graph: Optional[Graph] = getattr(loss, "_graph", None)
    if graph is None:
        raise GraphError(f"loss {_describe(loss)} was not produced by a recorded graph")
    for target in targets:
        if target not in graph:
            raise GraphError(f"target {_describe(target)} does not participate in graph '{graph.name}'")

    target_ids = {id(t) for t in targets}
    relevant = set(target_ids)
    for node in graph.nodes:
        if any(id(t) in relevant for t in node.inputs):
            relevant.add(id(node.output))

    collected: Dict[int, np.ndarray] = {}
    pending: Dict[int, np.ndarray] = {}
    if id(loss) in relevant:
        pending[id(loss)] = np.ones_like(loss.data)
    for node in reversed(graph.nodes):
        grad_out = pending.pop(id(node.output), None)
        if grad_out is None:
            continue
        if id(node.output) in target_ids:
            collected[id(node.output)] = grad_out
        input_grads = node.backward(grad_out)
        for tensor, grad in zip(node.inputs, input_grads):
            if grad is None or id(tensor) not in relevant:
                continue
            key = id(tensor)
            pending[key] = grad if key not in pending else pending[key] + grad
    collected.update({k: v for k, v in pending.items() if k in target_ids})

    results = []
    for target in targets:
        grad = collected.get(id(target))
        if grad is None:
            grad = np.zeros_like(target.data)
        if target.requires_grad:
            target.grad = target.grad + grad
        results.append(grad)
    return results
