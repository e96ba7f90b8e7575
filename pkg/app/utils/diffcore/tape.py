from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple

import numpy as np
from scipy.special import expit, log_expit

from app.utils.exceptions import DaveError, NonFiniteError, ShapeError

PRIMITIVES = (
    "input", "matmul", "add", "mul", "relu", "sigmoid", "log", "exp", "sum", "mean",
    "neg", "scale", "shift", "log_sigmoid", "clamp",
)


@dataclass(frozen=True)
class Node:
    id: int
    op: str
    parents: Tuple[int, ...] = ()
    attrs: dict = field(default_factory=dict)
    name: Optional[str] = None
    requires_grad: bool = True


class Tape:
    """
    A static computation graph over dense float64 arrays.

    Nodes are appended in construction order, so parents always precede their
    children. Inputs are named; `forward` binds them and stores every node's
    value on the tape, `backward` walks the nodes once in reverse.

    A tape with bound values belongs to a single caller. Build a new tape per
    evaluation when working from several threads.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.values: Optional[list[np.ndarray]] = None
        self.inputs: Dict[str, int] = {}
        self.outputs: Dict[str, int] = {}

    # Graph construction
    def input(self, name: str, differentiable: bool = True) -> int:
        """Declare (or reuse) a named input. Reusing a name returns the same node."""
        if name in self.inputs:
            node = self.nodes[self.inputs[name]]
            if node.requires_grad != differentiable:
                raise ShapeError(f"input '{name}' redeclared with a different differentiable flag", node.id)
            return node.id
        node_id = self._push("input", (), name=name, requires_grad=differentiable)
        self.inputs[name] = node_id
        return node_id

    def constant(self, name: str) -> int:
        return self.input(name, differentiable=False)

    def output(self, name: str, node_id: int) -> int:
        self.outputs[name] = node_id
        return node_id

    def _push(self, op: str, parents: Tuple[int, ...], name: str = None, requires_grad: bool = None, **attrs) -> int:
        for parent in parents:
            if not 0 <= parent < len(self.nodes):
                raise ShapeError(f"op '{op}' refers to unknown parent {parent}", len(self.nodes))
        if requires_grad is None:
            requires_grad = any(self.nodes[p].requires_grad for p in parents)
        node = Node(id=len(self.nodes), op=op, parents=tuple(parents), attrs=attrs, name=name, requires_grad=requires_grad)
        self.nodes.append(node)
        return node.id

    def matmul(self, a: int, b: int) -> int:
        return self._push("matmul", (a, b))

    def add(self, a: int, b: int) -> int:
        return self._push("add", (a, b))

    def sub(self, a: int, b: int) -> int:
        return self.add(a, self.neg(b))

    def mul(self, a: int, b: int) -> int:
        return self._push("mul", (a, b))

    def relu(self, a: int) -> int:
        return self._push("relu", (a,))

    def sigmoid(self, a: int) -> int:
        return self._push("sigmoid", (a,))

    def log_sigmoid(self, a: int) -> int:
        return self._push("log_sigmoid", (a,))

    def log(self, a: int) -> int:
        return self._push("log", (a,))

    def exp(self, a: int) -> int:
        return self._push("exp", (a,))

    def sum(self, a: int) -> int:
        return self._push("sum", (a,))

    def mean(self, a: int) -> int:
        return self._push("mean", (a,))

    def neg(self, a: int) -> int:
        return self._push("neg", (a,))

    def scale(self, a: int, factor: float) -> int:
        return self._push("scale", (a,), factor=float(factor))

    def shift(self, a: int, offset: float) -> int:
        return self._push("shift", (a,), offset=float(offset))

    def clamp(self, a: int, low: float, high: float) -> int:
        return self._push("clamp", (a,), low=float(low), high=float(high))


def _bias_compatible(a: np.ndarray, b: np.ndarray) -> bool:
    # Only broadcast allowed: a (rows, cols) plus b (cols,) or (1, cols)
    return a.ndim == 2 and b.shape in ((a.shape[1],), (1, a.shape[1]))


def _forward_node(node: Node, args: list) -> np.ndarray:
    op = node.op
    if op == "matmul":
        a, b = args
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul of {a.shape} and {b.shape}", node.id)
        return a @ b
    if op == "add":
        a, b = args
        if a.shape != b.shape and not _bias_compatible(a, b):
            raise ShapeError(f"add of {a.shape} and {b.shape}", node.id)
        return a + b
    if op == "mul":
        a, b = args
        if a.shape != b.shape:
            raise ShapeError(f"mul of {a.shape} and {b.shape}", node.id)
        return a * b
    (x,) = args
    if op == "relu":
        return np.where(x > 0.0, x, 0.0)
    if op == "sigmoid":
        return expit(x)
    if op == "log_sigmoid":
        return log_expit(x)
    if op == "log":
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(x)
    if op == "exp":
        with np.errstate(over="ignore"):
            return np.exp(x)
    if op == "sum":
        return np.asarray(x.sum())
    if op == "mean":
        return np.asarray(x.mean())
    if op == "neg":
        return -x
    if op == "scale":
        return x * node.attrs["factor"]
    if op == "shift":
        return x + node.attrs["offset"]
    if op == "clamp":
        return np.clip(x, node.attrs["low"], node.attrs["high"])
    raise ShapeError(f"unknown primitive '{op}'", node.id)


def _vjp(node: Node, grad: np.ndarray, args: list, out: np.ndarray) -> list:
    op = node.op
    if op == "matmul":
        a, b = args
        return [grad @ b.T, a.T @ grad]
    if op == "add":
        a, b = args
        grad_b = grad if a.shape == b.shape else grad.sum(axis=0).reshape(b.shape)
        return [grad, grad_b]
    if op == "mul":
        a, b = args
        return [grad * b, grad * a]
    (x,) = args
    if op == "relu":
        return [grad * (x > 0.0)]
    if op == "sigmoid":
        return [grad * out * (1.0 - out)]
    if op == "log_sigmoid":
        return [grad * expit(-x)]
    if op == "log":
        return [grad / x]
    if op == "exp":
        return [grad * out]
    if op == "sum":
        return [np.broadcast_to(grad, x.shape).copy()]
    if op == "mean":
        return [np.broadcast_to(grad / x.size, x.shape).copy()]
    if op == "neg":
        return [-grad]
    if op == "scale":
        return [grad * node.attrs["factor"]]
    if op == "shift":
        return [grad]
    if op == "clamp":
        inside = (x >= node.attrs["low"]) & (x <= node.attrs["high"])
        return [grad * inside]
    raise ShapeError(f"no gradient rule for '{op}'", node.id)


def forward(tape: Tape, inputs: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
    """
    Evaluate every node of the tape and bind the values to it.

    Args:
        tape (Tape): The graph to evaluate.
        inputs (Mapping[str, np.ndarray]): A value for every declared input name.

    Returns:
        Dict[str, np.ndarray]: Values of the nodes registered with `tape.output`.

    Raises:
        ShapeError: On an unbound input or incompatible shapes, naming the node.
        NonFiniteError: If a node produces NaN or Inf.
    """
    values: list[np.ndarray] = []
    for node in tape.nodes:
        if node.op == "input":
            if node.name not in inputs:
                raise ShapeError(f"input '{node.name}' is not bound", node.id)
            value = np.asarray(inputs[node.name], dtype=np.float64)
        else:
            value = _forward_node(node, [values[p] for p in node.parents])
        if not np.all(np.isfinite(value)):
            label = node.name or node.op
            raise NonFiniteError(f"non-finite value produced by '{label}'", node.id)
        values.append(value)
    tape.values = values
    return {name: values[node_id] for name, node_id in tape.outputs.items()}


def backward(tape: Tape, loss_node: int) -> Dict[str, np.ndarray]:
    """
    Reverse-mode pass from a scalar node.

    Args:
        tape (Tape): A tape on which `forward` has run.
        loss_node (int): Id of a single-element node.

    Returns:
        Dict[str, np.ndarray]: d(loss)/d(input) for every differentiable input,
        zeros for inputs the loss does not depend on.

    Raises:
        DaveError: If forward has not been executed.
        ShapeError: If the loss node is not scalar.
    """
    if tape.values is None:
        raise DaveError("backward called before forward")
    values = tape.values
    loss = values[loss_node]
    if loss.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}", loss_node)

    adjoints: list[Optional[np.ndarray]] = [None] * len(tape.nodes)
    adjoints[loss_node] = np.ones_like(loss)
    for node in reversed(tape.nodes[: loss_node + 1]):
        grad = adjoints[node.id]
        if grad is None or node.op == "input" or not node.requires_grad:
            continue
        args = [values[p] for p in node.parents]
        for parent, parent_grad in zip(node.parents, _vjp(node, grad, args, values[node.id])):
            if not tape.nodes[parent].requires_grad:
                continue
            adjoints[parent] = parent_grad if adjoints[parent] is None else adjoints[parent] + parent_grad

    grads = {}
    for name, node_id in tape.inputs.items():
        if not tape.nodes[node_id].requires_grad:
            continue
        grad = adjoints[node_id]
        grads[name] = np.zeros_like(values[node_id]) if grad is None else grad.reshape(values[node_id].shape)
    return grads
