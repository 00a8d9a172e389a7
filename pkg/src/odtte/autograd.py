"""Minimal reverse-mode automatic differentiation over numpy arrays.

Every differentiable operation returns a new ``Tensor`` that remembers its
parents and a backward rule (the local vector-Jacobian product). The graph is
rebuilt on every forward pass and consumed by ``backward``. All values are
float64.

    w = Parameter(np.array([3.0]), name="w")
    loss = (w * w).sum()
    grads = backward(loss)        # grads[w] == [6.0]
"""

import threading
from contextlib import contextmanager
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import AutogradError, ContractError, NumericalError, ShapeError

ArrayLike = Union[np.ndarray, float, int, Sequence]
BackwardRule = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Evaluate without recording parents or backward rules (thread-local)."""
    previous = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


def as_array(value: ArrayLike) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


class Tensor:
    """A recorded value: array, gradient slot, parents and backward rule."""

    __slots__ = ("value", "grad", "parents", "backward_rule", "requires_grad", "name")

    def __init__(
        self,
        value: ArrayLike,
        parents: Sequence["Tensor"] = (),
        backward_rule: Optional[BackwardRule] = None,
        requires_grad: bool = False,
        name: Optional[str] = None,
    ):
        self.value = as_array(value)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        tracked = bool(parents) and is_grad_enabled() and any(p.requires_grad for p in parents)
        self.requires_grad = requires_grad or tracked
        self.parents: Tuple["Tensor", ...] = tuple(parents) if tracked else ()
        self.backward_rule = backward_rule if tracked else None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        if self.value.size != 1:
            raise ShapeError(f"item() needs a single value, tensor has shape {self.shape}")
        return float(self.value.reshape(()))

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operators delegate to the functional forms below.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(lift(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ContractError("division is only defined by a constant")
        return mul(self, 1.0 / float(other))

    def sum(self) -> "Tensor":
        return total(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)


class Parameter(Tensor):
    """A trainable leaf. The optimizer replaces ``value`` between steps."""

    __slots__ = ()

    def __init__(self, value: ArrayLike, name: Optional[str] = None):
        super().__init__(np.array(value, dtype=np.float64), requires_grad=True, name=name)

    def zero_grad(self) -> None:
        self.grad = None


def lift(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def add(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    out = a.value + b.value

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor(out, (a, b), rule)


def sub(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    out = a.value - b.value

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor(out, (a, b), rule)


def mul(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    av, bv = a.value, b.value

    def rule(g):
        return _unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)

    return Tensor(av * bv, (a, b), rule)


def total(a: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    shape = a.shape

    def rule(g):
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor(a.value.sum(), (a,), rule)


def mean(a: Tensor) -> Tensor:
    return mul(total(a), 1.0 / a.size)


def square(a: Tensor) -> Tensor:
    av = a.value

    def rule(g):
        return (2.0 * av * g,)

    return Tensor(av * av, (a,), rule)


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    original = a.shape
    out = a.value.reshape(shape)

    def rule(g):
        return (g.reshape(original),)

    return Tensor(out, (a,), rule)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Rank-2 matrix product."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} and {b.shape} do not align")
    av, bv = a.value, b.value

    def rule(g):
        return g @ bv.T, av.T @ g

    return Tensor(av @ bv, (a, b), rule)


def _topological_order(root: Tensor) -> List[Tensor]:
    """Nodes reachable from ``root`` with every node after all of its parents."""
    order: List[Tensor] = []
    state: Dict[int, int] = {}  # 1 = on stack, 2 = done
    stack: List[Tuple[Tensor, int]] = [(root, 0)]
    while stack:
        node, index = stack.pop()
        key = id(node)
        if index == 0:
            if state.get(key) == 2:
                continue
            if state.get(key) == 1:
                raise AutogradError("cycle detected in recorded computation")
            state[key] = 1
        if index < len(node.parents):
            stack.append((node, index + 1))
            parent = node.parents[index]
            parent_state = state.get(id(parent))
            if parent_state == 1:
                raise AutogradError("cycle detected in recorded computation")
            if parent_state is None and parent.requires_grad:
                stack.append((parent, 0))
        else:
            state[key] = 2
            order.append(node)
    return order


def backward(loss: Tensor) -> Dict[Tensor, np.ndarray]:
    """Propagate d(loss)/d(node) back through the recorded computation.

    Leaf gradients accumulate into ``.grad`` (zeroing is the caller's job, once
    per step). Returns the gradient of every reachable leaf for this call. The
    recorded graph is released afterwards.
    """
    if loss.value.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not np.isfinite(loss.value).all():
        raise NumericalError("loss is not finite")

    order = _topological_order(loss)
    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    leaves: Dict[Tensor, np.ndarray] = {}

    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_rule is None:
            if node.requires_grad:
                leaves[node] = g
            continue
        parent_grads = node.backward_rule(g)
        for parent, pg in zip(node.parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
        # release the tape as we go
        node.parents = ()
        node.backward_rule = None

    for leaf, g in leaves.items():
        if not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient for {leaf.name or 'leaf'}")
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
    return leaves


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def _relative_error(analytic: float, numeric: float, floor: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def finite_diff_check(
    fn: Callable[[Tensor], Tensor],
    point: ArrayLike,
    eps: float = 1e-5,
    floor: float = 1e-12,
) -> float:
    """Max relative error between the analytic and central-difference gradient.

    ``fn`` maps a tensor to a scalar tensor. Returns ``inf`` when ``fn``
    produces non-finite values anywhere near ``point``.
    """
    if eps <= 0:
        raise ContractError("eps must be > 0")
    base = as_array(point).copy()
    x = Parameter(base.copy(), name="point")
    loss = fn(x)
    if not np.isfinite(loss.value).all():
        return float("inf")
    analytic = backward(loss).get(x, np.zeros_like(base))

    worst = 0.0
    flat = base.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            shifted = flat.copy()
            shifted[i] += eps
            up = fn(Tensor(shifted.reshape(base.shape))).item()
            shifted[i] -= 2 * eps
            down = fn(Tensor(shifted.reshape(base.shape))).item()
            if not (np.isfinite(up) and np.isfinite(down)):
                return float("inf")
            numeric = (up - down) / (2 * eps)
            worst = max(worst, _relative_error(float(analytic.reshape(-1)[i]), numeric, floor))
    return worst


def finite_diff_check_params(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Parameter],
    eps: float = 1e-5,
    floor: float = 1e-12,
) -> float:
    """Same check as ``finite_diff_check`` over every coordinate of ``params``.

    ``loss_fn`` rebuilds the computation from the current parameter values.
    Parameter values are restored before returning.
    """
    zero_grad(params)
    loss = loss_fn()
    if not np.isfinite(loss.value).all():
        return float("inf")
    analytic = backward(loss)

    worst = 0.0
    with no_grad():
        for p in params:
            grad = analytic.get(p, np.zeros_like(p.value)).reshape(-1)
            original = p.value
            flat = original.reshape(-1).copy()
            try:
                for i in range(flat.size):
                    saved = flat[i]
                    flat[i] = saved + eps
                    p.value = flat.reshape(original.shape)
                    up = loss_fn().item()
                    flat[i] = saved - eps
                    p.value = flat.reshape(original.shape)
                    down = loss_fn().item()
                    flat[i] = saved
                    if not (np.isfinite(up) and np.isfinite(down)):
                        return float("inf")
                    numeric = (up - down) / (2 * eps)
                    worst = max(worst, _relative_error(float(grad[i]), numeric, floor))
            finally:
                p.value = original
    zero_grad(params)
    return worst
