"""
Minimal tape-based reverse-mode automatic differentiation.

Tensors wrap float64 numpy arrays. Primitives compute their result eagerly
and, while a Tape is recording and at least one input requires a gradient,
append a node holding the inputs and a closure that maps the output
gradient to input gradients. Replaying the tape in reverse order yields
gradients for every leaf that requires them.

Example:
    >>> params = ParamStore({"w": np.ones((2, 2))})
    >>> with Tape():
    ...     loss = sum_all(matmul(Tensor(np.eye(2)), params["w"]))
    >>> _ = backward(loss, params)
    >>> params.grads["w"]
    array([[1., 1.],
           [1., 1.]])
"""

import contextvars
import logging
from typing import Callable, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.special import expit

from decision_tsp.exceptions import AutodiffError, DataError, ShapeError

logger = logging.getLogger(__name__)

_ACTIVE_TAPE: contextvars.ContextVar = contextvars.ContextVar("active_tape", default=None)

Gradients = Tuple[Optional[np.ndarray], ...]


class Tensor:
    """Dense row-major float64 array, optionally tracked by a tape."""

    __slots__ = ("data", "requires_grad", "tape", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.tape: Optional["Tape"] = None
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item: tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f"{self.name}, " if self.name else ""
        return f"Tensor({label}shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class _Node:
    __slots__ = ("output", "inputs", "backward")

    def __init__(self, output: Tensor, inputs: Tuple[Tensor, ...],
                 backward: Callable[[np.ndarray], Gradients]):
        self.output = output
        self.inputs = inputs
        self.backward = backward


class Tape:
    """
    Records primitive operations in execution order.

    Use as a context manager around a forward pass; a tape can be replayed
    backward exactly once.
    """

    def __init__(self):
        self.nodes: List[_Node] = []
        self.visit_order: List[int] = []
        self._token = None
        self._consumed = False

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def consumed(self) -> bool:
        return self._consumed

    def record(self, output: Tensor, inputs: Tuple[Tensor, ...],
               backward: Callable[[np.ndarray], Gradients]) -> None:
        output.requires_grad = True
        output.tape = self
        self.nodes.append(_Node(output, inputs, backward))

    def backward(self, loss: Tensor) -> Dict[int, np.ndarray]:
        """
        Replay the tape from a scalar loss.

        Args:
            loss: Scalar tensor recorded on this tape.

        Returns:
            Mapping from id() of every reached leaf tensor to its gradient.

        Raises:
            AutodiffError: If the tape was already replayed, or the loss is
                not a scalar recorded here.
        """
        if self._consumed:
            raise AutodiffError("tape already replayed; run a new forward pass before calling backward again")
        if loss.tape is not self:
            raise AutodiffError("loss was not recorded on this tape")
        if loss.size != 1:
            raise AutodiffError(f"loss must be a scalar, got shape {loss.shape}")
        self._consumed = True

        grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        self.visit_order = []
        for index in range(len(self.nodes) - 1, -1, -1):
            node = self.nodes[index]
            self.visit_order.append(index)
            grad = grads.pop(id(node.output), None)
            if grad is None:
                continue
            for tensor, input_grad in zip(node.inputs, node.backward(grad)):
                if input_grad is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                if key in grads:
                    grads[key] = grads[key] + input_grad
                else:
                    grads[key] = input_grad
        logger.debug("Replayed %d tape nodes", len(self.nodes))
        return grads


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _result(data: np.ndarray, inputs: Tuple[Tensor, ...],
            backward: Callable[[np.ndarray], Gradients]) -> Tensor:
    out = Tensor(data)
    tape = _ACTIVE_TAPE.get()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(out, inputs, backward)
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from e


# Primitives

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def grad_fn(g):
        return (
            g @ b.data.T if a.requires_grad else None,
            a.data.T @ g if b.requires_grad else None,
        )

    return _result(a.data @ b.data, (a, b), grad_fn)


def sparse_matmul(matrix: sparse.spmatrix, x) -> Tensor:
    """Product of a constant sparse matrix with a tensor; only x is differentiated."""
    x = as_tensor(x)
    if x.data.ndim != 2 or matrix.shape[1] != x.shape[0]:
        raise ShapeError(f"sparse_matmul: incompatible shapes {matrix.shape} and {x.shape}")
    transposed = matrix.T.tocsr()

    def grad_fn(g):
        return (np.asarray(transposed @ g),)

    return _result(np.asarray(matrix @ x.data), (x,), grad_fn)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), grad_fn)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), grad_fn)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def grad_fn(g):
        return (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        )

    return _result(a.data * b.data, (a, b), grad_fn)


def scale(a, factor: float) -> Tensor:
    a = as_tensor(a)
    return _result(a.data * factor, (a,), lambda g: (g * factor,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = expit(a.data)
    return _result(s, (a,), lambda g: (g * s * (1.0 - s),))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: {e}") from e
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(data, tensors, grad_fn)


def select(a, index: int, axis: int = 1) -> Tensor:
    """Take one slice along an axis, dropping that axis."""
    a = as_tensor(a)

    def grad_fn(g):
        full = np.zeros_like(a.data)
        slicer = [slice(None)] * a.data.ndim
        slicer[axis] = index
        full[tuple(slicer)] = g
        return (full,)

    return _result(np.take(a.data, index, axis=axis), (a,), grad_fn)


def reshape(a, shape: Tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    try:
        data = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"reshape: {e}") from e
    return _result(data, (a,), lambda g: (g.reshape(a.shape),))


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    return _result(np.asarray(a.data.sum()), (a,), lambda g: (np.full(a.shape, float(g)),))


def mean_all(a) -> Tensor:
    a = as_tensor(a)
    count = a.size
    return _result(np.asarray(a.data.mean()), (a,), lambda g: (np.full(a.shape, float(g) / count),))


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """
    Normalize over the last axis, then apply gain and bias.

    Args:
        x: Tensor of shape (..., d).
        gain: Tensor broadcastable against x, typically (d,) or (k, d).
        bias: Tensor with the same shape as gain.
        eps: Variance guard, must be positive.

    Returns:
        Tensor with the shape of x.
    """
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if eps <= 0:
        raise ShapeError("layer_norm: eps must be positive")
    if gain.shape != bias.shape or gain.shape[-1:] != x.shape[-1:]:
        raise ShapeError(f"layer_norm: gain {gain.shape} / bias {bias.shape} do not fit input {x.shape}")
    _broadcast_shape(x, gain, "layer_norm")

    centred = x.data - x.data.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centred * centred).mean(axis=-1, keepdims=True) + eps)
    normed = centred * inv_std

    def grad_fn(g):
        g_normed = g * gain.data
        g_x = inv_std * (
            g_normed
            - g_normed.mean(axis=-1, keepdims=True)
            - normed * (g_normed * normed).mean(axis=-1, keepdims=True)
        )
        return g_x, _unbroadcast(g * normed, gain.shape), _unbroadcast(g, bias.shape)

    return _result(normed * gain.data + bias.data, (x, gain, bias), grad_fn)


def bce_with_logits(logits, labels) -> Tensor:
    """
    Mean binary cross entropy computed from logits.

    Uses softplus(x) - x*y, which equals -[y log s(x) + (1-y) log(1-s(x))]
    without overflow; the gradient is (s(x) - y) / k.
    """
    logits = as_tensor(logits)
    y = np.asarray(labels, dtype=np.float64)
    if logits.shape != y.shape:
        raise ShapeError(f"bce_with_logits: logits {logits.shape} vs labels {y.shape}")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise DataError("bce_with_logits: labels must be 0 or 1")
    x = logits.data
    terms = _result(np.logaddexp(0.0, x) - x * y, (logits,), lambda g: (g * (expit(x) - y),))
    return mean_all(terms)


# Parameters

class ParamStore:
    """
    Named trainable tensors with one gradient slot each.

    Iteration is lexicographic by name.
    """

    def __init__(self, arrays: Optional[Mapping[str, np.ndarray]] = None):
        self._params: Dict[str, Tensor] = {}
        self.grads: Dict[str, np.ndarray] = {}
        for name, array in (arrays or {}).items():
            self.add(name, array)

    def add(self, name: str, array) -> Tensor:
        if name in self._params:
            raise KeyError(f"parameter '{name}' already exists")
        tensor = Tensor(np.array(array, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = tensor
        self.grads[name] = np.zeros_like(tensor.data)
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def __iter__(self) -> Iterator[str]:
        return iter(self.names())

    def names(self) -> List[str]:
        return sorted(self._params)

    def items(self) -> List[Tuple[str, Tensor]]:
        return [(name, self._params[name]) for name in self.names()]

    def num_parameters(self) -> int:
        return sum(t.size for t in self._params.values())

    def zero_grad(self) -> None:
        for name, tensor in self._params.items():
            self.grads[name] = np.zeros_like(tensor.data)

    def assign(self, name: str, values) -> None:
        values = np.asarray(values, dtype=np.float64)
        target = self._params[name]
        if values.shape != target.shape:
            raise ShapeError(f"parameter '{name}': expected shape {target.shape}, got {values.shape}")
        target.data[...] = values

    def to_arrays(self) -> Dict[str, np.ndarray]:
        return {name: tensor.data.copy() for name, tensor in self.items()}

    def copy(self) -> "ParamStore":
        return ParamStore(self.to_arrays())


def backward(loss: Tensor, params: Optional[ParamStore] = None) -> Dict[int, np.ndarray]:
    """
    Run reverse mode from a scalar loss and fill parameter gradient slots.

    Parameters that the loss does not reach receive zero gradients.

    Raises:
        AutodiffError: If the loss was not recorded or its tape was already replayed.
    """
    if loss.tape is None:
        raise AutodiffError("loss was not produced under a recording tape")
    grads = loss.tape.backward(loss)
    if params is not None:
        for name, tensor in params.items():
            grad = grads.get(id(tensor))
            params.grads[name] = grad.copy() if grad is not None else np.zeros_like(tensor.data)
    return grads


def numerical_gradient(f: Callable[[], float], array: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """
    Central finite differences of a scalar function with respect to an array.

    The array is perturbed in place and restored after each evaluation.
    """
    grad = np.zeros_like(array)
    for index in np.ndindex(array.shape):
        original = array[index]
        array[index] = original + h
        upper = f()
        array[index] = original - h
        lower = f()
        array[index] = original
        grad[index] = (upper - lower) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Largest elementwise |a - n| / max(|a|, |n|, floor)."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0
