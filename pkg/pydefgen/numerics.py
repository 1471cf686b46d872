"""Dense float64 tensors with a reverse-mode differentiation tape.

Ops are small :class:`Function` subclasses with a ``forward`` over raw arrays and
a ``backward`` returning one gradient per parent. While a :class:`Tape` is
active, every op whose inputs require gradients is appended to it; ops run with
no active tape simply compute (inference). Tapes are thread-local, so distinct
threads may record distinct tapes concurrently.
"""
from __future__ import annotations

from contextlib import contextmanager
import threading
from typing import (
    Any,
    Callable,
    ClassVar,
    Iterator,
    Mapping,
    Optional,
    Sequence,
    Union,
)

import numpy as np
from overrides import override

from .const import LOGGER, ZERO_NORM_EPS
from .exceptions import (
    PydefgenAllMasked,
    PydefgenInvalidConfig,
    PydefgenNonFiniteValue,
    PydefgenNonScalarLoss,
    PydefgenShapeMismatch,
    PydefgenTapeError,
    PydefgenTapeReused,
    PydefgenZeroNorm,
)
from .types import BoolArray, FloatArray, IdArray

Operand = Union["Tensor", FloatArray, float, int]
ParamCollection = Union[Mapping[str, "Tensor"], Sequence["Tensor"]]

_local = threading.local()
_gradient_faults: dict[str, float] = {}
_check_finite = True


def set_finite_checks(enabled: bool) -> None:
    """Turn the NaN/Inf check after every forward op on or off.

    Args:
        enabled (bool): Whether ops raise on non-finite outputs.
    """
    global _check_finite
    _check_finite = enabled


def finite_checks_enabled() -> bool:
    """Whether forward ops currently check their outputs for NaN/Inf."""
    return _check_finite


@contextmanager
def gradient_fault(op_name: str, scale: float = 1.5) -> Iterator[None]:
    """Scale every gradient produced by one op kind, for detector sanity checks.

    Args:
        op_name (str): Op name, e.g. ``"matmul"``.
        scale (float, optional): Factor applied to that op's parent gradients.
            Defaults to 1.5.
    """
    _gradient_faults[op_name] = scale
    LOGGER.warning("Gradient of op '%s' deliberately scaled by %s", op_name, scale)
    try:
        yield
    finally:
        _gradient_faults.pop(op_name, None)


def _tape_stack() -> list[Tape]:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = []
        _local.tapes = stack
    return stack


def active_tape() -> Optional[Tape]:
    """Innermost tape active on this thread, if any."""
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of the ops of one forward pass.

    Nodes are appended in execution order, so every node's parents precede it.
    A tape supports exactly one backward pass.
    """

    def __init__(self) -> None:
        self._nodes: list[tuple[Function, Tensor]] = []
        self._outputs: set[int] = set()
        self.consumed = False

    def __enter__(self) -> Tape:
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc_info: Any) -> None:
        _tape_stack().remove(self)

    def __len__(self) -> int:
        return len(self._nodes)

    def __contains__(self, tensor: object) -> bool:
        return id(tensor) in self._outputs

    @property
    def nodes(self) -> list[tuple[Function, Tensor]]:
        """Recorded ``(op, output)`` pairs in topological order."""
        return self._nodes

    def record(self, fn: Function, out: Tensor) -> None:
        """Append one op and its output.

        Args:
            fn (Function): Op holding its parents and saved activations.
            out (Tensor): Output tensor of the op.

        Raises:
            PydefgenTapeReused: The tape was already used for a backward pass.
        """
        if self.consumed:
            raise PydefgenTapeReused("Tape was already used for a backward pass")
        out.tape_id = len(self._nodes)
        self._nodes.append((fn, out))
        self._outputs.add(id(out))


class Tensor:
    """Dense float64 array with a gradient slot.

    Identity semantics: tensors hash by identity so they can key gradient maps.
    """

    __array_ufunc__ = None

    def __init__(
        self,
        values: Any,
        requires_grad: bool = False,
        name: Optional[str] = None,
    ):
        self.values: FloatArray = np.array(values, dtype=np.float64)
        self.grad: Optional[FloatArray] = None
        self.requires_grad = requires_grad
        self.name = name
        self.tape_id: Optional[int] = None

    @classmethod
    def wrap(cls, values: FloatArray) -> Tensor:
        """Wrap an op output without copying it."""
        tensor = cls.__new__(cls)
        tensor.values = values
        tensor.grad = None
        tensor.requires_grad = False
        tensor.name = None
        tensor.tape_id = None
        return tensor

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.values.shape)

    @property
    def ndim(self) -> int:
        return int(self.values.ndim)

    @property
    def size(self) -> int:
        return int(self.values.size)

    @property
    def T(self) -> Tensor:
        """Swap the last two axes."""
        axes = list(range(self.ndim))
        axes[-2], axes[-1] = axes[-1], axes[-2]
        return transpose(self, tuple(axes))

    def item(self) -> float:
        """Value of a one-element tensor as a Python float."""
        if self.values.size != 1:
            raise PydefgenNonScalarLoss(
                f"item() needs exactly one element, tensor has shape {self.shape}"
            )
        return float(self.values.reshape(-1)[0])

    def numpy(self) -> FloatArray:
        """Underlying array (not a copy)."""
        return self.values

    def detach(self) -> Tensor:
        """Copy of the values with no gradient tracking."""
        return Tensor(self.values)

    def zero_grad(self) -> None:
        """Clear the accumulated gradient."""
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other: Operand) -> Tensor:
        return add(self, other)

    def __radd__(self, other: Operand) -> Tensor:
        return add(other, self)

    def __sub__(self, other: Operand) -> Tensor:
        return sub(self, other)

    def __rsub__(self, other: Operand) -> Tensor:
        return sub(other, self)

    def __mul__(self, other: Operand) -> Tensor:
        return mul(self, other)

    def __rmul__(self, other: Operand) -> Tensor:
        return mul(other, self)

    def __truediv__(self, other: Operand) -> Tensor:
        return div(self, other)

    def __rtruediv__(self, other: Operand) -> Tensor:
        return div(other, self)

    def __neg__(self) -> Tensor:
        return neg(self)

    def __matmul__(self, other: Operand) -> Tensor:
        return matmul(self, as_tensor(other))

    def __getitem__(self, key: Any) -> Tensor:
        return index(self, key)

    def reshape(self, *shape: int) -> Tensor:
        return reshape(self, tuple(shape))

    def transpose(self, *axes: int) -> Tensor:
        return transpose(self, tuple(axes))

    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(value: Operand) -> Tensor:
    """Return ``value`` if it is a tensor, else wrap it as a constant."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


class Function:
    """Base class of every differentiable op."""

    name: ClassVar[str] = "function"

    def __init__(self, *parents: Tensor) -> None:
        self.parents = parents

    def forward(self, *values: FloatArray) -> FloatArray:
        raise NotImplementedError

    def backward(self, grad: FloatArray) -> tuple[Optional[FloatArray], ...]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *parents: Tensor, **options: Any) -> Tensor:
        """Run the op forward and record it on the active tape.

        Args:
            *parents (Tensor): Differentiable inputs.
            **options (Any): Non-differentiable op settings.

        Raises:
            PydefgenNonFiniteValue: The output contains NaN or Inf.

        Returns:
            Tensor: Op output.
        """
        fn = cls(*parents, **options)
        out = Tensor.wrap(fn.forward(*(parent.values for parent in parents)))
        if _check_finite and not np.isfinite(out.values).all():
            raise PydefgenNonFiniteValue(cls.name)
        tape = active_tape()
        if tape is not None and any(parent.requires_grad for parent in parents):
            out.requires_grad = True
            tape.record(fn, out)
        return out


def _unbroadcast(grad: FloatArray, shape: tuple[int, ...]) -> FloatArray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(
        axis
        for axis, size in enumerate(shape)
        if size == 1 and grad.shape[axis] != 1
    )
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(op_name: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exception:
        raise PydefgenShapeMismatch(
            f"{op_name}: shapes {a.shape} and {b.shape} do not broadcast"
        ) from exception


class Add(Function):
    name = "add"

    @override(check_signature=False)
    def forward(self, a: FloatArray, b: FloatArray) -> FloatArray:
        return a + b

    @override
    def backward(self, grad: FloatArray) -> tuple[Optional[FloatArray], ...]:
        a, b = self.parents
        return _unbroadcast(grad, a.shape), _unbroadcast(grad, b.shape)


class Sub(Function):
    name = "sub"

    @override(check_signature=False)
    def forward(self, a: FloatArray, b: FloatArray) -> FloatArray:
        return a - b

    @override
    def backward(self, grad: FloatArray) -> tuple[Optional[FloatArray], ...]:
        a, b = self.parents
        return _unbroadcast(grad, a.shape), _unbroadcast(-grad, b.shape)


class Mul(Function):
    name = "mul"

    @override(check_signature=False)
    def forward(self, a: FloatArray, b: FloatArray) -> FloatArray:
        return a * b

    @override
    def backward(self, grad: FloatArray) -> tuple[Optional[FloatArray], ...]:
        a, b = self.parents
        return (
            _unbroadcast(grad * b.values, a.shape),
            _unbroadcast(grad * a.values, b.shape),
        )


class Div(Function):
    name = "div"

    @override(check_signature=False)
    def forward(self, a: FloatArray, b: FloatArray) -> FloatArray:
        return a / b

    @override
    def backward(self, grad: FloatArray) -> tuple[Optional[FloatArray], ...]:
        a, b = self.parents
        return (
            _unbroadcast(grad / b.values, a.shape),
            _unbroadcast(-grad * a.values / (b.values * b.values), b.shape),
        )


class Neg(Function):
    name = "neg"

    @override(check_signature=False)
    def forward(self, a: FloatArray) -> FloatArray:
        return -a

    @override
    def backward(self, grad: FloatArray) -> tuple[Optional[FloatArray], ...]:
        return (-grad,)


class MatMul(Function):
    name = "matmul"

    @override(check_signature=False)
    def forward(self, a: FloatArray, b: FloatArray) -> FloatArray:
        return np.matmul(a, b)

    @override
    def backward(self, grad: FloatArray) -> tuple[Optional[FloatArray], ...]:
        a, b = self.parents
        grad_a = np.matmul(grad, np.swapaxes(b.values, -1, -2))
        grad_b = np.matmul(np.swapaxes(a.values, -1, -2), grad)
        return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)


class Exp(Function):
    name = "exp"

    @override(check_signature=False)
    def forward(self, a: FloatArray) -> FloatArray:
        self.out = np.exp(a)
        return self.out

    @override
    def backward(self, grad: FloatArray) -> tuple[Optional[FloatArray], ...]:
        return (grad * self.out,)


class Log(Function):
    name = "log"

    @override(check_signature=False)
    def forward(self, a: FloatArray) -> FloatArray:
        return np.log(a)

    @override
    def backward(self, grad: FloatArray) -> tuple[Optional[FloatArray], ...]:
        return (grad / self.parents[0].values,)


class Sum(Function):
    name = "sum"

    def __init__(
        self, a: Tensor, *, axis: Optional[int] = None, keepdims: bool = False
    ) -> None:
        super().__init__(a)
        self.axis = axis
        self.keepdims = keepdims

    @override(check_signature=False)
    def forward(self, a: FloatArray) -> FloatArray:
        return np.asarray(a.sum(axis=self.axis, keepdims=self.keepdims))

    @override
    def backward(self, grad: FloatArray) -> tuple[Optional[FloatArray], ...]:
        shape = self.parents[0].shape
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, shape),)


class Reshape(Function):
    name = "reshape"

    def __init__(self, a: Tensor, *, shape: tuple[int, ...]) -> None:
        super().__init__(a)
        self.shape = shape

    @override(check_signature=False)
    def forward(self, a: FloatArray) -> FloatArray:
        return a.reshape(self.shape)

    @override
    def backward(self, grad: FloatArray) -> tuple[Optional[FloatArray], ...]:
        return (grad.reshape(self.parents[0].shape),)


class Transpose(Function):
    name = "transpose"

    def __init__(self, a: Tensor, *, axes: tuple[int, ...]) -> None:
        super().__init__(a)
        self.axes = axes

    @override(check_signature=False)
    def forward(self, a: FloatArray) -> FloatArray:
        return np.transpose(a, self.axes)

    @override
    def backward(self, grad: FloatArray) -> tuple[Optional[FloatArray], ...]:
        return (np.transpose(grad, np.argsort(self.axes)),)


class Index(Function):
    name = "index"

    def __init__(self, a: Tensor, *, key: Any) -> None:
        super().__init__(a)
        self.key = key

    @override(check_signature=False)
    def forward(self, a: FloatArray) -> FloatArray:
        return np.array(a[self.key])

    @override
    def backward(self, grad: FloatArray) -> tuple[Optional[FloatArray], ...]:
        full = np.zeros(self.parents[0].shape)
        np.add.at(full, self.key, grad)
        return (full,)


class Stack(Function):
    name = "stack"

    def __init__(self, *parts: Tensor, axis: int = 0) -> None:
        super().__init__(*parts)
        self.axis = axis

    @override
    def forward(self, *parts: FloatArray) -> FloatArray:
        return np.stack(parts, axis=self.axis)

    @override
    def backward(self, grad: FloatArray) -> tuple[Optional[FloatArray], ...]:
        return tuple(
            np.take(grad, position, axis=self.axis)
            for position in range(len(self.parents))
        )


class Embedding(Function):
    name = "embedding"

    def __init__(self, table: Tensor, *, ids: IdArray) -> None:
        super().__init__(table)
        self.ids = ids

    @override(check_signature=False)
    def forward(self, table: FloatArray) -> FloatArray:
        return table[self.ids]

    @override
    def backward(self, grad: FloatArray) -> tuple[Optional[FloatArray], ...]:
        full = np.zeros(self.parents[0].shape)
        np.add.at(full, self.ids, grad)
        return (full,)


class SoftmaxRows(Function):
    name = "softmax_rows"

    @override(check_signature=False)
    def forward(self, a: FloatArray) -> FloatArray:
        shifted = np.exp(a - a.max(axis=-1, keepdims=True))
        self.out = shifted / shifted.sum(axis=-1, keepdims=True)
        return self.out

    @override
    def backward(self, grad: FloatArray) -> tuple[Optional[FloatArray], ...]:
        y = self.out
        return (y * (grad - (grad * y).sum(axis=-1, keepdims=True)),)


class LogSoftmax(Function):
    name = "log_softmax"

    @override(check_signature=False)
    def forward(self, a: FloatArray) -> FloatArray:
        shifted = a - a.max(axis=-1, keepdims=True)
        out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        self.probs = np.exp(out)
        return out

    @override
    def backward(self, grad: FloatArray) -> tuple[Optional[FloatArray], ...]:
        return (grad - self.probs * grad.sum(axis=-1, keepdims=True),)


class LayerNorm(Function):
    name = "layer_norm"

    def __init__(self, x: Tensor, gain: Tensor, bias: Tensor, *, eps: float) -> None:
        super().__init__(x, gain, bias)
        self.eps = eps

    @override(check_signature=False)
    def forward(self, x: FloatArray, gain: FloatArray, bias: FloatArray) -> FloatArray:
        centered = x - x.mean(axis=-1, keepdims=True)
        variance = (centered * centered).mean(axis=-1, keepdims=True)
        self.inv_std = 1.0 / np.sqrt(variance + self.eps)
        self.normed = centered * self.inv_std
        return self.normed * gain + bias

    @override
    def backward(self, grad: FloatArray) -> tuple[Optional[FloatArray], ...]:
        _, gain, bias = self.parents
        grad_normed = grad * gain.values
        grad_x = self.inv_std * (
            grad_normed
            - grad_normed.mean(axis=-1, keepdims=True)
            - self.normed * (grad_normed * self.normed).mean(axis=-1, keepdims=True)
        )
        return (
            grad_x,
            _unbroadcast(grad * self.normed, gain.shape),
            _unbroadcast(grad, bias.shape),
        )


_GELU_C = float(np.sqrt(2.0 / np.pi))


class Gelu(Function):
    """Tanh approximation of GELU."""

    name = "gelu"

    @override(check_signature=False)
    def forward(self, x: FloatArray) -> FloatArray:
        self.t = np.tanh(_GELU_C * (x + 0.044715 * x**3))
        return 0.5 * x * (1.0 + self.t)

    @override
    def backward(self, grad: FloatArray) -> tuple[Optional[FloatArray], ...]:
        x = self.parents[0].values
        t = self.t
        slope = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (
            1.0 + 3 * 0.044715 * x * x
        )
        return (grad * slope,)


class NormalizeRows(Function):
    name = "normalize_rows"

    @override(check_signature=False)
    def forward(self, x: FloatArray) -> FloatArray:
        self.norm = np.sqrt((x * x).sum(axis=-1, keepdims=True))
        if (self.norm < ZERO_NORM_EPS).any():
            raise PydefgenZeroNorm(
                "Cannot normalise a vector with norm below "
                f"{ZERO_NORM_EPS}; the pooled representation is degenerate"
            )
        self.out = x / self.norm
        return self.out

    @override
    def backward(self, grad: FloatArray) -> tuple[Optional[FloatArray], ...]:
        y = self.out
        return ((grad - y * (grad * y).sum(axis=-1, keepdims=True)) / self.norm,)


def _valid_rows(
    op_name: str, rows: FloatArray, row_mask: Optional[BoolArray]
) -> BoolArray:
    if rows.ndim != 2:
        raise PydefgenShapeMismatch(
            f"{op_name}: expected a matrix, got shape {rows.shape}"
        )
    if row_mask is None:
        valid = np.ones(rows.shape[0], dtype=bool)
    else:
        valid = np.asarray(row_mask, dtype=bool)
        if valid.shape != (rows.shape[0],):
            raise PydefgenShapeMismatch(
                f"{op_name}: mask of shape {valid.shape} for {rows.shape[0]} rows"
            )
    if not valid.any():
        raise PydefgenAllMasked(f"{op_name}: every row is masked")
    return valid


class MaxPoolRows(Function):
    """Column-wise max over unmasked rows; ties route to the first maximal row."""

    name = "max_pool_rows"

    def __init__(self, rows: Tensor, *, row_mask: Optional[BoolArray]) -> None:
        super().__init__(rows)
        self.row_mask = row_mask

    @override(check_signature=False)
    def forward(self, rows: FloatArray) -> FloatArray:
        valid = _valid_rows(self.name, rows, self.row_mask)
        masked = np.where(valid[:, None], rows, -np.inf)
        self.argmax = masked.argmax(axis=0)
        return masked[self.argmax, np.arange(rows.shape[1])]

    @override
    def backward(self, grad: FloatArray) -> tuple[Optional[FloatArray], ...]:
        full = np.zeros(self.parents[0].shape)
        full[self.argmax, np.arange(full.shape[1])] = grad
        return (full,)


class MeanPoolRows(Function):
    name = "mean_pool_rows"

    def __init__(self, rows: Tensor, *, row_mask: Optional[BoolArray]) -> None:
        super().__init__(rows)
        self.row_mask = row_mask

    @override(check_signature=False)
    def forward(self, rows: FloatArray) -> FloatArray:
        self.valid = _valid_rows(self.name, rows, self.row_mask)
        self.count = int(self.valid.sum())
        return rows[self.valid].sum(axis=0) / self.count

    @override
    def backward(self, grad: FloatArray) -> tuple[Optional[FloatArray], ...]:
        full = np.zeros(self.parents[0].shape)
        full[self.valid] = grad / self.count
        return (full,)


def add(a: Operand, b: Operand) -> Tensor:
    """Elementwise ``a + b`` with broadcasting."""
    ta, tb = as_tensor(a), as_tensor(b)
    _check_broadcast(Add.name, ta, tb)
    return Add.apply(ta, tb)


def sub(a: Operand, b: Operand) -> Tensor:
    """Elementwise ``a - b`` with broadcasting."""
    ta, tb = as_tensor(a), as_tensor(b)
    _check_broadcast(Sub.name, ta, tb)
    return Sub.apply(ta, tb)


def mul(a: Operand, b: Operand) -> Tensor:
    """Elementwise ``a * b`` with broadcasting."""
    ta, tb = as_tensor(a), as_tensor(b)
    _check_broadcast(Mul.name, ta, tb)
    return Mul.apply(ta, tb)


def div(a: Operand, b: Operand) -> Tensor:
    """Elementwise ``a / b`` with broadcasting."""
    ta, tb = as_tensor(a), as_tensor(b)
    _check_broadcast(Div.name, ta, tb)
    return Div.apply(ta, tb)


def neg(a: Tensor) -> Tensor:
    return Neg.apply(a)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product, batched over leading axes.

    Gradient contract: ``dL/da = dL/dc · bᵀ`` and ``dL/db = aᵀ · dL/dc``,
    summed over broadcast batch axes.

    Args:
        a (Tensor): ``[..., m, k]``
        b (Tensor): ``[..., k, n]``

    Raises:
        PydefgenShapeMismatch: Inner dimensions or batch axes disagree.

    Returns:
        Tensor: ``[..., m, n]``
    """
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise PydefgenShapeMismatch(f"matmul: cannot multiply {a.shape} by {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError as exception:
        raise PydefgenShapeMismatch(
            f"matmul: batch axes of {a.shape} and {b.shape} do not broadcast"
        ) from exception
    return MatMul.apply(a, b)


def exp(a: Tensor) -> Tensor:
    return Exp.apply(a)


def log(a: Tensor) -> Tensor:
    return Log.apply(a)


def tsum(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    """Sum over one axis or all of them."""
    return Sum.apply(a, axis=axis, keepdims=keepdims)


def mean(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    """Arithmetic mean over one axis or all of them."""
    count = a.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    return Reshape.apply(a, shape=shape)


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    return Transpose.apply(a, axes=axes)


def index(a: Tensor, key: Any) -> Tensor:
    """Numpy-style indexing; the backward pass scatter-adds into the source."""
    return Index.apply(a, key=key)


def stack(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Stack equally shaped tensors along a new axis."""
    return Stack.apply(*parts, axis=axis)


def embedding(table: Tensor, ids: IdArray) -> Tensor:
    """Row lookup ``table[ids]``."""
    return Embedding.apply(table, ids=np.asarray(ids, dtype=np.int64))


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilised by per-row max subtraction."""
    return SoftmaxRows.apply(x)


def log_softmax(x: Tensor) -> Tensor:
    """Log-softmax over the last axis via log-sum-exp."""
    return LogSoftmax.apply(x)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean and unit variance, then scale and shift."""
    return LayerNorm.apply(x, gain, bias, eps=eps)


def gelu(x: Tensor) -> Tensor:
    return Gelu.apply(x)


def normalize_rows(x: Tensor) -> Tensor:
    """Scale every vector along the last axis to unit L2 norm.

    Raises:
        PydefgenZeroNorm: A vector has norm below 1e-12.
    """
    return NormalizeRows.apply(x)


def cosine_sim(u: Tensor, v: Tensor) -> Tensor:
    """Cosine similarity of two vectors (or row-wise for matrices).

    Args:
        u (Tensor): Vector ``[d]``.
        v (Tensor): Vector ``[d]``.

    Raises:
        PydefgenShapeMismatch: Lengths differ.
        PydefgenZeroNorm: Either vector has norm below 1e-12.

    Returns:
        Tensor: Scalar similarity in ``[-1, 1]``.
    """
    if u.shape != v.shape:
        raise PydefgenShapeMismatch(f"cosine_sim: {u.shape} vs {v.shape}")
    return tsum(normalize_rows(u) * normalize_rows(v), axis=-1)


def cosine_similarity_matrix(h: Tensor, g: Tensor) -> Tensor:
    """All pairwise cosine similarities ``S[i, j] = sim(h_i, g_j)``."""
    if h.ndim != 2 or g.ndim != 2 or h.shape[1] != g.shape[1]:
        raise PydefgenShapeMismatch(f"similarity matrix: {h.shape} vs {g.shape}")
    return matmul(normalize_rows(h), normalize_rows(g).T)


def max_pool_rows(rows: Tensor, row_mask: Optional[BoolArray] = None) -> Tensor:
    """Column-wise max over the unmasked rows of ``[r, d]``.

    Masked rows are treated as -inf. The subgradient goes to the first maximal
    row of each column.

    Raises:
        PydefgenAllMasked: No row is unmasked.
    """
    return MaxPoolRows.apply(rows, row_mask=row_mask)


def mean_pool_rows(rows: Tensor, row_mask: Optional[BoolArray] = None) -> Tensor:
    """Column-wise mean over the unmasked rows of ``[r, d]``.

    Raises:
        PydefgenAllMasked: No row is unmasked.
    """
    return MeanPoolRows.apply(rows, row_mask=row_mask)


def _as_list(params: ParamCollection) -> list[Tensor]:
    if isinstance(params, Mapping):
        return list(params.values())
    return list(params)


def zero_grad(params: ParamCollection) -> None:
    """Clear the gradient slot of every tensor."""
    for tensor in _as_list(params):
        tensor.zero_grad()


def backward(loss: Tensor, tape: Tape) -> dict[Tensor, FloatArray]:
    """Reverse-mode pass from a scalar loss over one tape.

    Gradients are accumulated into the ``grad`` slot of every leaf tensor that
    requires them.

    Args:
        loss (Tensor): One-element tensor recorded on ``tape``.
        tape (Tape): Tape of the forward pass.

    Raises:
        PydefgenTapeReused: The tape already ran a backward pass.
        PydefgenNonScalarLoss: ``loss`` has more than one element.
        PydefgenTapeError: ``loss`` was not recorded on ``tape``.

    Returns:
        dict[Tensor, FloatArray]: Accumulated gradient per reached leaf.
    """
    if tape.consumed:
        raise PydefgenTapeReused("Tape was already used for a backward pass")
    if loss.size != 1:
        raise PydefgenNonScalarLoss(f"Loss must be a scalar, got shape {loss.shape}")
    if loss not in tape:
        raise PydefgenTapeError("Loss was not recorded on this tape")
    tape.consumed = True

    pending: dict[int, FloatArray] = {id(loss): np.ones_like(loss.values)}
    leaves: dict[int, Tensor] = {}
    for fn, out in reversed(tape.nodes):
        grad = pending.pop(id(out), None)
        if grad is None:
            continue
        scale = _gradient_faults.get(fn.name)
        for parent, parent_grad in zip(fn.parents, fn.backward(grad)):
            if parent_grad is None or not parent.requires_grad:
                continue
            if scale is not None:
                parent_grad = parent_grad * scale
            key = id(parent)
            if parent not in tape:
                leaves[key] = parent
            pending[key] = pending[key] + parent_grad if key in pending else parent_grad

    gradients: dict[Tensor, FloatArray] = {}
    for key, leaf in leaves.items():
        grad = np.array(pending[key], dtype=np.float64)
        leaf.grad = grad if leaf.grad is None else leaf.grad + grad
        gradients[leaf] = leaf.grad
    return gradients


def _sample_coordinates(
    tensors: list[Tensor], num_samples: Optional[int], seed: int
) -> list[tuple[Tensor, int]]:
    coordinates = [
        (tensor, position) for tensor in tensors for position in range(tensor.size)
    ]
    if num_samples is None or num_samples >= len(coordinates):
        return coordinates
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(len(coordinates), size=num_samples, replace=False))
    return [coordinates[position] for position in chosen]


def finite_diff_check(
    f: Callable[[Any], Tensor],
    params: ParamCollection,
    eps: float = 1e-5,
    num_samples: Optional[int] = None,
    seed: int = 0,
) -> float:
    """Compare reverse-mode gradients with central finite differences.

    Args:
        f (Callable): Maps ``params`` to a scalar loss tensor. Must be
            deterministic (no dropout).
        params (ParamCollection): Tensors to differentiate.
        eps (float, optional): Central difference step. Defaults to 1e-5.
        num_samples (Optional[int], optional): Coordinates to sample across all
            params. Defaults to None (every coordinate).
        seed (int, optional): Coordinate sampling seed. Defaults to 0.

    Raises:
        PydefgenInvalidConfig: ``eps`` is not positive.

    Returns:
        float: ``max |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)`` over the
        sampled coordinates.
    """
    if eps <= 0:
        raise PydefgenInvalidConfig(f"Finite difference step must be > 0, got {eps}")
    tensors = _as_list(params)
    previous = [tensor.requires_grad for tensor in tensors]
    for tensor in tensors:
        tensor.requires_grad = True
        tensor.zero_grad()
    try:
        with Tape() as tape:
            loss = f(params)
        gradients = backward(loss, tape)

        worst = 0.0
        for tensor, position in _sample_coordinates(tensors, num_samples, seed):
            grad = gradients.get(tensor)
            analytic = 0.0 if grad is None else float(grad.flat[position])
            original = float(tensor.values.flat[position])
            tensor.values.flat[position] = original + eps
            plus = f(params).item()
            tensor.values.flat[position] = original - eps
            minus = f(params).item()
            tensor.values.flat[position] = original
            numeric = (plus - minus) / (2.0 * eps)
            error = abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))
            worst = max(worst, error)
    finally:
        for tensor, flag in zip(tensors, previous):
            tensor.requires_grad = flag
            tensor.zero_grad()
    return worst
