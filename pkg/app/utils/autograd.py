"""
Minimal reverse-mode automatic differentiation over numpy arrays.

Operations on `Tensor` objects are recorded onto the active `GradTape`
(entered with a `with` block) whenever one of their inputs requires a
gradient. Outside a tape every operation is a plain numpy evaluation.
"""
from __future__ import annotations

import math
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from app.core.exceptions import GradientCheckException, NonFiniteInputException
from app.utils.numerics import softmax_kernel


_ACTIVE_TAPE: ContextVar["GradTape | None"] = ContextVar("active_tape", default=None)

GELU_COEF = math.sqrt(2.0 / math.pi)


class Tensor:
    """A numpy array that can take part in a recorded computation."""

    __slots__ = ("data", "requires_grad", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims: bool = False):
        return tensor_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tensor_mean(self, axis, keepdims)


@dataclass
class _Record:
    output: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class GradTape:
    """
    Records primitive operations and replays them backward.

    Usage:
        with GradTape() as tape:
            loss = model_loss(params)
        grads = tape.gradient(loss, params)

    A tape is single-writer; it must not be shared between threads while recording.
    """

    def __init__(self) -> None:
        self._records: list[_Record] = []
        self._token = None

    def __enter__(self) -> "GradTape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self._records)

    def record(self, output: Tensor, inputs: tuple[Tensor, ...], backward) -> None:
        self._records.append(_Record(output, inputs, backward))

    def gradient(
        self,
        target: Tensor,
        sources: Mapping[str, Tensor] | Sequence[Tensor]
    ) -> dict[str, np.ndarray] | list[np.ndarray]:
        """
        Gradients of a scalar target with respect to the given sources.

        Args:
            target: Scalar tensor produced under this tape
            sources: Parameter registry (name -> Tensor) or a sequence of tensors

        Returns:
            Gradients with the same container type as `sources`; sources the
            target does not depend on get exact zeros
        """
        if target.data.size != 1:
            raise GradientCheckException(f"Target must be a scalar, got shape {target.shape}")

        grads: dict[int, np.ndarray] = {id(target): np.ones_like(target.data)}
        for record in reversed(self._records):
            grad_out = grads.pop(id(record.output), None)
            if grad_out is None:
                continue
            input_grads = record.backward(grad_out)
            for tensor, grad in zip(record.inputs, input_grads):
                if grad is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                if key in grads:
                    grads[key] = grads[key] + grad
                else:
                    grads[key] = grad

        def lookup(tensor: Tensor) -> np.ndarray:
            grad = grads.get(id(tensor))
            if grad is None:
                return np.zeros_like(tensor.data)
            return np.asarray(grad, dtype=tensor.dtype).reshape(tensor.shape)

        if isinstance(sources, Mapping):
            return {name: lookup(tensor) for name, tensor in sources.items()}
        return [lookup(tensor) for tensor in sources]


def parameter(data, name: str | None = None) -> Tensor:
    """Create a trainable tensor."""
    return Tensor(np.array(data), requires_grad=True, name=name)


def as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    array = np.asarray(value, dtype=dtype)
    return Tensor(array)


def _emit(data: np.ndarray, inputs: tuple[Tensor, ...], backward) -> Tensor:
    tape = _ACTIVE_TAPE.get()
    needs_grad = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs_grad)
    if needs_grad:
        tape.record(out, inputs, backward)
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, size in enumerate(shape) if size == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return a, b


def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return _emit(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return _emit(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _emit(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        ga = unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.requires_grad else None
        return ga, gb

    return _emit(a.data / b.data, (a, b), backward)


def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes."""
    a, b = _pair(a, b)

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _emit(a.data @ b.data, (a, b), backward)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    def backward(g):
        return (g.reshape(x.shape),)

    return _emit(x.data.reshape(shape), (x,), backward)


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inverse),)

    return _emit(np.transpose(x.data, axes), (x,), backward)


def tensor_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _emit(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), backward)


def tensor_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.data.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    total = tensor_sum(x, axis, keepdims)
    return mul(total, np.asarray(1.0 / count, dtype=x.dtype))


def broadcast_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    def backward(g):
        return (unbroadcast(g, x.shape),)

    return _emit(np.broadcast_to(x.data, shape).copy(), (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = tuple(tensors)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _emit(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def gather_tokens(x: Tensor, index: np.ndarray) -> Tensor:
    """
    Select tokens per batch item: out[b, k] = x[b, index[b, k]].

    Args:
        x: Tensor of shape (B, N, D)
        index: Integer array of shape (B, K)
    """
    index = np.asarray(index, dtype=np.int64)
    rows = np.arange(x.shape[0])[:, None]

    def backward(g):
        grad = np.zeros_like(x.data)
        np.add.at(grad, (np.broadcast_to(rows, index.shape), index), g)
        return (grad,)

    return _emit(x.data[rows, index], (x,), backward)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    y = softmax_kernel(x.data)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _emit(y, (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Layer normalization over the last axis with affine parameters."""
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    normed = centered * inv_std
    out = normed * gamma.data + beta.data

    def backward(g):
        gx = None
        if x.requires_grad:
            gn = g * gamma.data
            gx = inv_std * (
                gn
                - gn.mean(axis=-1, keepdims=True)
                - normed * (gn * normed).mean(axis=-1, keepdims=True)
            )
        gg = unbroadcast(g * normed, gamma.shape) if gamma.requires_grad else None
        gb = unbroadcast(g, beta.shape) if beta.requires_grad else None
        return gx, gg, gb

    return _emit(out.astype(x.dtype, copy=False), (x, gamma, beta), backward)


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximated GELU activation."""
    v = x.data
    inner = GELU_COEF * (v + 0.044715 * v ** 3)
    t = np.tanh(inner)
    out = 0.5 * v * (1.0 + t)

    def backward(g):
        d_inner = GELU_COEF * (1.0 + 3 * 0.044715 * v ** 2)
        local = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * d_inner
        return (g * local,)

    return _emit(out, (x,), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ weight + bias, weight shaped (in, out)."""
    out = matmul(x, weight)
    return add(out, bias) if bias is not None else out


def finite_diff_gradcheck(
    fn: Callable[[], Tensor],
    params: Mapping[str, Tensor] | Iterable[Tensor],
    step: float = 1e-4
) -> float:
    """
    Compare tape gradients with central finite differences.

    Args:
        fn: Deterministic scalar-valued function reading the parameters' data
        params: Parameters to check (registry mapping or sequence)
        step: Central-difference step, in [1e-6, 1e-3] for 64-bit parameters

    Returns:
        Max over all parameter entries of |analytic - numeric| / max(1, |numeric|)

    Raises:
        GradientCheckException: If the step is out of range
        NonFiniteInputException: If the loss is not finite
    """
    if not 1e-6 <= step <= 1e-3:
        raise GradientCheckException(f"Step {step} outside [1e-6, 1e-3]")
    tensors = list(params.values()) if isinstance(params, Mapping) else list(params)

    with GradTape() as tape:
        loss = fn()
    if not np.isfinite(loss.data).all():
        raise NonFiniteInputException(f"Loss is not finite: {loss.data}")
    analytic = tape.gradient(loss, tensors)

    worst = 0.0
    for tensor, grad in zip(tensors, analytic):
        tensor.data = np.ascontiguousarray(tensor.data)
        flat = tensor.data.reshape(-1)
        grad_flat = grad.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            plus = float(fn().data)
            flat[i] = original - step
            minus = float(fn().data)
            flat[i] = original
            if not (math.isfinite(plus) and math.isfinite(minus)):
                raise NonFiniteInputException("Loss became non-finite under perturbation")
            numeric = (plus - minus) / (2.0 * step)
            error = abs(float(grad_flat[i]) - numeric) / max(1.0, abs(numeric))
            worst = max(worst, error)
    return worst
