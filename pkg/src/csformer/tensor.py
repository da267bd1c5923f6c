"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations are recorded on the innermost active :class:`GradTape` whenever at
least one input requires a gradient. Outside a tape nothing is recorded, which
is how inference runs without bookkeeping::

    w = Tensor([1.0, 2.0], requires_grad=True)
    with GradTape() as tape:
        loss = (w * w).sum()
    tape.backward(loss)
    w.grad  # array([2., 4.])

Storage is a row-major ``numpy.ndarray`` of dtype float64. Permutes may be
numpy views; nothing in the engine mutates an intermediate array in place.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from .errors import ContractError, DimensionError, NumericsError

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]

_TAPES: list["GradTape"] = []


class _Node:
    __slots__ = ("inputs", "output", "backward")

    def __init__(self, inputs, output, backward):
        self.inputs = inputs
        self.output = output
        self.backward = backward


class GradTape:
    """Ordered record of differentiable operations.

    Nodes are appended in execution order, so every node's inputs are either
    leaves or outputs of earlier nodes. A tape can be replayed backwards once.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._produced: set[int] = set()
        self._leaves: dict[int, Tensor] = {}
        self.consumed = False

    def __enter__(self) -> "GradTape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def record(self, inputs: tuple["Tensor", ...], output: "Tensor", backward: Callable) -> None:
        for t in inputs:
            if t.requires_grad and id(t) not in self._produced:
                self._leaves[id(t)] = t
        self.nodes.append(_Node(inputs, output, backward))
        self._produced.add(id(output))

    def backward(self, loss: "Tensor", accumulate: bool = False) -> None:
        """Populate ``.grad`` of every leaf reachable from ``loss``.

        A leaf that already holds a gradient raises :class:`ContractError`
        unless ``accumulate`` is set, in which case the new gradient is added.
        """
        if self.consumed:
            raise ContractError("tape already replayed; record a new one")
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if id(loss) not in self._produced:
            raise ContractError("loss was not produced on this tape")
        if not accumulate:
            for leaf in self._leaves.values():
                if leaf.grad is not None:
                    raise ContractError("leaf gradient already populated; reset it or pass accumulate=True")

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            for t, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi

        for key, leaf in self._leaves.items():
            g = grads.get(key)
            if g is None:
                g = np.zeros_like(leaf.data)
            g = np.array(g, dtype=np.float64).reshape(leaf.data.shape)
            if leaf.grad is None:
                leaf.grad = g
            else:
                leaf.grad = leaf.grad + g

        self.consumed = True
        self.nodes.clear()


def backward(loss: "Tensor", tape: GradTape, accumulate: bool = False) -> None:
    tape.backward(loss, accumulate=accumulate)


def _active_tape() -> Optional[GradTape]:
    return _TAPES[-1] if _TAPES else None


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "__weakref__")

    def __init__(self, data: ArrayLike, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operators
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __pow__(self, exponent: float): return power(self, exponent)
    def __matmul__(self, other): return matmul(self, other)

    def sum(self, axis=None, keepdims=False): return sum_(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)
    def permute(self, *axes): return permute(self, axes[0] if len(axes) == 1 and isinstance(axes[0], (tuple, list)) else axes)


def as_tensor(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(arr: np.ndarray, inputs: tuple[Tensor, ...], backward: Callable) -> Tensor:
    tape = _active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(arr, requires_grad=needs)
    if needs:
        tape.record(inputs, out, backward)
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_check(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# elementwise ---------------------------------------------------------------

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "add")
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)))


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)))


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "mul")
    ad, bd = a.data, b.data

    def back(g):
        ga = unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return _result(ad * bd, (a, b), back)


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd

    def back(g):
        ga = unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), back)


def neg(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,))


def power(a: ArrayLike, exponent: float) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    if exponent == 2:
        return _result(ad * ad, (a,), lambda g: (2.0 * g * ad,))
    return _result(ad ** exponent, (a,), lambda g: (g * exponent * ad ** (exponent - 1),))


def sqrt(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (g * 0.5 / out,))


def exp(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def relu(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _result(np.maximum(a.data, 0.0), (a,), lambda g: (g * mask,))


# reductions ----------------------------------------------------------------

def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def sum_(a: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape),)

    return _result(np.asarray(out, dtype=np.float64), (a,), back)


def mean(a: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return sum_(a, axes, keepdims) * (1.0 / count)


# shape ---------------------------------------------------------------------

def reshape(a: ArrayLike, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError:
        raise DimensionError(f"reshape: cannot view {old} as {tuple(shape)}") from None
    return _result(out, (a,), lambda g: (g.reshape(old),))


def permute(a: ArrayLike, axes: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    axes = tuple(int(ax) for ax in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ValueError(f"permute: {axes} is not a permutation of {a.ndim} axes")
    inverse = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def swap_last(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return permute(a, axes)


# linear algebra ------------------------------------------------------------

def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Batched matrix product over the last two axes with broadcast batch axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: batch axes of {a.shape} and {b.shape} do not broadcast") from None
    ad, bd = a.data, b.data

    def back(g):
        ga = unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return _result(ad @ bd, (a, b), back)


def softmax_lastaxis(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    if x.shape[-1] < 1:
        raise DimensionError("softmax over an empty axis")
    if not np.all(np.isfinite(x.data)):
        raise NumericsError("softmax input contains non-finite values")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (x,), back)


# verification --------------------------------------------------------------

def finite_diff_check(
    f: Callable[[], Tensor],
    params: Union[Tensor, Iterable[Tensor]],
    h: float = 1e-5,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` takes no arguments and returns a scalar tensor computed from the
    current values of ``params``; it is called once under a tape and twice per
    scalar component with the component perturbed by ``±h``. The relative error
    of a component is ``|analytic - numeric| / (|numeric| + 1e-8)``.
    """
    params = [params] if isinstance(params, Tensor) else list(params)
    saved = [p.grad for p in params]
    for p in params:
        p.grad = None
    with GradTape() as tape:
        loss = f()
    tape.backward(loss)
    analytic = [p.grad.copy() for p in params]
    for p, g in zip(params, saved):
        p.grad = g

    worst = 0.0
    for p, ga in zip(params, analytic):
        for idx in np.ndindex(p.shape):
            orig = p.data[idx]
            p.data[idx] = orig + h
            fp = f().item()
            p.data[idx] = orig - h
            fm = f().item()
            p.data[idx] = orig
            numeric = (fp - fm) / (2.0 * h)
            err = abs(ga[idx] - numeric) / (abs(numeric) + 1e-8)
            worst = max(worst, err)
    return worst
