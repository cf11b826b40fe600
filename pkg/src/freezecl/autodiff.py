"""Minimal define-by-run reverse-mode differentiation over float64 arrays.

Operations record themselves on the innermost active :class:`Tape` when at
least one input requires a gradient. Outside a tape (or on constant inputs)
they are plain numpy evaluations, which is how frozen teacher models run.

    >>> w = Tensor([1.0, 2.0], trainable=True)
    >>> with Tape() as tape:
    ...     loss = reduce_mean(mul(w, w))
    >>> tape.backward(loss)
    >>> w.grad.tolist()
    [1.0, 2.0]
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, EmptyInputError, NumericError

_TAPES: list["Tape"] = []


class Tensor:
    """Dense float64 array with a lazily allocated gradient buffer."""

    __slots__ = ("data", "grad", "trainable", "requires_grad", "name")

    def __init__(self, data, trainable: bool = False, name: str = ""):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.trainable = trainable
        self.requires_grad = trainable
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        """Row-major flat view of the data."""
        return self.data.reshape(-1)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        flag = ", trainable" if self.trainable else ""
        return f"Tensor(shape={self.shape}{flag}, name={self.name!r})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


def constant(array) -> Tensor:
    """Wrap an array as a non-trainable tensor without copying when possible."""
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(array, dtype=np.float64)
    out.grad = None
    out.trainable = False
    out.requires_grad = False
    out.name = ""
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


class Tape:
    """Ordered record of differentiable operations.

    Records are appended as operations execute, so the list is topologically
    sorted by construction and the reverse walk visits each node after all of
    its consumers.
    """

    def __init__(self):
        self.records: list[tuple[tuple[Tensor, ...], Tensor, Callable]] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def record(self, inputs: tuple[Tensor, ...], out: Tensor, rule: Callable) -> None:
        self.records.append((inputs, out, rule))

    def backward(self, loss: Tensor, params: Iterable[Tensor] = ()) -> None:
        """Accumulate d(loss)/d(leaf) into ``grad`` of every trainable leaf.

        Tensors listed in ``params`` that the loss does not depend on receive
        an explicit zero gradient.
        """
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not any(out is loss for _, out, _ in reversed(self.records)):
            raise ContractError("loss was not produced on this tape")
        pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for inputs, out, rule in reversed(self.records):
            g = pending.pop(id(out), None)
            if g is None:
                continue
            for inp, gi in zip(inputs, rule(g)):
                if gi is None or not inp.requires_grad:
                    continue
                if inp.trainable:
                    if inp.grad is None:
                        inp.grad = np.zeros_like(inp.data)
                    inp.grad += gi
                else:
                    key = id(inp)
                    if key in pending:
                        pending[key] = pending[key] + gi
                    else:
                        pending[key] = gi
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)


def _emit(data: np.ndarray, inputs: tuple[Tensor, ...], rule: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.trainable = False
    out.name = ""
    out.requires_grad = any(t.requires_grad for t in inputs)
    if out.requires_grad and _TAPES:
        _TAPES[-1].record(inputs, out, rule)
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are incompatible")


def _nonempty(x: Tensor, op: str) -> None:
    if x.data.size == 0:
        raise EmptyInputError(f"{op}: empty input of shape {x.shape}")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not chain")
    A, B = a.data, b.data

    def rule(g):
        return (g @ B.T if a.requires_grad else None,
                A.T @ g if b.requires_grad else None)

    return _emit(A @ B, (a, b), rule)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "add")
    return _emit(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "sub")
    return _emit(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "mul")
    A, B = a.data, b.data
    return _emit(A * B, (a, b), lambda g: (g * B, g * A))


def add_bias(x, bias) -> Tensor:
    """Add a length-d bias to every row of an n×d tensor."""
    x, bias = as_tensor(x), as_tensor(bias)
    if x.data.ndim != 2 or bias.shape != (x.shape[1],):
        raise DimensionError(f"add_bias: bias {bias.shape} does not broadcast over rows of {x.shape}")
    return _emit(x.data + bias.data, (x, bias), lambda g: (g, g.sum(axis=0)))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _emit(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    c = float(c)
    return _emit(x.data * c, (x,), lambda g: (g * c,))


def reduce_mean(x) -> Tensor:
    x = as_tensor(x)
    _nonempty(x, "reduce_mean")
    n = x.data.size
    shape = x.shape
    return _emit(np.array(x.data.mean()), (x,), lambda g: (np.full(shape, g / n),))


def sum_rows(x) -> Tensor:
    """Sum along the last dimension: n×d -> n."""
    x = as_tensor(x)
    _nonempty(x, "sum_rows")
    shape = x.shape
    return _emit(x.data.sum(axis=-1), (x,), lambda g: (np.broadcast_to(g[..., None], shape),))


def log_softmax_rows(x) -> Tensor:
    x = as_tensor(x)
    _nonempty(x, "log_softmax_rows")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    soft = np.exp(out)
    return _emit(out, (x,), lambda g: (g - soft * g.sum(axis=-1, keepdims=True),))


def squared_l2_rows(x) -> Tensor:
    x = as_tensor(x)
    _nonempty(x, "squared_l2_rows")
    X = x.data
    return _emit((X * X).sum(axis=-1), (x,), lambda g: (2.0 * X * g[..., None],))


def l2_normalize_rows(x, floor: float = 1e-12) -> Tensor:
    x = as_tensor(x)
    _nonempty(x, "l2_normalize_rows")
    norm = np.maximum(np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True)), floor)
    y = x.data / norm

    def rule(g):
        return ((g - y * (g * y).sum(axis=-1, keepdims=True)) / norm,)

    return _emit(y, (x,), rule)


def pick(x, cols: Sequence[int]) -> Tensor:
    """Gather ``x[i, cols[i]]`` for every row i."""
    x = as_tensor(x)
    cols = np.asarray(cols, dtype=np.intp)
    if x.data.ndim != 2 or cols.shape != (x.shape[0],):
        raise DimensionError(f"pick: {cols.shape} column indices for tensor {x.shape}")
    rows = np.arange(x.shape[0])
    shape = x.shape

    def rule(g):
        gx = np.zeros(shape)
        gx[rows, cols] = g
        return (gx,)

    return _emit(x.data[rows, cols], (x,), rule)


def take_rows(x, rows: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    rows = np.asarray(rows, dtype=np.intp)
    shape = x.shape

    def rule(g):
        gx = np.zeros(shape)
        np.add.at(gx, rows, g)
        return (gx,)

    return _emit(x.data[rows], (x,), rule)


def grad_check(model_loss: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-6) -> float:
    """Max relative error between tape gradients and central differences.

    ``model_loss`` must rebuild the loss from the current parameter values on
    every call. The relative error per entry is
    ``|analytic - numeric| / max(1, |numeric|)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = model_loss()
    if not np.isfinite(loss.data).all():
        raise NumericError(f"non-finite loss {loss.item()}")
    tape.backward(loss, params)

    worst = 0.0
    for p in params:
        analytic = p.grad.reshape(-1)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = model_loss().item()
            flat[i] = orig - eps
            down = model_loss().item()
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError(f"non-finite loss while probing {p.name or 'param'}[{i}]")
            numeric = (up - down) / (2 * eps)
            worst = max(worst, abs(analytic[i] - numeric) / max(1.0, abs(numeric)))
    return worst
