"""Dense float64 matrices with reverse-mode gradients and an Adam optimizer.

Every value is a 2-D float64 matrix. Operations build an implicit tape
(each result remembers its parents and a backward closure); `backward`
replays it in reverse topological order exactly once. Everything runs in
64-bit so gradient checks and run-to-run determinism hold to machine
precision.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Tensor",
    "ShapeError",
    "NonFiniteError",
    "backward",
    "matmul",
    "add",
    "mul",
    "scale",
    "leaky_relu",
    "sigmoid",
    "log_sigmoid",
    "log",
    "concat_cols",
    "concat_rows",
    "gather_rows",
    "spmm",
    "dropout",
    "row_sum",
    "sum_all",
    "mean_all",
    "l2_norm_sq",
    "Adam",
    "grad_check",
]


class ShapeError(ValueError):
    """Operands with incompatible shapes."""


class NonFiniteError(ValueError):
    """A NaN or infinity where a finite value is required."""


def _as_matrix(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError(f"expected at most 2 dimensions, got shape {arr.shape}")
    return arr


class Tensor:
    """A rows x cols float64 node in the computation graph.

    Leaves hold data (trainable when `requires_grad`); op results carry a
    backward closure linking them to their parents. NaN/Inf are rejected
    at construction.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _backward: Callable[[], None] | None = None):
        arr = _as_matrix(data)
        if not np.isfinite(arr).all():
            label = name or "tensor"
            raise NonFiniteError(f"non-finite values in {label} of shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.data.shape}")
        return float(self.data[0, 0])

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag}, requires_grad={self.requires_grad})"

    # Operator sugar; all graph construction goes through the module-level ops.
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return add(self, scale(other, -1.0))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


def _result(data, parents: Sequence[Tensor], backward_fn, name=None) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, name=name,
                  _parents=tuple(parents), _backward=backward_fn if needs else None)


def backward(loss: Tensor, params: Iterable[Tensor] = ()) -> None:
    """Accumulate d(loss)/d(node) into `.grad` for every node reachable
    from `loss`, visiting nodes in reverse topological order exactly once.

    All accumulators are zeroed first; `params` not reachable from the
    loss end up with zero gradients rather than stale or missing ones.
    """
    if loss.shape != (1, 1):
        raise ShapeError(f"backward needs a scalar (1x1) loss, got {loss.shape}")
    if not loss._parents:
        raise ValueError("backward on an empty tape: loss has no recorded operations")

    # Iterative DFS topological sort over grad-requiring ancestry.
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))

    for p in params:
        p.grad = np.zeros_like(p.data)
    for node in order:
        if id(node) in seen:
            node.grad = np.zeros_like(node.data)
    loss.grad = np.ones((1, 1))

    for node in reversed(order):
        if node._backward is not None:
            node._backward()


# ---------------------------------------------------------------------------
# Primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = _result(a.data @ b.data, (a, b), None)

    def backward_fn():
        if a.requires_grad:
            a.grad += out.grad @ b.data.T
        if b.requires_grad:
            b.grad += a.data.T @ out.grad

    out._backward = backward_fn if out.requires_grad else None
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; a 1-row operand broadcasts over the other's rows."""
    if a.shape != b.shape:
        broadcast_ok = a.cols == b.cols and (a.rows == 1 or b.rows == 1)
        if not broadcast_ok:
            raise ShapeError(f"add shape mismatch: {a.shape} + {b.shape}")
    out = _result(a.data + b.data, (a, b), None)

    def backward_fn():
        if a.requires_grad:
            g = out.grad
            a.grad += g.sum(axis=0, keepdims=True) if a.rows == 1 and out.rows > 1 else g
        if b.requires_grad:
            g = out.grad
            b.grad += g.sum(axis=0, keepdims=True) if b.rows == 1 and out.rows > 1 else g

    out._backward = backward_fn if out.requires_grad else None
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard (elementwise) product of equal-shape matrices."""
    if a.shape != b.shape:
        raise ShapeError(f"elementwise multiply shape mismatch: {a.shape} * {b.shape}")
    out = _result(a.data * b.data, (a, b), None)

    def backward_fn():
        if a.requires_grad:
            a.grad += out.grad * b.data
        if b.requires_grad:
            b.grad += out.grad * a.data

    out._backward = backward_fn if out.requires_grad else None
    return out


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = _result(a.data * c, (a,), None)

    def backward_fn():
        if a.requires_grad:
            a.grad += out.grad * c

    out._backward = backward_fn if out.requires_grad else None
    return out


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    positive = a.data > 0
    out = _result(np.where(positive, a.data, slope * a.data), (a,), None)

    def backward_fn():
        if a.requires_grad:
            a.grad += out.grad * np.where(positive, 1.0, slope)

    out._backward = backward_fn if out.requires_grad else None
    return out


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # Split by sign to avoid overflow in exp for large |x|.
    s = np.empty_like(x)
    pos = x >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    s[~pos] = ex / (1.0 + ex)
    out = _result(s, (a,), None)

    def backward_fn():
        if a.requires_grad:
            a.grad += out.grad * s * (1.0 - s)

    out._backward = backward_fn if out.requires_grad else None
    return out


def log_sigmoid(a: Tensor) -> Tensor:
    """ln(sigmoid(x)), computed as -softplus(-x) so it stays finite even
    when sigmoid itself underflows to 0 for very negative x."""
    x = a.data
    out = _result(-np.logaddexp(0.0, -x), (a,), None)

    def backward_fn():
        if a.requires_grad:
            # d/dx ln(sigmoid(x)) = sigmoid(-x), split by sign as above
            s = np.empty_like(x)
            pos = x >= 0
            s[pos] = np.exp(-x[pos]) / (1.0 + np.exp(-x[pos]))
            s[~pos] = 1.0 / (1.0 + np.exp(x[~pos]))
            a.grad += out.grad * s

    out._backward = backward_fn if out.requires_grad else None
    return out


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        worst = float(a.data.min())
        raise NonFiniteError(f"log of non-positive value (min entry {worst!r})")
    out = _result(np.log(a.data), (a,), None)

    def backward_fn():
        if a.requires_grad:
            a.grad += out.grad / a.data

    out._backward = backward_fn if out.requires_grad else None
    return out


def concat_cols(tensors: Sequence[Tensor]) -> Tensor:
    if not tensors:
        raise ShapeError("concat_cols of zero tensors")
    rows = tensors[0].rows
    for t in tensors[1:]:
        if t.rows != rows:
            raise ShapeError(f"concat_cols row mismatch: {tensors[0].shape} vs {t.shape}")
    out = _result(np.hstack([t.data for t in tensors]), tuple(tensors), None)
    offsets = np.cumsum([0] + [t.cols for t in tensors])

    def backward_fn():
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                t.grad += out.grad[:, lo:hi]

    out._backward = backward_fn if out.requires_grad else None
    return out


def concat_rows(tensors: Sequence[Tensor]) -> Tensor:
    if not tensors:
        raise ShapeError("concat_rows of zero tensors")
    cols = tensors[0].cols
    for t in tensors[1:]:
        if t.cols != cols:
            raise ShapeError(f"concat_rows column mismatch: {tensors[0].shape} vs {t.shape}")
    out = _result(np.vstack([t.data for t in tensors]), tuple(tensors), None)
    offsets = np.cumsum([0] + [t.rows for t in tensors])

    def backward_fn():
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                t.grad += out.grad[lo:hi, :]

    out._backward = backward_fn if out.requires_grad else None
    return out


def gather_rows(a: Tensor, indices) -> Tensor:
    """Select rows by index; duplicate indices accumulate on backward."""
    idx = np.asarray(indices, dtype=np.intp).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= a.rows):
        raise IndexError(f"row index out of range for {a.rows} rows: {int(idx.min())}..{int(idx.max())}")
    out = _result(a.data[idx], (a,), None)

    def backward_fn():
        if a.requires_grad:
            np.add.at(a.grad, idx, out.grad)

    out._backward = backward_fn if out.requires_grad else None
    return out


def spmm(matrix: sp.spmatrix, x: Tensor) -> Tensor:
    """Sparse-dense product `matrix @ x`; the sparse operand is constant."""
    if matrix.shape[1] != x.rows:
        raise ShapeError(f"spmm shape mismatch: {matrix.shape} @ {x.shape}")
    out = _result(np.asarray(matrix @ x.data), (x,), None)

    def backward_fn():
        if x.requires_grad:
            x.grad += np.asarray(matrix.T @ out.grad)

    out._backward = backward_fn if out.requires_grad else None
    return out


def dropout(a: Tensor, ratio: float, rng: np.random.Generator | None = None,
            training: bool = True) -> Tensor:
    """Inverted dropout: kept entries are scaled by 1/(1-ratio).

    Ratio 0 (or inference mode) is the identity, returning `a` itself.
    """
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"dropout ratio must be in [0, 1), got {ratio}")
    if ratio == 0.0 or not training:
        return a
    if rng is None:
        raise ValueError("dropout with ratio > 0 needs an explicit rng")
    keep = 1.0 - ratio
    mask = (rng.random(a.shape) < keep) / keep
    out = _result(a.data * mask, (a,), None)

    def backward_fn():
        if a.requires_grad:
            a.grad += out.grad * mask

    out._backward = backward_fn if out.requires_grad else None
    return out


def row_sum(a: Tensor) -> Tensor:
    """Sum over columns, giving a rows x 1 matrix."""
    out = _result(a.data.sum(axis=1, keepdims=True), (a,), None)

    def backward_fn():
        if a.requires_grad:
            a.grad += np.broadcast_to(out.grad, a.shape)

    out._backward = backward_fn if out.requires_grad else None
    return out


def sum_all(a: Tensor) -> Tensor:
    out = _result(a.data.sum(), (a,), None)

    def backward_fn():
        if a.requires_grad:
            a.grad += out.grad[0, 0]

    out._backward = backward_fn if out.requires_grad else None
    return out


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    if n == 0:
        raise ShapeError("mean of an empty tensor")
    out = _result(a.data.sum() / n, (a,), None)

    def backward_fn():
        if a.requires_grad:
            a.grad += out.grad[0, 0] / n

    out._backward = backward_fn if out.requires_grad else None
    return out


def l2_norm_sq(a: Tensor) -> Tensor:
    """Squared Frobenius norm as a 1x1 tensor."""
    out = _result(np.sum(a.data * a.data), (a,), None)

    def backward_fn():
        if a.requires_grad:
            a.grad += 2.0 * a.data * out.grad[0, 0]

    out._backward = backward_fn if out.requires_grad else None
    return out


# ---------------------------------------------------------------------------
# Optimizer


class Adam(object):
    """Adam with bias correction over a named parameter dict.

    Moment tensors shape-match their parameters; the step counter only
    increases. Parameters are checked finite after every step.
    """

    def __init__(self, params: dict[str, Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ShapeError(f"gradient shape {g.shape} does not match parameter "
                                 f"'{name}' of shape {p.data.shape}")
            if not np.isfinite(g).all():
                raise NonFiniteError(f"non-finite gradient for parameter '{name}'")
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data = p.data - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if not np.isfinite(p.data).all():
                raise NonFiniteError(f"non-finite values in parameter '{name}' after step {self.t}")


# ---------------------------------------------------------------------------
# Gradient checking


def grad_check(loss_fn: Callable[[], Tensor], params: dict[str, Tensor],
               eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    `loss_fn` must rebuild its graph on every call; the finite-difference
    side only ever evaluates it forward, staying independent of the
    backward pass it is checking. Every parameter entry is perturbed.
    """
    loss = loss_fn()
    backward(loss, params.values())
    analytic = {name: p.grad.copy() for name, p in params.items()}

    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = loss_fn().item()
            flat[k] = orig - eps
            down = loss_fn().item()
            flat[k] = orig
            numeric = (up - down) / (2.0 * eps)
            a = analytic[name].reshape(-1)[k]
            denom = max(abs(a), abs(numeric), 1e-6)
            worst = max(worst, abs(a - numeric) / denom)
    return worst
