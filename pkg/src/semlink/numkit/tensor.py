"""Dense 2-D float64 tensors with reverse-mode gradients.

The computation graph is a tape over a fixed operator set (dense, relu,
row softmax, cross entropy, elementwise add/mul, row sums, reshapes,
row gathers, weighted block sums). Every op returns a new Tensor that
remembers its parents and how to push gradients back to them; calling
``backward()`` on a 1x1 loss propagates through the whole tape.

All public operations validate that their outputs are finite and are
deterministic given identical inputs (no hidden RNG).
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError, NumericError, StateError


def _as_2d(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise DimensionError(f"tensors are 2-D, got shape {arr.shape}")
    return arr


class Tensor:
    """A rows x cols float64 value on the tape.

    ``data`` is the value, ``grad`` the accumulated dL/dself (filled in by
    ``backward``). Scalars live as 1x1, vectors as 1xN rows.
    """

    __slots__ = ("data", "grad", "_parents", "_backward_fn")

    def __init__(self, data, _parents=(), _backward_fn=None):
        arr = _as_2d(data)
        if not np.isfinite(arr).all():
            raise NumericError("tensor contains NaN/Inf")
        self.data = arr
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward_fn = _backward_fn

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
            raise DimensionError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Propagate dL/dx to every tensor this 1x1 loss was computed from."""
        if self.data.shape != (1, 1):
            raise DimensionError("backward() starts from a 1x1 loss tensor")
        if not self._parents:
            raise StateError("backward() called on a tensor with no recorded forward pass")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones((1, 1)))
        for node in reversed(topo):
            if node._backward_fn is not None:
                node._backward_fn(node.grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


class Param(Tensor):
    """A named, possibly-trainable tensor. grad is always allocated."""

    __slots__ = ("trainable", "name")

    def __init__(self, data, trainable: bool = True, name: str = ""):
        super().__init__(data)
        self.grad = np.zeros_like(self.data)
        self.trainable = trainable
        self.name = name

    def __repr__(self) -> str:
        return f"Param({self.name!r}, shape={self.shape}, trainable={self.trainable})"


def zero_grads(params) -> None:
    for p in params:
        p.grad = np.zeros_like(p.data)


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Reduce a gradient back to the shape it was broadcast from."""
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise DimensionError(f"matmul {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data, (a, b))

    def bwd(g):
        a._accumulate(g @ b.data.T)
        b._accumulate(a.data.T @ g)

    out._backward_fn = bwd
    return out


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """y = x @ w + b, bias row broadcast over the batch."""
    if x.cols != w.rows:
        raise DimensionError(f"dense input {x.shape} vs weight {w.shape}")
    if b.shape != (1, w.cols):
        raise DimensionError(f"dense bias {b.shape} vs weight {w.shape}")
    out = Tensor(x.data @ w.data + b.data, (x, w, b))

    def bwd(g):
        x._accumulate(g @ w.data.T)
        w._accumulate(x.data.T @ g)
        b._accumulate(g.sum(axis=0, keepdims=True))

    out._backward_fn = bwd
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data, (a, b))

    def bwd(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    out._backward_fn = bwd
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data, (a, b))

    def bwd(g):
        a._accumulate(_unbroadcast(g * b.data, a.shape))
        b._accumulate(_unbroadcast(g * a.data, b.shape))

    out._backward_fn = bwd
    return out


def scale(x: Tensor, c: float) -> Tensor:
    out = Tensor(x.data * c, (x,))

    def bwd(g):
        x._accumulate(g * c)

    out._backward_fn = bwd
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(0.0, x.data), (x,))

    def bwd(g):
        x._accumulate(g * (x.data > 0.0))

    out._backward_fn = bwd
    return out


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Stable row softmax on a plain array (max-subtracted)."""
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def row_softmax(x: Tensor) -> Tensor:
    s = softmax_rows(x.data)
    out = Tensor(s, (x,))

    def bwd(g):
        x._accumulate(s * (g - (g * s).sum(axis=1, keepdims=True)))

    out._backward_fn = bwd
    return out


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-softmax probability of the true class.

    labels: int array of length logits.rows, each in [0, n_classes).
    """
    lab = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, c = logits.shape
    if lab.shape[0] != n:
        raise DimensionError(f"{lab.shape[0]} labels for {n} logit rows")
    if lab.min(initial=0) < 0 or lab.max(initial=0) >= c:
        raise ValueError(f"labels must lie in [0, {c})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    loss = -logp[np.arange(n), lab].mean()
    out = Tensor([[loss]], (logits,))
    probs = np.exp(logp)

    def bwd(g):
        gl = probs.copy()
        gl[np.arange(n), lab] -= 1.0
        logits._accumulate(gl * (g[0, 0] / n))

    out._backward_fn = bwd
    return out


def row_sum(x: Tensor) -> Tensor:
    out = Tensor(x.data.sum(axis=1, keepdims=True), (x,))

    def bwd(g):
        x._accumulate(np.broadcast_to(g, x.shape).copy())

    out._backward_fn = bwd
    return out


def reshape(x: Tensor, rows: int, cols: int) -> Tensor:
    if rows * cols != x.rows * x.cols:
        raise DimensionError(f"cannot reshape {x.shape} to ({rows}, {cols})")
    out = Tensor(x.data.reshape(rows, cols), (x,))

    def bwd(g):
        x._accumulate(g.reshape(x.shape))

    out._backward_fn = bwd
    return out


def col_slice(x: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start < stop <= x.cols):
        raise DimensionError(f"slice [{start}:{stop}] of {x.cols} columns")
    out = Tensor(x.data[:, start:stop].copy(), (x,))

    def bwd(g):
        gx = np.zeros(x.shape)
        gx[:, start:stop] = g
        x._accumulate(gx)

    out._backward_fn = bwd
    return out


def gather_rows(x: Tensor, indices) -> Tensor:
    """out[r] = x[indices[r]]; backward scatter-adds."""
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.min(initial=0) < 0 or idx.max(initial=-1) >= x.rows:
        raise DimensionError(f"gather indices out of range for {x.rows} rows")
    out = Tensor(x.data[idx], (x,))

    def bwd(g):
        gx = np.zeros(x.shape)
        np.add.at(gx, idx, g)
        x._accumulate(gx)

    out._backward_fn = bwd
    return out


def weighted_block_sum(w: Tensor, v: Tensor) -> Tensor:
    """out[r] = sum_j w[r, j] * v[r*J + j]  with w (R, J), v (R*J, D)."""
    r, j = w.shape
    if v.rows != r * j:
        raise DimensionError(f"values have {v.rows} rows, expected {r}*{j}")
    v3 = v.data.reshape(r, j, v.cols)
    out = Tensor(np.einsum("rj,rjd->rd", w.data, v3), (w, v))

    def bwd(g):
        w._accumulate(np.einsum("rd,rjd->rj", g, v3))
        v._accumulate((w.data[:, :, None] * g[:, None, :]).reshape(r * j, v.cols))

    out._backward_fn = bwd
    return out
