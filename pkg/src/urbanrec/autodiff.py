"""Minimal reverse-mode automatic differentiation over numpy arrays.

The training objective mixes graph propagation, softmax attention, distance
correlation and pairwise ranking losses; deriving all of those gradients by
hand would be brittle.  Instead every forward computation is recorded on a
small tape of :class:`Tensor` nodes and gradients are obtained by walking the
tape backwards.  Only the handful of operations the model actually needs are
implemented.  All data is float64.

Gradient correctness is enforced against central finite differences (see
``training.run_gradcheck`` and the test suite).
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A numpy array plus the bookkeeping needed for reverse-mode autodiff."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd")

    # keep numpy from consuming `ndarray <op> Tensor` elementwise; with this
    # set, numpy returns NotImplemented and Python calls our reflected op
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._bwd = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    # -- graph construction -------------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        # never mutate g in place: grads may be shared between children
        self.grad = g if self.grad is None else self.grad + g

    def backward(self) -> None:
        """Backpropagate from a scalar tensor through the recorded tape."""
        if self.data.shape != ():
            raise ValueError("backward() requires a scalar tensor")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones((), dtype=np.float64)
        for node in reversed(topo):
            if node._bwd is not None:
                node._bwd(node.grad)

    # -- operators ------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def astensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple, bwd) -> Tensor:
    """Create a tape node; constants short-circuit so the tape stays small."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._bwd = bwd
    return out


# -- arithmetic ----------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    out_data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _node(out_data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    out_data = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.data.shape))

    return _node(out_data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    out_data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _node(out_data, (a, b), bwd)


def div(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    out_data = a.data / b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _node(out_data, (a, b), bwd)


def neg(a) -> Tensor:
    a = astensor(a)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(-g)

    return _node(-a.data, (a,), bwd)


def matmul(a, b) -> Tensor:
    """2-D matrix product."""
    a, b = astensor(a), astensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul supports 2-D operands only")
    out_data = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _node(out_data, (a, b), bwd)


def transpose(a) -> Tensor:
    a = astensor(a)
    if a.ndim != 2:
        raise ValueError("transpose supports 2-D tensors only")

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g.T)

    return _node(a.data.T, (a,), bwd)


def reshape(a, shape) -> Tensor:
    a = astensor(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.data.shape))

    return _node(a.data.reshape(shape), (a,), bwd)


# -- reductions ------------------------------------------------------------------


def _expand_reduced(g: np.ndarray, shape: tuple, axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    axes = axis if isinstance(axis, tuple) else (axis,)
    if not keepdims:
        for ax in sorted(a % len(shape) for a in axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = astensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_expand_reduced(g, a.data.shape, axis, keepdims))

    return _node(out_data, (a,), bwd)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = astensor(a)
    out_data = a.data.mean(axis=axis, keepdims=keepdims)
    n = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_expand_reduced(g, a.data.shape, axis, keepdims) / n)

    return _node(out_data, (a,), bwd)


# -- indexing and sparse aggregation ----------------------------------------------


def gather(a, idx) -> Tensor:
    """Select rows ``a[idx]`` for an integer index array."""
    a = astensor(a)
    idx = np.asarray(idx, dtype=np.int64)

    def bwd(g):
        if not a.requires_grad:
            return
        if a.data.ndim == 2 and idx.ndim == 1 and g.ndim == 2:
            # scatter-add via one flat bincount; much faster than np.add.at
            rows, cols = a.data.shape
            flat = (idx[:, None] * cols + np.arange(cols)).ravel()
            ga = np.bincount(flat, weights=np.ascontiguousarray(g).ravel(),
                             minlength=rows * cols).reshape(rows, cols)
        else:
            ga = np.zeros_like(a.data)
            np.add.at(ga, idx, g)
        a._accumulate(ga)

    return _node(a.data[idx], (a,), bwd)


def spmm(mat: sp.spmatrix, x, mat_t: sp.spmatrix | None = None) -> Tensor:
    """Multiply a constant sparse matrix with a dense tensor.

    ``mat_t`` may carry a precomputed transpose in CSR form; callers on hot
    paths should supply it so the backward pass avoids re-transposing.
    """
    x = astensor(x)
    out_data = mat @ x.data
    if mat_t is None:
        mat_t = mat.T.tocsr()

    def bwd(g):
        if x.requires_grad:
            x._accumulate(mat_t @ g)

    return _node(out_data, (x,), bwd)


# -- nonlinearities -----------------------------------------------------------------


def softmax(a, axis=-1) -> Tensor:
    """Row-stable softmax; the max shift is treated as a constant."""
    a = astensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        if a.requires_grad:
            inner = (g * y).sum(axis=axis, keepdims=True)
            a._accumulate(y * (g - inner))

    return _node(y, (a,), bwd)


def tanh(a) -> Tensor:
    a = astensor(a)
    y = np.tanh(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * (1.0 - y * y))

    return _node(y, (a,), bwd)


def sqrt(a) -> Tensor:
    """Square root; the subgradient at 0 is taken as 0 so clamped values stay finite."""
    a = astensor(a)
    y = np.sqrt(a.data)

    def bwd(g):
        if a.requires_grad:
            safe = np.where(a.data > 0.0, np.maximum(y, 1e-300), 1.0)
            a._accumulate(g * np.where(a.data > 0.0, 0.5 / safe, 0.0))

    return _node(y, (a,), bwd)


def absval(a) -> Tensor:
    a = astensor(a)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * np.sign(a.data))

    return _node(np.abs(a.data), (a,), bwd)


def clamp_min(a, lo: float) -> Tensor:
    a = astensor(a)
    y = np.maximum(a.data, lo)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * (a.data > lo))

    return _node(y, (a,), bwd)


def softplus(a) -> Tensor:
    """log(1 + exp(x)) computed without overflow; softplus(-z) = -log(sigmoid(z))."""
    a = astensor(a)
    y = np.logaddexp(0.0, a.data)

    def bwd(g):
        if a.requires_grad:
            # derivative is sigmoid(x), evaluated stably
            s = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(a.data))),
                         np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))
            a._accumulate(g * s)

    return _node(y, (a,), bwd)
