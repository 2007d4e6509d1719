"""Reverse-mode automatic differentiation over float64 numpy arrays.

Small engine in the micrograd style: every operation records its parents
and a backward closure; ``Tensor.backward()`` walks the graph in reverse
topological order and accumulates gradients additively. All data is
64-bit, row-major. Gradients persist across backward calls until
``zero_grad`` is called explicitly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import (
    DisconnectedGraphWarning,
    InvalidLength,
    InvalidStride,
    NonFiniteValue,
    NonScalarLoss,
    ShapeMismatch,
)


class Tensor:
    """A float64 ndarray plus optional gradient bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteValue("tensor data contains NaN or Inf")
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    # -- autodiff ------------------------------------------------------------

    def backward(self):
        """Accumulate d(self)/d(leaf) into .grad of every reachable tensor.

        self must hold exactly one element. Raises NonScalarLoss otherwise;
        warns and returns if nothing reachable requires a gradient.
        """
        if self.data.size != 1:
            raise NonScalarLoss(f"loss has {self.data.size} elements, expected 1")
        if not np.isfinite(self.data.reshape(-1)[0]):
            raise NonFiniteValue("loss is not finite")
        if not self.requires_grad:
            warnings.warn(
                "backward() on a graph with no differentiable inputs is a no-op",
                DisconnectedGraphWarning,
                stacklevel=2,
            )
            return

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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        _accum(self, np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # -- operator sugar --------------------------------------------------------

    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __neg__(self):
        return neg(self)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _make(data: np.ndarray, parents: tuple, backward_fn) -> Tensor:
    """Internal node constructor; skips the finite scan on the hot path."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = any(p.requires_grad for p in parents)
    out.grad = None
    if out.requires_grad:
        out._parents = parents
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _accum(t: Tensor, g: np.ndarray):
    # Backward closures emit arrays they never mutate afterwards, so the
    # first accumulation may share instead of copy.
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g down to `shape` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def zero_grads(tensors):
    for t in tensors:
        t.grad = None


def backward(loss: Tensor):
    """Module-level alias for Tensor.backward()."""
    loss.backward()


# -- elementwise arithmetic ----------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def _bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), _bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def _bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g, b.data.shape))

    return _make(data, (a, b), _bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def _bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), _bwd)


def neg(a: Tensor) -> Tensor:
    def _bwd(g):
        _accum(a, -g)

    return _make(-a.data, (a,), _bwd)


def relu(a: Tensor) -> Tensor:
    """Elementwise max(0, x); gradient at exactly 0 is 0."""
    data = np.maximum(a.data, 0.0)

    # out > 0 iff x > 0, and out is freshly contiguous, so mask on out
    def _bwd(g):
        _accum(a, _kernels.relu_bwd(data, g))

    return _make(data, (a,), _bwd)


def clamp_min(a: Tensor, floor: float) -> Tensor:
    """max(x, floor); gradient is 0 where the clamp is active."""
    data = np.maximum(a.data, floor)

    def _bwd(g):
        _accum(a, g * (data > floor))

    return _make(data, (a,), _bwd)


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def _bwd(g):
        _accum(a, g / a.data)

    return _make(data, (a,), _bwd)


def safe_sqrt(a: Tensor) -> Tensor:
    """sqrt with the subgradient 0 at x = 0 (used for norms and moduli)."""
    data = np.sqrt(a.data)

    def _bwd(g):
        denom = np.where(data > 0.0, data, 1.0)
        _accum(a, g * np.where(data > 0.0, 0.5 / denom, 0.0))

    return _make(data, (a,), _bwd)


# -- reductions and shape ops ----------------------------------------------------


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)
    data = np.asarray(data)

    def _bwd(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape).copy())
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(ge, a.data.shape).copy())

    return _make(data, (a,), _bwd)


def tensor_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.data.size
    else:
        n = a.data.shape[axis]
    data = np.asarray(a.data.mean(axis=axis, keepdims=keepdims))

    def _bwd(g):
        if axis is None:
            _accum(a, np.broadcast_to(g / n, a.data.shape).copy())
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(ge / n, a.data.shape).copy())

    return _make(data, (a,), _bwd)


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)

    def _bwd(g):
        _accum(a, g.reshape(a.data.shape))

    return _make(data, (a,), _bwd)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def _bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                _accum(t, g[tuple(idx)])

    return _make(data, tensors, _bwd)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along `axis`."""
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    data = np.ascontiguousarray(a.data[idx])

    def _bwd(g):
        buf = np.zeros_like(a.data)
        buf[idx] = g
        _accum(a, buf)

    return _make(data, (a,), _bwd)


def take_rows(a: Tensor, indices) -> Tensor:
    """Gather rows of a 2-D tensor; duplicate indices accumulate on backward."""
    idx = np.asarray(indices, dtype=np.intp)
    data = a.data[idx]

    def _bwd(g):
        buf = np.zeros_like(a.data)
        for pos, row in enumerate(idx):
            buf[row] += g[pos]
        _accum(a, buf)

    return _make(data, (a,), _bwd)


# -- linear algebra --------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatch(f"matmul: {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data

    def _bwd(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ g)

    return _make(data, (a, b), _bwd)


def linear(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map rows(x) @ weights + bias for x of shape (N, Din)."""
    if x.data.ndim != 2 or weights.data.ndim != 2:
        raise ShapeMismatch("linear expects 2-D input and weights")
    if x.data.shape[1] != weights.data.shape[0]:
        raise ShapeMismatch(
            f"linear: input {x.data.shape} incompatible with weights {weights.data.shape}"
        )
    if bias.data.shape != (weights.data.shape[1],):
        raise ShapeMismatch(
            f"linear: bias {bias.data.shape} incompatible with weights {weights.data.shape}"
        )
    data = x.data @ weights.data + bias.data

    def _bwd(g):
        if x.requires_grad:
            _accum(x, g @ weights.data.T)
        if weights.requires_grad:
            _accum(weights, x.data.T @ g)
        if bias.requires_grad:
            _accum(bias, g.sum(axis=0))

    return _make(data, (x, weights, bias), _bwd)


def conv1d(x: Tensor, kernels: Tensor, stride: int = 1) -> Tensor:
    """Valid (no padding) 1-D cross-correlation.

    x: (Cin, L) or batched (N, Cin, L); kernels: (Cout, Cin, K).
    Output length is floor((L - K) / stride) + 1.
    """
    if not isinstance(stride, (int, np.integer)) or stride < 1:
        raise InvalidStride(f"stride must be a positive integer, got {stride!r}")
    if kernels.data.ndim != 3:
        raise ShapeMismatch(f"kernels must be (Cout, Cin, K), got {kernels.data.shape}")
    squeeze = x.data.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3:
        raise ShapeMismatch(f"input must be (Cin, L) or (N, Cin, L), got {x.data.shape}")
    n, cin, length = xd.shape
    cout, kcin, ksz = kernels.data.shape
    if kcin != cin:
        raise ShapeMismatch(f"input has {cin} channels but kernels expect {kcin}")
    if ksz > length:
        raise ShapeMismatch(f"kernel size {ksz} exceeds input length {length}")
    lp = (length - ksz) // stride + 1

    col = _kernels.im2col(xd, ksz, stride)
    wmat = kernels.data.reshape(cout, cin * ksz)
    # the (N, Cout, Lp) result stays a transposed view; consumers that need
    # contiguity (ufuncs, the next im2col) regenerate it at no extra cost
    out = (col @ wmat.T).reshape(n, lp, cout).transpose(0, 2, 1)
    if squeeze:
        out = out[0]

    def _bwd(g):
        gd = g[None] if squeeze else g
        gor = _kernels.ncl_to_rows(gd)
        if kernels.requires_grad:
            _accum(kernels, (gor.T @ col).reshape(cout, cin, ksz))
        if x.requires_grad:
            gx = _kernels.col2im(gor @ wmat, n, cin, length, ksz, stride)
            _accum(x, gx[0] if squeeze else gx)

    return _make(out, (x, kernels), _bwd)


def avg_pool_to(x: Tensor, bins: int) -> Tensor:
    """Mean-pool the last axis into `bins` contiguous bins.

    The first bins-1 bins have width L // bins; the last absorbs the
    remainder. Requires L >= bins.
    """
    length = x.data.shape[-1]
    if bins < 1 or length < bins:
        raise InvalidLength(f"cannot pool length {length} into {bins} bins")
    q = length // bins
    head = (bins - 1) * q
    last = length - head
    lead = x.data.shape[:-1]
    edges = q * np.arange(bins)
    widths = np.full(bins, float(q))
    widths[-1] = float(last)
    data = np.add.reduceat(x.data, edges, axis=-1) / widths

    def _bwd(g):
        gx = np.empty(lead + (length,))
        gx[..., :head].reshape(lead + (bins - 1, q))[:] = (g[..., : bins - 1] / q)[
            ..., None
        ]
        gx[..., head:] = (g[..., bins - 1] / last)[..., None]
        _accum(x, gx)

    return _make(data, (x,), _bwd)


def softmax(x: Tensor) -> Tensor:
    """Row-wise stable softmax for a 2-D tensor."""
    if x.data.ndim != 2:
        raise ShapeMismatch(f"softmax expects (N, C), got {x.data.shape}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def _bwd(g):
        dot = (g * p).sum(axis=1, keepdims=True)
        _accum(x, p * (g - dot))

    return _make(p, (x,), _bwd)


# -- Adam ------------------------------------------------------------------------


@dataclass
class AdamState:
    """Per-parameter first/second moment estimates for Adam."""

    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        return cls(
            first_moment=[np.zeros_like(p.data) for p in params],
            second_moment=[np.zeros_like(p.data) for p in params],
            step_count=0,
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
        )


def adam_step(params, grads, state: AdamState, lr: float):
    """One bias-corrected Adam update, in place on params."""
    if lr <= 0:
        raise ValueError(f"lr must be positive, got {lr}")
    if not (len(params) == len(grads) == len(state.first_moment) == len(state.second_moment)):
        raise ShapeMismatch("params/grads/state lengths disagree")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        gd = g.data if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64)
        if gd.shape != p.data.shape or m.shape != p.data.shape:
            raise ShapeMismatch(
                f"adam_step: param {p.data.shape}, grad {gd.shape}, moment {m.shape}"
            )
        _kernels.adam_update(p.data, gd, m, v, b1, b2, c1, c2, lr, state.epsilon)
