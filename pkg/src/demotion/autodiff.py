"""Dense-tensor reverse-mode automatic differentiation on float64 arrays.

Every operation records (parent, vjp) links on its output, and the vjp
closures are themselves written in terms of these same operations.  A
gradient tensor therefore carries its own links and can be differentiated
again, which is what lets an optimizer's update steps sit inside the graph
being trained through.  Backpropagation walks tensors in decreasing
creation order -- a valid topological order because parents always exist
before their children -- so no recursion and no explicit tape object.

Structural ops (gather/scatter, pad/crop, reshape, transpose, concat) come
in mutually adjoint pairs, so convolution, pooling and upsampling are plain
compositions rather than bespoke primitives with hand-written backward
passes.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.special import iv as _bessel_iv

from .errors import ContractViolationError

_COUNTER = itertools.count()


class Tensor:
    """A float64 array plus reverse-mode plumbing.

    ``requires_grad`` is inherited from parents; tensors that do not require
    gradients drop their parent links entirely, pruning constant subgraphs.
    ``grad`` is only populated by :meth:`backward` (as a plain array); the
    functional entry point :func:`grad_of` returns gradient tensors instead
    and never mutates the graph.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_uid")

    def __init__(self, data, requires_grad=False, _parents=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p, _ in _parents)
        self._parents = tuple(_parents) if self.requires_grad else ()
        self.grad = None
        self._uid = next(_COUNTER)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; scalars and arrays are promoted to constant tensors
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

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)

    def backward(self, grad_output=None):
        """Accumulate ``.grad`` (plain arrays) on every reachable leaf."""
        for node, g in _backprop(self, grad_output):
            if not node._parents:
                node.grad = g.data.copy() if node.grad is None else node.grad + g.data

    def zero_grad(self):
        self.grad = None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# Backward walk
# ---------------------------------------------------------------------------

def _reachable(root: Tensor, stop_ids) -> list:
    nodes = []
    seen = {id(root)}
    stack = [root]
    while stack:
        node = stack.pop()
        nodes.append(node)
        if id(node) in stop_ids:
            continue
        for parent, _ in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                seen.add(id(parent))
                stack.append(parent)
    return nodes


def _backprop(output: Tensor, grad_output, stop_ids=frozenset()):
    if not isinstance(output, Tensor) or not output.requires_grad:
        raise ContractViolationError("backward needs an output built from tracked tensors")
    if grad_output is None:
        if output.data.size != 1:
            raise ContractViolationError("implicit gradient seed requires a scalar output")
        seed = Tensor(np.ones_like(output.data))
    else:
        seed = as_tensor(grad_output)
        if seed.data.shape != output.data.shape:
            raise ContractViolationError(
                f"grad_output shape {seed.data.shape} != output shape {output.data.shape}")
    nodes = sorted(_reachable(output, stop_ids), key=lambda t: t._uid, reverse=True)
    grads = {id(output): seed}
    for node in nodes:
        g = grads.get(id(node))
        if g is None or id(node) in stop_ids:
            continue
        for parent, vjp in node._parents:
            if not parent.requires_grad:
                continue
            pg = vjp(g)
            prev = grads.get(id(parent))
            grads[id(parent)] = pg if prev is None else prev + pg
    return [(node, grads[id(node)]) for node in nodes if id(node) in grads]


def grad_of(output: Tensor, wrt, grad_output=None, stop_at_wrt=False) -> list:
    """Gradient tensors of ``output`` w.r.t. each tensor in ``wrt``.

    The results are ordinary tensors built from primitive ops, so they can
    be fed back into further computation and differentiated again.  Inputs
    the output does not depend on get zero gradients.

    ``stop_at_wrt`` treats every ``wrt`` tensor as an independent variable
    and skips propagation below it -- the partial derivative an optimizer
    step wants, and a large saving when the targets sit on top of a long
    iterate history the caller does not need gradients for.
    """
    stop_ids = frozenset(id(w) for w in wrt) if stop_at_wrt else frozenset()
    table = {id(node): g for node, g in _backprop(output, grad_output, stop_ids)}
    return [table.get(id(w), Tensor(np.zeros_like(w.data))) for w in wrt]


# ---------------------------------------------------------------------------
# Broadcasting helpers
# ---------------------------------------------------------------------------

def _unbroadcast(g: Tensor, shape: tuple) -> Tensor:
    """Sum a broadcast gradient back down to ``shape``."""
    if g.data.shape == shape:
        return g
    extra = g.data.ndim - len(shape)
    if extra > 0:
        g = tsum(g, axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.data.shape[i] != 1)
    if axes:
        g = tsum(g, axis=axes, keepdims=True)
    return g


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


# ---------------------------------------------------------------------------
# Arithmetic primitives
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(a.data + b.data, _parents=(
        (a, lambda g: _unbroadcast(g, a.data.shape)),
        (b, lambda g: _unbroadcast(g, b.data.shape)),
    ))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(a.data - b.data, _parents=(
        (a, lambda g: _unbroadcast(g, a.data.shape)),
        (b, lambda g: _unbroadcast(neg(g), b.data.shape)),
    ))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(a.data * b.data, _parents=(
        (a, lambda g: _unbroadcast(mul(g, b), a.data.shape)),
        (b, lambda g: _unbroadcast(mul(g, a), b.data.shape)),
    ))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data / b.data, _parents=(
        (a, lambda g: _unbroadcast(div(g, b), a.data.shape)),
        (b, lambda g: _unbroadcast(div(neg(mul(g, out)), b), b.data.shape)),
    ))
    return out


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(-a.data, _parents=((a, lambda g: neg(g)),))


def sqrt(a) -> Tensor:
    """Elementwise square root; the derivative at exactly 0 is taken as 0.

    The zero-input subgradient convention keeps magnitude chains
    sqrt(re^2 + im^2) free of NaNs on identically-zero pixels.
    """
    a = as_tensor(a)
    zero = a.data == 0.0
    if zero.any():
        coef = Tensor(np.where(zero, 0.0, 0.5))
        lift = Tensor(zero.astype(np.float64))  # keeps the division finite
        out = Tensor(np.sqrt(a.data), _parents=(
            (a, lambda g: div(mul(g, coef), add(out, lift))),))
    else:
        out = Tensor(np.sqrt(a.data), _parents=(
            (a, lambda g: div(mul(g, 0.5), out)),))
    return out


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.exp(a.data), _parents=((a, lambda g: mul(g, out)),))
    return out


def sin(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(np.sin(a.data), _parents=((a, lambda g: mul(g, cos(a))),))


def cos(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(np.cos(a.data), _parents=((a, lambda g: neg(mul(g, sin(a)))),))


def absval(a) -> Tensor:
    """Elementwise |a| with sign(0) = 0 subgradient."""
    a = as_tensor(a)
    sign = Tensor(np.sign(a.data))
    return Tensor(np.abs(a.data), _parents=((a, lambda g: mul(g, sign)),))


def clip(a, lo, hi) -> Tensor:
    """Clamp to [lo, hi]; gradient passes only where the input was in range."""
    a = as_tensor(a)
    mask = Tensor(((a.data >= (lo if lo is not None else -np.inf))
                   & (a.data <= (hi if hi is not None else np.inf))).astype(np.float64))
    return Tensor(np.clip(a.data, lo, hi), _parents=((a, lambda g: mul(g, mask)),))


def leaky_relu(a, negative_slope=0.01) -> Tensor:
    a = as_tensor(a)
    mask = Tensor(np.where(a.data >= 0.0, 1.0, negative_slope))
    return Tensor(a.data * mask.data, _parents=((a, lambda g: mul(g, mask)),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out_d = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                     np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Tensor(out_d, _parents=(
        (a, lambda g: mul(g, mul(out, sub(1.0, out)))),))
    return out


def besseli_entire(t, order: int) -> Tensor:
    """I_order(sqrt(t)) / (2 sqrt(t))**order, an entire function of t >= 0.

    This is the natural building block for Kaiser-Bessel weights written in
    terms of t = beta^2 (1 - u^2): the kernel is besseli_entire(t, 0) - 1,
    and d/dt of order m is exactly order m+1, so derivatives of any order
    stay inside the same family with no singularity at the window edge.
    """
    t = as_tensor(t)
    if (t.data < 0).any():
        raise ContractViolationError("besseli_entire requires t >= 0")
    return Tensor(_iv_sqrt(t.data, order), _parents=(
        (t, lambda g: mul(g, besseli_entire(t, order + 1))),))


def _iv_sqrt(t: np.ndarray, order: int) -> np.ndarray:
    out = np.empty_like(t)
    small = t < 0.25
    if small.any():
        # power series sum_k t^k / (4^(k+m) k! (k+m)!); converges past float
        # precision within ~8 terms on this range
        ts = t[small]
        term = np.full_like(ts, 1.0 / (4.0 ** order * math.factorial(order)))
        acc = term.copy()
        for k in range(1, 12):
            term = term * ts / (4.0 * k * (k + order))
            acc += term
        out[small] = acc
    big = ~small
    if big.any():
        x = np.sqrt(t[big])
        out[big] = _bessel_iv(order, x) / (2.0 * x) ** order
    return out


# ---------------------------------------------------------------------------
# Reductions and shape ops
# ---------------------------------------------------------------------------

def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        gg = g
        if not keepdims:
            shape_kd = list(a.data.shape)
            for ax in _norm_axes(axis, a.data.ndim):
                shape_kd[ax] = 1
            gg = reshape(gg, tuple(shape_kd))
        return broadcast_to(gg, a.data.shape)

    return Tensor(a.data.sum(axis=axis, keepdims=keepdims), _parents=((a, vjp),))


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else int(
        np.prod([a.data.shape[ax] for ax in _norm_axes(axis, a.data.ndim)]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    return Tensor(np.broadcast_to(a.data, shape).copy(), _parents=(
        (a, lambda g: _unbroadcast(g, a.data.shape)),))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return Tensor(a.data.reshape(shape), _parents=(
        (a, lambda g: reshape(g, a.data.shape)),))


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    inverse = tuple(np.argsort(axes))
    return Tensor(np.transpose(a.data, axes), _parents=(
        (a, lambda g: transpose(g, inverse)),))


def max_all(a) -> Tensor:
    """Maximum over all elements; gradient flows to the first argmax only."""
    a = as_tensor(a)
    onehot = np.zeros_like(a.data)
    onehot.reshape(-1)[int(np.argmax(a.data))] = 1.0
    mask = Tensor(onehot)
    return Tensor(a.data.max(), _parents=(
        (a, lambda g: mul(broadcast_to(reshape(g, (1,) * a.data.ndim), a.data.shape), mask)),))


def concat(tensors, axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def make_vjp(i):
        def vjp(g):
            widths = [(0, 0)] * g.data.ndim
            widths[axis] = (int(offsets[i]), int(offsets[-1] - offsets[i + 1]))
            return crop_nd(g, tuple(widths))
        return vjp

    return Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                  _parents=tuple((t, make_vjp(i)) for i, t in enumerate(tensors)))


def pad_nd(a, widths) -> Tensor:
    """Zero-pad by (before, after) per axis; adjoint of crop_nd."""
    a = as_tensor(a)
    return Tensor(np.pad(a.data, widths), _parents=(
        (a, lambda g: crop_nd(g, widths)),))


def crop_nd(a, widths) -> Tensor:
    """Trim (before, after) per axis; adjoint of pad_nd."""
    a = as_tensor(a)
    sl = tuple(slice(b, n - e) for (b, e), n in zip(widths, a.data.shape))
    return Tensor(a.data[sl].copy(), _parents=(
        (a, lambda g: pad_nd(g, widths)),))


def take_at(a, idx: np.ndarray) -> Tensor:
    """Gather from the flattened input at constant indices; adjoint scatter-adds."""
    a = as_tensor(a)
    idx = np.asarray(idx)
    size = a.data.size
    return Tensor(a.data.reshape(-1)[idx], _parents=(
        (a, lambda g: reshape(put_at(g, idx, size), a.data.shape)),))


def put_at(a, idx: np.ndarray, size: int) -> Tensor:
    """Scatter-add values at constant flat indices into a length-``size`` vector."""
    a = as_tensor(a)
    idx = np.asarray(idx)
    out = np.bincount(idx.reshape(-1), weights=a.data.reshape(-1), minlength=size)
    return Tensor(out, _parents=(
        (a, lambda g: reshape(take_at(g, idx), a.data.shape)),))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ContractViolationError("matmul operands must have ndim >= 2")

    def swap(t):
        axes = list(range(t.data.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
        return transpose(t, tuple(axes))

    return Tensor(np.matmul(a.data, b.data), _parents=(
        (a, lambda g: _unbroadcast(matmul(g, swap(b)), a.data.shape)),
        (b, lambda g: _unbroadcast(matmul(swap(a), g), b.data.shape)),
    ))


# ---------------------------------------------------------------------------
# Network building blocks (compositions of the primitives above)
# ---------------------------------------------------------------------------

_IM2COL_CACHE: dict = {}
_UPSAMPLE_CACHE: dict = {}


def _im2col_indices(batch, chans, height, width, k, stride):
    key = (batch, chans, height, width, k, stride)
    cached = _IM2COL_CACHE.get(key)
    if cached is not None:
        return cached
    out_h = (height - k) // stride + 1
    out_w = (width - k) // stride + 1
    i0 = np.repeat(np.arange(k), k)
    j0 = np.tile(np.arange(k), k)
    i1 = stride * np.repeat(np.arange(out_h), out_w)
    j1 = stride * np.tile(np.arange(out_w), out_h)
    rows = i0[:, None] + i1[None, :]          # (k*k, L)
    cols = j0[:, None] + j1[None, :]
    chan = np.arange(chans) * height * width
    plane = rows * width + cols               # (k*k, L)
    idx = chan[:, None, None] + plane[None]   # (C, k*k, L)
    idx = idx.reshape(chans * k * k, -1)
    full = (np.arange(batch) * chans * height * width)[:, None, None] + idx[None]
    result = (full, out_h, out_w)
    _IM2COL_CACHE[key] = result
    return result


def conv2d(x, weight, bias=None, stride=1, pad=0) -> Tensor:
    """2-D convolution on (B, C, H, W) via gather + matmul (cross-correlation)."""
    x, weight = as_tensor(x), as_tensor(weight)
    batch, chans, height, width = x.data.shape
    out_c, in_c, kh, kw = weight.data.shape
    if in_c != chans:
        raise ContractViolationError(f"conv2d channel mismatch: input {chans}, weight {in_c}")
    if kh != kw:
        raise ContractViolationError("conv2d expects square kernels")
    if pad:
        x = pad_nd(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        height, width = height + 2 * pad, width + 2 * pad
    idx, out_h, out_w = _im2col_indices(batch, chans, height, width, kh, stride)
    cols = take_at(x, idx)                        # (B, C*k*k, L)
    w2 = reshape(weight, (out_c, chans * kh * kw))
    out = matmul(w2, cols)                        # (B, O, L)
    if bias is not None:
        out = add(out, reshape(as_tensor(bias), (1, out_c, 1)))
    return reshape(out, (batch, out_c, out_h, out_w))


def instance_norm2d(x, gamma, beta, eps=1e-5) -> Tensor:
    """Per-sample, per-channel standardization with learned affine."""
    x = as_tensor(x)
    chans = x.data.shape[1]
    mu = tmean(x, axis=(2, 3), keepdims=True)
    centered = sub(x, mu)
    var = tmean(mul(centered, centered), axis=(2, 3), keepdims=True)
    xhat = div(centered, sqrt(add(var, eps)))
    return add(mul(xhat, reshape(as_tensor(gamma), (1, chans, 1, 1))),
               reshape(as_tensor(beta), (1, chans, 1, 1)))


def upsample2_nearest(x) -> Tensor:
    """Nearest-neighbour 2x upsampling on (B, C, H, W); adjoint is 2x2 sum-pool."""
    x = as_tensor(x)
    batch, chans, height, width = x.data.shape
    key = (batch, chans, height, width)
    idx = _UPSAMPLE_CACHE.get(key)
    if idx is None:
        b, c, i, j = np.meshgrid(np.arange(batch), np.arange(chans),
                                 np.arange(2 * height), np.arange(2 * width),
                                 indexing="ij")
        idx = ((b * chans + c) * height + i // 2) * width + j // 2
        _UPSAMPLE_CACHE[key] = idx
    return take_at(x, idx)
