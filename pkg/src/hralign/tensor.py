"""Dense float64 tensors with reverse-mode automatic differentiation.

The computation graph is rebuilt on every forward pass and walked once, in
reverse topological order, by :meth:`Tensor.backward`. All storage is numpy
float64 so analytic gradients can be audited against central finite
differences at tight tolerances. Single-threaded by contract: tensors are
treated as immutable once produced; only an optimizer step mutates
parameter data in place.
"""

from __future__ import annotations

import struct
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class NumericError(ValueError):
    """Non-finite values showed up where finite ones are required."""


Axis = int | tuple[int, ...] | None


def _asarray(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_bwd")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _asarray(data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._bwd: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """A view of the same values, cut loose from the graph."""
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, seed=None) -> None:
        """Accumulate gradients of this tensor w.r.t. every reachable
        tensor that has ``requires_grad``.

        ``seed`` defaults to ones (the usual case is a scalar loss).
        Gradients accumulate into ``.grad``; callers zero them between
        optimizer steps.
        """
        if not self.requires_grad:
            raise ValueError("backward() on a tensor that does not require grad")
        if seed is None:
            seed = np.ones_like(self.data)
        else:
            seed = _asarray(seed)
            if seed.shape != self.data.shape:
                raise ShapeError(
                    f"backward seed shape {seed.shape} != tensor shape {self.data.shape}"
                )
        # Iterative topological sort; graphs routinely exceed the Python
        # recursion limit.
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        _accumulate(self, seed)
        for node in reversed(topo):
            if node._bwd is not None and node.grad is not None:
                node._bwd(node.grad)

    # Operator sugar. Python scalars are promoted to constant tensors.
    def __add__(self, other):
        return add(self, _ensure_tensor(other))

    def __radd__(self, other):
        return add(_ensure_tensor(other), self)

    def __sub__(self, other):
        return add(self, neg(_ensure_tensor(other)))

    def __rsub__(self, other):
        return add(_ensure_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, _ensure_tensor(other))

    def __rmul__(self, other):
        return mul(_ensure_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _ensure_tensor(other))

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    def transpose(self, axes=None) -> "Tensor":
        return transpose(self, axes)

    def sum(self, axis: Axis = None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis, keepdims)

    def mean(self, axis: Axis = None, keepdims: bool = False) -> "Tensor":
        return tmean(self, axis, keepdims)


def _ensure_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _from_op(data: np.ndarray, parents: Sequence[Tensor], bwd) -> Tensor:
    """Wrap an op result; graph edges are only kept when a parent needs them."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._bwd = bwd
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise / reduction ops


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _ensure_tensor(a), _ensure_tensor(b)
    try:
        data = a.data + b.data
    except ValueError as e:
        raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}") from e

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _from_op(data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _ensure_tensor(a), _ensure_tensor(b)
    try:
        data = a.data * b.data
    except ValueError as e:
        raise ShapeError(f"mul: cannot broadcast {a.shape} with {b.shape}") from e

    def bwd(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _from_op(data, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    a = _ensure_tensor(a)

    def bwd(g):
        _accumulate(a, -g)

    return _from_op(-a.data, (a,), bwd)


def relu(a: Tensor) -> Tensor:
    a = _ensure_tensor(a)
    # np.where rather than np.maximum: clamped entries come out as +0.0,
    # which keeps residual identity checks bitwise.
    data = np.where(a.data > 0.0, a.data, 0.0)

    def bwd(g):
        _accumulate(a, g * (a.data > 0.0))

    return _from_op(data, (a,), bwd)


def exp(a: Tensor) -> Tensor:
    a = _ensure_tensor(a)
    data = np.exp(a.data)

    def bwd(g):
        _accumulate(a, g * data)

    return _from_op(data, (a,), bwd)


def log(a: Tensor) -> Tensor:
    a = _ensure_tensor(a)
    if np.any(a.data <= 0.0):
        raise NumericError("log: non-positive input")
    data = np.log(a.data)

    def bwd(g):
        _accumulate(a, g / a.data)

    return _from_op(data, (a,), bwd)


def power(a: Tensor, p: float) -> Tensor:
    """Elementwise ``a ** p`` for a fixed scalar exponent."""
    a = _ensure_tensor(a)
    p = float(p)
    data = a.data**p

    def bwd(g):
        _accumulate(a, g * p * a.data ** (p - 1.0))

    return _from_op(data, (a,), bwd)


def tsum(a: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    a = _ensure_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        gg = g
        if not keepdims and axis is not None:
            axes = (axis,) if isinstance(axis, int) else axis
            gg = np.expand_dims(g, axes)
        _accumulate(a, np.broadcast_to(gg, a.data.shape).copy())

    return _from_op(data, (a,), bwd)


def tmean(a: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    a = _ensure_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = 1
        for ax in axes:
            n *= a.data.shape[ax]
    s = tsum(a, axis, keepdims)
    return mul(s, Tensor(1.0 / n))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two rank-2 tensors."""
    a, b = _ensure_tensor(a), _ensure_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: expected rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree, {a.shape} x {b.shape}")
    data = a.data @ b.data

    def bwd(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _from_op(data, (a, b), bwd)


def transpose(a: Tensor, axes=None) -> Tensor:
    a = _ensure_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        _accumulate(a, g.transpose(inv))

    return _from_op(a.data.transpose(axes), (a,), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    a = _ensure_tensor(a)
    old = a.data.shape
    try:
        data = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"reshape: cannot view {old} as {shape}") from e

    def bwd(g):
        _accumulate(a, g.reshape(old))

    return _from_op(data, (a,), bwd)


def concat(parts: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = [_ensure_tensor(p) for p in parts]
    if not parts:
        raise ValueError("concat: empty input")
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]

    def bwd(g):
        offset = 0
        for p, s in zip(parts, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(offset, offset + s)
            _accumulate(p, g[tuple(idx)])
            offset += s

    return _from_op(data, tuple(parts), bwd)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along one axis."""
    a = _ensure_tensor(a)
    if np.isnan(a.data).any():
        raise NumericError("softmax: NaN input")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        inner = (g * data).sum(axis=axis, keepdims=True)
        _accumulate(a, data * (g - inner))

    return _from_op(data, (a,), bwd)


def logsumexp(a: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    a = _ensure_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    data = m + np.log(s)
    soft = e / s
    if not keepdims:
        data = data.squeeze(axis=axis)

    def bwd(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        _accumulate(a, soft * gg)

    return _from_op(data, (a,), bwd)


def l2_normalize(a: Tensor, axis: int = -1, eps: float = 1e-24) -> Tensor:
    """Scale slices along ``axis`` to unit Euclidean norm.

    Composite of primitive ops, so gradients come for free. ``eps`` only
    matters for exactly-zero slices, which stay zero.
    """
    sq = tsum(mul(a, a), axis=axis, keepdims=True)
    inv = power(add(sq, Tensor(eps)), -0.5)
    return mul(a, inv)


# ---------------------------------------------------------------------------
# convolution


def _im2col(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    """(N, C, H, W) -> (N, Ho, Wo, C*k*k) patch matrix (copies)."""
    n, c, h, w = x.shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    s0, s1, s2, s3 = x.strides
    view = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, c, k, k, ho, wo),
        strides=(s0, s1, s2, s3, s2 * stride, s3 * stride),
    )
    return view.transpose(0, 4, 5, 1, 2, 3).reshape(n, ho, wo, c * k * k)


def conv2d(x: Tensor, kernels: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation.

    ``x`` is (C_in, H, W) or batched (N, C_in, H, W); ``kernels`` is
    (C_out, C_in, k, k). Output spatial size follows
    floor((H + 2*padding - k) / stride) + 1.
    """
    x, kernels = _ensure_tensor(x), _ensure_tensor(kernels)
    if not isinstance(stride, int) or stride <= 0:
        raise ValueError(f"conv2d: stride must be a positive integer, got {stride!r}")
    if not isinstance(padding, int) or padding < 0:
        raise ValueError(f"conv2d: padding must be a non-negative integer, got {padding!r}")
    if kernels.ndim != 4 or kernels.shape[2] != kernels.shape[3]:
        raise ShapeError(f"conv2d: kernels must be (C_out, C_in, k, k), got {kernels.shape}")
    squeeze = x.ndim == 3
    xv = x.data[None] if squeeze else x.data
    if xv.ndim != 4:
        raise ShapeError(f"conv2d: input must be (C,H,W) or (N,C,H,W), got {x.shape}")
    n, c_in, h, w = xv.shape
    c_out, ck, k, _ = kernels.shape
    if c_in != ck:
        raise ShapeError(
            f"conv2d: input channels {tuple(xv.shape)} do not match kernels {kernels.shape}"
        )
    if k > h + 2 * padding or k > w + 2 * padding:
        raise ShapeError(
            f"conv2d: kernel {k}x{k} exceeds padded input {h + 2 * padding}x{w + 2 * padding}"
        )
    if padding:
        xp = np.pad(xv, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = xv
    cols = _im2col(xp, k, stride)  # (N, Ho, Wo, C*k*k)
    wmat = kernels.data.reshape(c_out, c_in * k * k)
    out = cols @ wmat.T  # (N, Ho, Wo, C_out)
    data = out.transpose(0, 3, 1, 2)
    ho, wo = data.shape[2], data.shape[3]
    if squeeze:
        data = data[0]

    def bwd(g):
        gt = (g[None] if squeeze else g).transpose(0, 2, 3, 1)  # (N, Ho, Wo, C_out)
        if kernels.requires_grad:
            gw = gt.reshape(-1, c_out).T @ cols.reshape(-1, c_in * k * k)
            _accumulate(kernels, gw.reshape(c_out, c_in, k, k))
        if x.requires_grad:
            gcols = gt @ wmat  # (N, Ho, Wo, C*k*k)
            gcols = gcols.reshape(n, ho, wo, c_in, k, k).transpose(0, 3, 4, 5, 1, 2)
            gx = np.zeros_like(xp)
            for ki in range(k):
                for kj in range(k):
                    gx[
                        :,
                        :,
                        ki : ki + (ho - 1) * stride + 1 : stride,
                        kj : kj + (wo - 1) * stride + 1 : stride,
                    ] += gcols[:, :, ki, kj]
            if padding:
                gx = gx[:, :, padding:-padding, padding:-padding]
            _accumulate(x, gx[0] if squeeze else gx)

    return _from_op(data, (x, kernels), bwd)


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


# ---------------------------------------------------------------------------
# serialization: rank and dims as unsigned 32-bit little-endian, followed by
# the row-major float64 little-endian payload.


def to_bytes(arr) -> bytes:
    a = arr.data if isinstance(arr, Tensor) else _asarray(arr)
    header = struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return header + np.ascontiguousarray(a, dtype="<f8").tobytes()


def from_bytes(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one serialized tensor; returns (array, next offset)."""
    (rank,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    dims = struct.unpack_from(f"<{rank}I", buf, offset)
    offset += 4 * rank
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    arr = np.frombuffer(buf, dtype="<f8", count=count, offset=offset)
    offset += 8 * count
    return arr.astype(np.float64).reshape(dims), offset
