"""Dense tensors with reverse-mode automatic differentiation.

Everything is numpy-backed and CPU only. Ops record a dynamic tape: each
result tensor keeps its parents and a closure that routes the incoming
gradient backwards. ``backward(loss)`` replays the tape in reverse creation
order, which is a valid reverse topological order and is deterministic, so
repeated runs on the same graph produce bit-identical gradients.

Layout is row-major NCHW throughout.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when tensor shapes do not satisfy an op's contract."""


class NumericError(ArithmeticError):
    """Raised on non-finite values where finiteness is required."""


class GradientError(RuntimeError):
    """Raised when an optimizer step finds no gradient on a trainable parameter."""


def _as_dtype(precision: int) -> np.dtype:
    if precision == 32:
        return np.dtype(np.float32)
    if precision == 64:
        return np.dtype(np.float64)
    raise ValueError(f"precision must be 32 or 64, got {precision}")


_seq_counter = itertools.count()
_grad_enabled = True


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording inside the block (pure inference forward)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """N-dimensional float array, optionally tracked by the autograd tape."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward_fn", "_seq")

    def __init__(self, data, requires_grad: bool = False, dtype=None,
                 op: str = "leaf", parents: tuple = ()):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = np.zeros_like(arr) if requires_grad else None
        self.op = op
        self._parents = parents
        self._backward_fn: Optional[Callable[[np.ndarray], None]] = None
        self._seq = next(_seq_counter)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, op={self.op!r})"


def _result(data: np.ndarray, op: str, parents: Sequence[Tensor],
            backward_fn: Callable[[np.ndarray], None]) -> Tensor:
    """Wrap an op result; record the tape node only while grad mode is on."""
    tracked = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=False, op=op,
                 parents=tuple(parents) if tracked else ())
    if tracked:
        out.requires_grad = True  # grad buffer stays lazy until backward
        out._backward_fn = backward_fn
    return out


def topo_order(root: Tensor) -> list:
    """Tensors reachable from ``root``, in reverse creation order.

    Creation order is a topological order of the tape (inputs are always
    created before the op result), so this is a deterministic valid
    ordering for reverse-mode accumulation.
    """
    seen = set()
    nodes = []
    stack = [root]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        nodes.append(t)
        stack.extend(t._parents)
    nodes.sort(key=lambda t: t._seq, reverse=True)
    return nodes


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tensor on the tape."""
    if loss.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    loss.accumulate_grad(np.ones_like(loss.data))
    for t in topo_order(loss):
        if t._backward_fn is not None and t.grad is not None:
            t._backward_fn(t.grad)


# ---------------------------------------------------------------------------
# parameter registry

class Parameters:
    """Ordered name -> Tensor registry with per-parameter learning-rate multipliers.

    A multiplier of 0 freezes the parameter: ``sgd_step`` leaves its bytes
    untouched.
    """

    def __init__(self) -> None:
        self._items: dict[str, Tensor] = {}
        self._lr_mult: dict[str, float] = {}
        self._velocity: dict[str, np.ndarray] = {}

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._items:
            raise ValueError(f"duplicate parameter name {name!r}")
        tensor.requires_grad = True
        if tensor.grad is None:
            tensor.grad = np.zeros_like(tensor.data)
        self._items[name] = tensor
        self._lr_mult[name] = 1.0
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._items[name]

    def __contains__(self, name: str) -> bool:
        return name in self._items

    def __len__(self) -> int:
        return len(self._items)

    def names(self) -> list[str]:
        return list(self._items)

    def items(self) -> Iterable[tuple[str, Tensor]]:
        return self._items.items()

    def lr_mult(self, name: str) -> float:
        return self._lr_mult[name]

    def set_lr_mult(self, names: Iterable[str], mult: float) -> None:
        for name in names:
            if name not in self._items:
                raise KeyError(f"unknown parameter {name!r}")
            self._lr_mult[name] = float(mult)

    def freeze(self, names: Iterable[str]) -> None:
        self.set_lr_mult(names, 0.0)

    def unfreeze(self, names: Iterable[str]) -> None:
        self.set_lr_mult(names, 1.0)

    def zero_grads(self) -> None:
        for t in self._items.values():
            t.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Snapshot of all parameter values (copies, insertion order)."""
        return {name: t.data.copy() for name, t in self._items.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, arr in state.items():
            if name not in self._items:
                raise KeyError(f"unknown parameter {name!r}")
            t = self._items[name]
            if tuple(arr.shape) != t.shape:
                raise ShapeError(f"parameter {name!r}: stored shape {arr.shape} "
                                 f"!= model shape {t.shape}")
            t.data = arr.astype(t.data.dtype, copy=True)
            t.grad = np.zeros_like(t.data)
        self._velocity.clear()

    def count(self) -> int:
        return sum(t.size for t in self._items.values())


def he_uniform(shape: Sequence[int], fan_in: int, rng: np.random.Generator,
               dtype=DEFAULT_DTYPE) -> np.ndarray:
    """Fan-in scaled uniform init: U(-sqrt(6/fan_in), +sqrt(6/fan_in))."""
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=tuple(shape)).astype(dtype)


def sgd_step(params: Parameters, lr: float, momentum: float = 0.0,
             weight_decay: float = 0.0) -> None:
    """p <- p - lr*mult*(grad + wd*p); gradients are zeroed afterwards.

    Frozen parameters (multiplier 0) are skipped entirely so their bytes
    never change, even in the presence of pathological gradients.
    """
    for name, t in params.items():
        mult = params.lr_mult(name)
        if mult == 0.0:
            continue
        if t.grad is None:
            raise GradientError(f"parameter {name!r} is trainable but has no gradient")
        g = t.grad
        if weight_decay:
            g = g + weight_decay * t.data
        if momentum:
            v = params._velocity.get(name)
            if v is None:
                v = np.zeros_like(t.data)
            v = momentum * v + g
            params._velocity[name] = v
            g = v
        t.data -= (lr * mult) * g
    params.zero_grads()


# ---------------------------------------------------------------------------
# elementwise and shape ops

def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: operand shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two same-shape tensors."""
    _require_same_shape(a, b, "add")
    def grad(g):
        a.accumulate_grad(g)
        b.accumulate_grad(g)
    return _result(a.data + b.data, "add", (a, b), grad)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of two same-shape tensors."""
    _require_same_shape(a, b, "mul")
    def grad(g):
        a.accumulate_grad(g * b.data)
        b.accumulate_grad(g * a.data)
    return _result(a.data * b.data, "mul", (a, b), grad)


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar constant."""
    c = float(c)
    def grad(g):
        x.accumulate_grad(g * c)
    return _result(x.data * c, "scale", (x,), grad)


def relu(x: Tensor) -> Tensor:
    """max(0, x); subgradient at 0 is taken as 0."""
    def grad(g):
        x.accumulate_grad(g * (x.data > 0))
    return _result(np.maximum(x.data, 0), "relu", (x,), grad)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    def grad(g):
        x.accumulate_grad(g.reshape(x.shape))
    return _result(x.data.reshape(shape), "reshape", (x,), grad)


def flatten(x: Tensor) -> Tensor:
    """Collapse all axes after the batch axis."""
    return reshape(x, (x.shape[0], -1))


def concat(a: Tensor, b: Tensor, axis: int) -> Tensor:
    """Concatenate along ``axis``; all other axes must agree exactly."""
    if a.ndim != b.ndim:
        raise ShapeError(f"concat: ranks {a.ndim} and {b.ndim} differ")
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"concat: axis {axis} out of range for rank {a.ndim}")
    axis = axis % a.ndim
    for d in range(a.ndim):
        if d != axis and a.shape[d] != b.shape[d]:
            raise ShapeError(f"concat: axis {d} sizes {a.shape[d]} and {b.shape[d]} "
                             f"differ (concat axis is {axis})")
    na = a.shape[axis]
    def grad(g):
        sl_a = [slice(None)] * g.ndim
        sl_a[axis] = slice(0, na)
        sl_b = [slice(None)] * g.ndim
        sl_b[axis] = slice(na, None)
        a.accumulate_grad(g[tuple(sl_a)])
        b.accumulate_grad(g[tuple(sl_b)])
    return _result(np.concatenate([a.data, b.data], axis=axis), "concat", (a, b), grad)


def sum_all(x: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    def grad(g):
        x.accumulate_grad(np.full_like(x.data, float(g)))
    return _result(np.asarray(x.data.sum(dtype=x.data.dtype)), "sum_all", (x,), grad)


# ---------------------------------------------------------------------------
# layer ops

def fully_connected(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x @ W.T + b for x:[N,D], W:[M,D], b:[M]."""
    if x.ndim != 2 or weight.ndim != 2:
        raise ShapeError(f"fully_connected: need 2-D input and weight, got "
                         f"{x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"fully_connected: input width {x.shape[1]} != "
                         f"weight fan-in {weight.shape[1]}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"fully_connected: bias shape {bias.shape} != ({weight.shape[0]},)")
    out = x.data @ weight.data.T + bias.data
    def grad(g):
        x.accumulate_grad(g @ weight.data)
        weight.accumulate_grad(g.T @ x.data)
        bias.accumulate_grad(g.sum(axis=0))
    return _result(out, "fully_connected", (x, weight, bias), grad)


def _conv_out_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _window_view(xp: np.ndarray, kh: int, kw: int, stride: int,
                 ho: int, wo: int) -> np.ndarray:
    """Read-only sliding-window view of shape (N, C, kh, kw, Ho, Wo)."""
    n, c, _, _ = xp.shape
    s0, s1, s2, s3 = xp.strides
    return as_strided(xp, (n, c, kh, kw, ho, wo),
                      (s0, s1, s2, s3, s2 * stride, s3 * stride), writeable=False)


def _zero_pad(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    """Spatial zero padding of an NCHW array (cheaper than np.pad)."""
    if ph == 0 and pw == 0:
        return x
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=x.dtype)
    out[:, :, ph:ph + h, pw:pw + w] = x
    return out


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1,
           pad: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding: x:[N,C,H,W], weight:[K,C,kh,kw]."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d: need 4-D input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    k, cw, kh, kw = weight.shape
    if cw != c:
        raise ShapeError(f"conv2d: channel axis mismatch, input has {c} channels "
                         f"but weight expects {cw}")
    if bias.shape != (k,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({k},)")
    if stride < 1:
        raise ShapeError(f"conv2d: stride must be >= 1, got {stride}")
    if kh > h + 2 * pad:
        raise ShapeError(f"conv2d: kernel height {kh} exceeds padded input height {h + 2 * pad}")
    if kw > w + 2 * pad:
        raise ShapeError(f"conv2d: kernel width {kw} exceeds padded input width {w + 2 * pad}")
    # any NaN/Inf anywhere forces the whole sum non-finite
    if not np.isfinite(x.data.sum(dtype=np.float64)):
        raise NumericError("conv2d: non-finite values in input")

    ho = _conv_out_size(h, kh, stride, pad)
    wo = _conv_out_size(w, kw, stride, pad)
    xp = _zero_pad(x.data, pad, pad)
    win = _window_view(xp, kh, kw, stride, ho, wo)
    out = np.tensordot(weight.data, win, axes=((1, 2, 3), (1, 2, 3)))  # (K,N,Ho,Wo)
    out = np.ascontiguousarray(out.transpose(1, 0, 2, 3))
    out += bias.data[None, :, None, None]

    def grad(g):
        weight.accumulate_grad(np.tensordot(g, win, axes=((0, 2, 3), (0, 4, 5))))
        bias.accumulate_grad(g.sum(axis=(0, 2, 3)))
        if not (x.requires_grad or x._backward_fn is not None or x._parents):
            return
        if stride == 1:
            # full correlation of the padded upstream gradient with the
            # 180-degree rotated kernels
            gp = _zero_pad(np.ascontiguousarray(g), kh - 1, kw - 1)
            gwin = _window_view(gp, kh, kw, 1, h + 2 * pad, w + 2 * pad)
            wrot = weight.data[:, :, ::-1, ::-1]
            dxp = np.tensordot(wrot, gwin, axes=((0, 2, 3), (1, 2, 3)))  # (C,N,Hp,Wp)
            dxp = dxp.transpose(1, 0, 2, 3)
        else:
            dcols = np.tensordot(g.transpose(0, 2, 3, 1), weight.data, axes=(3, 0))
            dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=x.data.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        x.accumulate_grad(dxp[:, :, pad:pad + h, pad:pad + w] if pad else dxp)

    return _result(out, "conv2d", (x, weight, bias), grad)


def maxpool2d(x: Tensor, k: int, stride: int) -> Tensor:
    """Window maxima; ties route the gradient to the lowest flat index in the window."""
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d: need 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    if k > h or k > w:
        raise ShapeError(f"maxpool2d: window {k} larger than input {h}x{w}")
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    non_overlapping = stride == k and h % k == 0 and w % k == 0
    if non_overlapping:
        # windows are a plain reshape view; reduce over the fast axes
        grid = x.data.reshape(n, c, ho, k, wo, k)
        out = grid.max(axis=5).max(axis=3)
        win = grid.transpose(0, 1, 2, 4, 3, 5)
    else:
        s0, s1, s2, s3 = x.data.strides
        win = as_strided(x.data, (n, c, ho, wo, k, k),
                         (s0, s1, s2 * stride, s3 * stride, s2, s3), writeable=False)
        out = win.max(axis=(4, 5))

    def grad(g):
        # argmax is only needed on the training path; first occurrence wins ties
        arg = win.reshape(n, c, ho, wo, k * k).argmax(axis=-1)
        if non_overlapping:
            dwin = np.zeros((n, c, ho, wo, k * k), dtype=x.data.dtype)
            np.put_along_axis(dwin, arg[..., None], g[..., None], axis=-1)
            dx = dwin.reshape(n, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5) \
                .reshape(x.shape)
            x.accumulate_grad(dx)
            return
        oh = np.arange(ho)[None, None, :, None] * stride + arg // k
        ow = np.arange(wo)[None, None, None, :] * stride + arg % k
        ni = np.arange(n)[:, None, None, None]
        ci = np.arange(c)[None, :, None, None]
        flat_idx = ((ni * c + ci) * h + oh) * w + ow
        dx = np.zeros(n * c * h * w, dtype=x.data.dtype)
        np.add.at(dx, flat_idx.ravel(), g.ravel())
        x.accumulate_grad(dx.reshape(x.shape))

    return _result(np.ascontiguousarray(out), "maxpool2d", (x,), grad)


@dataclass(frozen=True)
class LrnParams:
    """Across-channel response normalization parameters.

    The divisor is (k + (alpha/n) * sum of squares over the channel window),
    raised to beta. Window of ``n`` channels is clipped at the edges.
    """
    n: int = 5
    k: float = 2.0
    alpha: float = 1e-4
    beta: float = 0.75

    def __post_init__(self):
        if self.n < 1 or self.n % 2 == 0:
            raise ValueError(f"LRN local size must be odd and positive, got {self.n}")
        if self.k < 0:
            raise ValueError(f"LRN k must be >= 0, got {self.k}")
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("LRN alpha and beta must be > 0")


def _channel_window_sum(x: np.ndarray, n: int) -> np.ndarray:
    """Sliding sum over the channel axis with window n, clipped at edges."""
    half = n // 2
    out = x.copy()
    for off in range(1, half + 1):
        out[:, off:] += x[:, :-off]
        out[:, :-off] += x[:, off:]
    return out


def lrn(x: Tensor, params: LrnParams = LrnParams()) -> Tensor:
    """Across-channel local response normalization on a [N,C,H,W] tensor."""
    if x.ndim != 4:
        raise ShapeError(f"lrn: need 4-D input, got {x.shape}")
    kappa = x.data.dtype.type(params.alpha / params.n)
    ssum = _channel_window_sum(x.data * x.data, params.n)
    d = params.k + kappa * ssum
    d_mb = d ** x.data.dtype.type(-params.beta)
    out = x.data * d_mb

    def grad(g):
        u = g * x.data * (d_mb / d)  # g * a * d^(-beta-1) without a second pow
        inner = _channel_window_sum(u, params.n)
        dx = g * d_mb - (2.0 * params.beta) * kappa * x.data * inner
        x.accumulate_grad(dx.astype(x.data.dtype, copy=False))

    return _result(out, "lrn", (x,), grad)


# ---------------------------------------------------------------------------
# classifier head ops

def softmax(x: Tensor) -> Tensor:
    """Row-wise softmax with max subtraction for stability; x:[N,C]."""
    if x.ndim != 2:
        raise ShapeError(f"softmax: need 2-D scores, got {x.shape}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    def grad(g):
        x.accumulate_grad(p * (g - (g * p).sum(axis=1, keepdims=True)))
    return _result(p, "softmax", (x,), grad)


def _check_labels(labels: np.ndarray, n: int, c: int, op: str) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeError(f"{op}: labels shape {labels.shape} != ({n},)")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ShapeError(f"{op}: label out of range [0, {c})")
    return labels.astype(np.int64)


def cross_entropy(scores: Tensor, labels) -> Tensor:
    """Mean negative log softmax probability of the true class (fused log-sum-exp)."""
    n, c = scores.shape
    labels = _check_labels(labels, n, c, "cross_entropy")
    z = scores.data - scores.data.max(axis=1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logz
    loss = -logp[np.arange(n), labels].mean(dtype=scores.data.dtype)
    if not np.isfinite(loss):
        raise NumericError("cross_entropy: non-finite loss")
    p = np.exp(logp)
    def grad(g):
        dz = p.copy()
        dz[np.arange(n), labels] -= 1.0
        scores.accumulate_grad(dz * (float(g) / n))
    return _result(np.asarray(loss), "cross_entropy", (scores,), grad)


def nll_from_probs(probs: Tensor, labels) -> Tensor:
    """Mean -log p[label] over already-normalized class distributions."""
    n, c = probs.shape
    labels = _check_labels(labels, n, c, "nll_from_probs")
    picked = probs.data[np.arange(n), labels]
    loss = -np.log(picked).mean(dtype=probs.data.dtype)
    if not np.isfinite(loss):
        raise NumericError("nll_from_probs: non-finite loss")
    def grad(g):
        dp = np.zeros_like(probs.data)
        dp[np.arange(n), labels] = -float(g) / (n * picked)
        probs.accumulate_grad(dp)
    return _result(np.asarray(loss), "nll_from_probs", (probs,), grad)
