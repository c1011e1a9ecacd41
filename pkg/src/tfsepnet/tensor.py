"""Rank-4 dense tensors with reverse-mode automatic differentiation.

Everything the network touches is a ``Tensor`` of shape (N, C, F, T):
batch, channel, frequency, time.  Operations build a tape of closures;
``backward`` walks it in reverse topological order and accumulates
gradients into every tensor that asked for them.

Single precision is the default for training; gradient checks should be
run in double precision (see :func:`finite_diff_check`).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

AXIS_F = "F"
AXIS_T = "T"
AXIS_FT = "FT"


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible before any data is touched."""


class Tensor:
    """Dense (N, C, F, T) array, optionally participating in the gradient tape."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        if arr.ndim != 4:
            raise ShapeError(f"tensor must be rank 4 (N,C,F,T), got shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"

    # -- gradient plumbing ---------------------------------------------

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    @staticmethod
    def _op(data: np.ndarray, parents: Sequence["Tensor"],
            backward: Callable[["Tensor"], None]) -> "Tensor":
        """Create a tape node.  ``backward(out)`` must push out.grad to parents."""
        out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = lambda: backward(out)
        return out


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss.

    Gradients accumulate into ``.grad`` of every requires_grad tensor
    reachable from ``loss``; call ``zero_grad`` between steps.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    loss.accumulate_grad(np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backward is not None:
            node._backward()


# -- parameter containers ----------------------------------------------


@dataclass
class ConvParams:
    """Weights and geometry of one 2D (possibly grouped) convolution."""

    kernel: Tensor                      # (out_ch, in_ch // groups, k_f, k_t)
    bias: Tensor | None = None          # (1, out_ch, 1, 1)
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)
    groups: int = 1

    def __post_init__(self):
        o, cg, kf, kt = self.kernel.shape
        if kf < 1 or kt < 1:
            raise ShapeError("kernel sizes must be >= 1")
        if self.groups < 1 or o % self.groups != 0:
            raise ShapeError(f"out_ch {o} not divisible by groups {self.groups}")
        if min(self.stride) < 1 or min(self.padding) < 0:
            raise ShapeError("stride must be >= 1 and padding >= 0")
        if self.bias is not None and self.bias.shape != (1, o, 1, 1):
            raise ShapeError(f"bias shape {self.bias.shape} != (1, {o}, 1, 1)")

    @property
    def out_ch(self) -> int:
        return self.kernel.shape[0]

    @property
    def in_ch(self) -> int:
        return self.kernel.shape[1] * self.groups


@dataclass
class BatchNormState:
    """Per-channel batch normalization parameters and running statistics."""

    gamma: Tensor                       # (1, C, 1, 1), learned
    beta: Tensor                        # (1, C, 1, 1), learned
    running_mean: np.ndarray            # (C,)
    running_var: np.ndarray             # (C,)
    momentum: float = 0.1
    epsilon: float = 1e-5
    mode: str = "train"                 # "train" | "eval"

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if np.any(self.running_var < 0):
            raise ValueError("running_var must be non-negative")

    @property
    def channels(self) -> int:
        return self.gamma.shape[1]

    @staticmethod
    def create(channels: int, momentum: float = 0.1, epsilon: float = 1e-5,
               dtype=np.float32) -> "BatchNormState":
        return BatchNormState(
            gamma=Tensor(np.ones((1, channels, 1, 1), dtype), requires_grad=True),
            beta=Tensor(np.zeros((1, channels, 1, 1), dtype), requires_grad=True),
            running_mean=np.zeros(channels, dtype),
            running_var=np.ones(channels, dtype),
            momentum=momentum,
            epsilon=epsilon,
        )


# -- operations --------------------------------------------------------


def conv2d(x: Tensor, p: ConvParams) -> Tensor:
    """Grouped 2D cross-correlation (no kernel flip)."""
    n, c, f, t = x.shape
    o, cg, kf, kt = p.kernel.shape
    g = p.groups
    if c != cg * g:
        raise ShapeError(f"input has {c} channels, conv expects {cg * g}")
    (sf, st), (pf, pt) = p.stride, p.padding
    fo = (f + 2 * pf - kf) // sf + 1
    to = (t + 2 * pt - kt) // st + 1
    if fo < 1 or to < 1:
        raise ShapeError(f"conv output would be empty: ({fo}, {to})")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pf, pf), (pt, pt)))
    win = sliding_window_view(xp, (kf, kt), axis=(2, 3))[:, :, ::sf, ::st]
    wing = win.reshape(n, g, cg, fo, to, kf, kt)
    kg = p.kernel.data.reshape(g, o // g, cg, kf, kt)
    out = np.einsum("ngcftij,gocij->ngoft", wing, kg, optimize=True)
    out = np.ascontiguousarray(out.reshape(n, o, fo, to))
    if p.bias is not None:
        out += p.bias.data

    parents = [x, p.kernel] + ([p.bias] if p.bias is not None else [])

    def bwd(node: Tensor) -> None:
        grad = node.grad
        gg = grad.reshape(n, g, o // g, fo, to)
        if p.kernel.requires_grad:
            gk = np.einsum("ngoft,ngcftij->gocij", gg, wing, optimize=True)
            p.kernel.accumulate_grad(gk.reshape(o, cg, kf, kt))
        if p.bias is not None and p.bias.requires_grad:
            p.bias.accumulate_grad(grad.sum(axis=(0, 2, 3), keepdims=True))
        if x.requires_grad:
            gwin = np.einsum("ngoft,gocij->ngcftij", gg, kg, optimize=True)
            gwin = gwin.reshape(n, c, fo, to, kf, kt)
            gx = np.zeros_like(xp)
            for i in range(kf):
                for j in range(kt):
                    gx[:, :, i:i + fo * sf:sf, j:j + to * st:st] += gwin[..., i, j]
            x.accumulate_grad(gx[:, :, pf:pf + f, pt:pt + t])

    return Tensor._op(out, parents, bwd)


def batchnorm2d(x: Tensor, s: BatchNormState) -> Tensor:
    """Batch normalization over (N, F, T) per channel."""
    n, c, f, t = x.shape
    if c != s.channels:
        raise ShapeError(f"input has {c} channels, batchnorm expects {s.channels}")
    eps = s.epsilon
    if s.mode == "train":
        if n * f * t == 0:
            raise ShapeError("batchnorm train mode needs a non-empty batch")
        mu = x.data.mean(axis=(0, 2, 3), keepdims=True)
        var = x.data.var(axis=(0, 2, 3), keepdims=True)
        s.running_mean = ((1 - s.momentum) * s.running_mean
                          + s.momentum * mu.reshape(-1).astype(s.running_mean.dtype))
        s.running_var = ((1 - s.momentum) * s.running_var
                         + s.momentum * var.reshape(-1).astype(s.running_var.dtype))
    else:
        mu = s.running_mean.reshape(1, c, 1, 1).astype(x.dtype)
        var = s.running_var.reshape(1, c, 1, 1).astype(x.dtype)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = s.gamma.data * xhat + s.beta.data

    train = s.mode == "train"

    def bwd(node: Tensor) -> None:
        grad = node.grad
        if s.gamma.requires_grad:
            s.gamma.accumulate_grad((grad * xhat).sum(axis=(0, 2, 3), keepdims=True))
        if s.beta.requires_grad:
            s.beta.accumulate_grad(grad.sum(axis=(0, 2, 3), keepdims=True))
        if x.requires_grad:
            gxhat = grad * s.gamma.data
            if train:
                # grad flows through the batch statistics as well
                mean_g = gxhat.mean(axis=(0, 2, 3), keepdims=True)
                mean_gx = (gxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
                gx = inv * (gxhat - mean_g - xhat * mean_gx)
            else:
                gx = gxhat * inv
            x.accumulate_grad(gx)

    return Tensor._op(out, [x, s.gamma, s.beta], bwd)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0)

    def bwd(node: Tensor) -> None:
        if x.requires_grad:
            x.accumulate_grad(node.grad * mask)

    return Tensor._op(out, [x], bwd)


def maxpool2d(x: Tensor, k: tuple[int, int] = (2, 2),
              s: tuple[int, int] | None = None) -> Tensor:
    """Max pooling with zero padding; pooled dims must divide exactly."""
    if s is None:
        s = k
    if s != k:
        raise ShapeError("maxpool supports stride == kernel only")
    n, c, f, t = x.shape
    kf, kt = k
    if f % kf or t % kt:
        raise ShapeError(f"pool window {k} does not divide spatial dims ({f}, {t})")
    fo, to = f // kf, t // kt
    blocks = x.data.reshape(n, c, fo, kf, to, kt).transpose(0, 1, 2, 4, 3, 5)
    flat = blocks.reshape(n, c, fo, to, kf * kt)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def bwd(node: Tensor) -> None:
        if x.requires_grad:
            gflat = np.zeros_like(flat)
            np.put_along_axis(gflat, idx[..., None], node.grad[..., None], axis=-1)
            gx = gflat.reshape(n, c, fo, to, kf, kt).transpose(0, 1, 2, 4, 3, 5)
            x.accumulate_grad(gx.reshape(n, c, f, t))

    return Tensor._op(np.ascontiguousarray(out), [x], bwd)


_AXES = {AXIS_F: (2,), AXIS_T: (3,), AXIS_FT: (2, 3)}


def mean_over_axis(x: Tensor, axis: str) -> Tensor:
    """Mean along F, T or both; the reduced axes keep size 1."""
    if axis not in _AXES:
        raise ShapeError(f"axis must be one of {sorted(_AXES)}, got {axis!r}")
    ax = _AXES[axis]
    size = int(np.prod([x.shape[a] for a in ax]))
    out = x.data.mean(axis=ax, keepdims=True)

    def bwd(node: Tensor) -> None:
        if x.requires_grad:
            x.accumulate_grad(np.broadcast_to(node.grad / size, x.shape).copy())

    return Tensor._op(out, [x], bwd)


def shuffle_permutation(channels: int, groups: int) -> np.ndarray:
    """Source index per output channel: out[c] = in[(c % g) * (C // g) + c // g]."""
    if channels % groups:
        raise ShapeError(f"{channels} channels not divisible by {groups} groups")
    c = np.arange(channels)
    return (c % groups) * (channels // groups) + c // groups


def channel_shuffle(x: Tensor, g: int) -> Tensor:
    perm = shuffle_permutation(x.shape[1], g)
    inv = np.argsort(perm)
    out = x.data[:, perm]

    def bwd(node: Tensor) -> None:
        if x.requires_grad:
            x.accumulate_grad(node.grad[:, inv])

    return Tensor._op(out, [x], bwd)


def split_channels(x: Tensor) -> tuple[Tensor, Tensor]:
    """Even split along the channel axis."""
    c = x.shape[1]
    if c % 2:
        raise ShapeError(f"cannot split {c} channels evenly")
    h = c // 2

    def make(lo: int, hi: int) -> Tensor:
        def bwd(node: Tensor) -> None:
            if x.requires_grad:
                g = np.zeros_like(x.data)
                g[:, lo:hi] = node.grad
                x.accumulate_grad(g)
        return Tensor._op(x.data[:, lo:hi].copy(), [x], bwd)

    return make(0, h), make(h, c)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"cannot concat shapes {a.shape} and {b.shape}")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)

    def bwd(node: Tensor) -> None:
        if a.requires_grad:
            a.accumulate_grad(node.grad[:, :ca])
        if b.requires_grad:
            b.accumulate_grad(node.grad[:, ca:])

    return Tensor._op(out, [a, b], bwd)


def broadcast_add(x: Tensor, v: Tensor, axis: int | None = None) -> Tensor:
    """Add a vector that is size 1 along exactly one of F or T.

    ``axis`` (2 for F, 3 for T) disambiguates when x itself has a size-1
    spatial dim; otherwise the broadcast axis is inferred.
    """
    mismatched = [a for a in (2, 3) if v.shape[a] != x.shape[a]]
    if axis is None:
        if len(mismatched) == 1:
            axis = mismatched[0]
        else:
            raise ShapeError(f"cannot infer broadcast axis for {v.shape} onto "
                             f"{x.shape}; exactly one of F/T must differ")
    if axis not in (2, 3) or v.shape[axis] != 1 \
            or any(a != axis for a in mismatched) \
            or v.shape[:2] != x.shape[:2]:
        raise ShapeError(f"cannot broadcast {v.shape} onto {x.shape} along one axis")
    out = x.data + v.data

    def bwd(node: Tensor) -> None:
        if x.requires_grad:
            x.accumulate_grad(node.grad)
        if v.requires_grad:
            v.accumulate_grad(node.grad.sum(axis=axis, keepdims=True))

    return Tensor._op(out, [x, v], bwd)


def add(x: Tensor, y: Tensor) -> Tensor:
    if x.shape != y.shape:
        raise ShapeError(f"add needs equal shapes, got {x.shape} and {y.shape}")
    out = x.data + y.data

    def bwd(node: Tensor) -> None:
        if x.requires_grad:
            x.accumulate_grad(node.grad)
        if y.requires_grad:
            y.accumulate_grad(node.grad)

    return Tensor._op(out, [x, y], bwd)


def mul(x: Tensor, y: Tensor) -> Tensor:
    if x.shape != y.shape:
        raise ShapeError(f"mul needs equal shapes, got {x.shape} and {y.shape}")
    out = x.data * y.data

    def bwd(node: Tensor) -> None:
        if x.requires_grad:
            x.accumulate_grad(node.grad * y.data)
        if y.requires_grad:
            y.accumulate_grad(node.grad * x.data)

    return Tensor._op(out, [x, y], bwd)


def sum_all(x: Tensor) -> Tensor:
    out = x.data.sum().reshape(1, 1, 1, 1)

    def bwd(node: Tensor) -> None:
        if x.requires_grad:
            x.accumulate_grad(np.broadcast_to(node.grad, x.shape).copy())

    return Tensor._op(out, [x], bwd)


def softmax_cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean cross-entropy between (N, K, 1, 1) logits and (N, K) soft labels."""
    n, k, f, t = logits.shape
    if (f, t) != (1, 1) or targets.shape != (n, k):
        raise ShapeError(f"logits {logits.shape} / targets {targets.shape} mismatch")
    z = logits.data.reshape(n, k)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = np.array(-(targets * logp).sum() / n).reshape(1, 1, 1, 1)

    def bwd(node: Tensor) -> None:
        if logits.requires_grad:
            g = (np.exp(logp) - targets) / n * node.grad.reshape(())
            logits.accumulate_grad(g.reshape(n, k, 1, 1).astype(logits.dtype))

    return Tensor._op(out.astype(logits.dtype), [logits], bwd)


# -- gradient checking -------------------------------------------------


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5,
                      max_coords: int = 25,
                      rng: np.random.Generator | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must be a scalar-valued function of ``x`` alone (close over any
    other parameters).  Run in double precision; single-precision checks
    drown in round-off.
    """
    rng = rng or np.random.default_rng(0)
    x.zero_grad()
    loss = f(x)
    backward(loss)
    analytic = x.grad
    if analytic is None:
        raise ValueError("f does not depend on x (no gradient recorded)")

    size = x.data.size
    if size <= max_coords:
        coords = np.arange(size)
    else:
        coords = rng.choice(size, size=max_coords, replace=False)

    flat = x.data.reshape(-1)
    worst = 0.0
    for c in coords:
        orig = flat[c]
        flat[c] = orig + h
        fp = f(x).item()
        flat[c] = orig - h
        fm = f(x).item()
        flat[c] = orig
        numeric = (fp - fm) / (2 * h)
        if not np.isfinite(numeric):
            raise FloatingPointError(f"non-finite finite difference at coord {c}")
        err = abs(analytic.reshape(-1)[c] - numeric) / max(1.0, abs(numeric))
        worst = max(worst, err)
    return worst
