"""Network building blocks.

``TfSepConvs`` is the core unit: an optional 1x1 transition, a channel
shuffle, an even split, and two parallel 1D-kernel paths (3x1 along
frequency, 1x3 along time).  Each path averages over its axis, mixes
channels with a 1x1 pointwise conv, and adds the result back to the
path input, broadcast along the pooled axis.  ``ConsecutiveBlock`` is
the baseline that applies the same two 1D kernels in sequence over the
full channel width, used for receptive-field comparisons.
"""
from __future__ import annotations

import numpy as np

from . import tensor as tz
from .tensor import BatchNormState, ConvParams, ShapeError, Tensor

Shape = tuple[int, int, int, int]


def _he_kernel(rng: np.random.Generator, out_ch: int, cg: int, kf: int, kt: int,
               dtype) -> Tensor:
    std = np.sqrt(2.0 / (cg * kf * kt))
    return Tensor((rng.standard_normal((out_ch, cg, kf, kt)) * std).astype(dtype),
                  requires_grad=True)


class Layer:
    """Minimal layer protocol: forward pass, parameters, complexity."""

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        raise NotImplementedError

    def params(self) -> dict[str, Tensor]:
        return {}

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def set_buffer(self, name: str, value: np.ndarray) -> None:
        raise KeyError(name)

    def complexity(self, in_shape: Shape) -> tuple[Shape, int, int]:
        """Returns (out_shape, conv MACs, other elementwise op count)."""
        raise NotImplementedError

    def __call__(self, x: Tensor, train: bool = False) -> Tensor:
        return self.forward(x, train)


class Conv2d(Layer):
    def __init__(self, in_ch: int, out_ch: int, kernel: tuple[int, int],
                 stride: tuple[int, int] = (1, 1), padding: tuple[int, int] = (0, 0),
                 groups: int = 1, bias: bool = False, *,
                 rng: np.random.Generator, dtype=np.float32):
        if in_ch % groups or out_ch % groups:
            raise ShapeError(f"channels ({in_ch}, {out_ch}) not divisible by "
                             f"groups {groups}")
        k = _he_kernel(rng, out_ch, in_ch // groups, *kernel, dtype)
        b = Tensor(np.zeros((1, out_ch, 1, 1), dtype), requires_grad=True) if bias else None
        self.p = ConvParams(k, b, stride, padding, groups)

    def forward(self, x, train=False):
        return tz.conv2d(x, self.p)

    def params(self):
        out = {"kernel": self.p.kernel}
        if self.p.bias is not None:
            out["bias"] = self.p.bias
        return out

    def complexity(self, in_shape):
        n, c, f, t = in_shape
        o, cg, kf, kt = self.p.kernel.shape
        (sf, st), (pf, pt) = self.p.stride, self.p.padding
        fo = (f + 2 * pf - kf) // sf + 1
        to = (t + 2 * pt - kt) // st + 1
        macs = kf * kt * cg * o * fo * to
        return (n, o, fo, to), n * macs, 0


class BatchNorm2d(Layer):
    def __init__(self, channels: int, momentum: float = 0.1, epsilon: float = 1e-5,
                 dtype=np.float32):
        self.state = BatchNormState.create(channels, momentum, epsilon, dtype)

    def forward(self, x, train=False):
        self.state.mode = "train" if train else "eval"
        return tz.batchnorm2d(x, self.state)

    def params(self):
        return {"gamma": self.state.gamma, "beta": self.state.beta}

    def buffers(self):
        return {"running_mean": self.state.running_mean,
                "running_var": self.state.running_var}

    def set_buffer(self, name, value):
        if name == "running_mean":
            self.state.running_mean = np.asarray(value, self.state.running_mean.dtype)
        elif name == "running_var":
            self.state.running_var = np.asarray(value, self.state.running_var.dtype)
        else:
            raise KeyError(name)

    def complexity(self, in_shape):
        return in_shape, 0, int(np.prod(in_shape))


class ReLU(Layer):
    def forward(self, x, train=False):
        return tz.relu(x)

    def complexity(self, in_shape):
        return in_shape, 0, int(np.prod(in_shape))


class MaxPool2d(Layer):
    def __init__(self, k: tuple[int, int] = (2, 2)):
        self.k = k

    def forward(self, x, train=False):
        return tz.maxpool2d(x, self.k)

    def complexity(self, in_shape):
        n, c, f, t = in_shape
        out = (n, c, f // self.k[0], t // self.k[1])
        return out, 0, int(np.prod(in_shape))


class ConvBnRelu(Layer):
    """Conv followed by batch norm and ReLU; conv carries no bias."""

    def __init__(self, in_ch, out_ch, kernel, stride=(1, 1), padding=(0, 0),
                 groups=1, *, rng, dtype=np.float32, bn_momentum=0.1, bn_eps=1e-5):
        self.conv = Conv2d(in_ch, out_ch, kernel, stride, padding, groups,
                           bias=False, rng=rng, dtype=dtype)
        self.bn = BatchNorm2d(out_ch, bn_momentum, bn_eps, dtype)

    def forward(self, x, train=False):
        return tz.relu(self.bn.forward(self.conv.forward(x, train), train))

    def params(self):
        out = {f"conv.{k}": v for k, v in self.conv.params().items()}
        out.update({f"bn.{k}": v for k, v in self.bn.params().items()})
        return out

    def buffers(self):
        return {f"bn.{k}": v for k, v in self.bn.buffers().items()}

    def set_buffer(self, name, value):
        if not name.startswith("bn."):
            raise KeyError(name)
        self.bn.set_buffer(name[3:], value)

    def complexity(self, in_shape):
        shape, macs, other = self.conv.complexity(in_shape)
        other += 2 * int(np.prod(shape))  # bn + relu
        return shape, macs, other


class AdaResNorm(Layer):
    """Learned per-channel blend of identity and frequency-wise instance norm.

    Statistics are taken over (channel, time) per (sample, frequency-bin):
    y = lam_c * x + (1 - lam_c) * (gamma_c * norm(x) + beta_c).
    Three learned scalars per channel.
    """

    def __init__(self, channels: int, epsilon: float = 1e-5, dtype=np.float32):
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        self.channels = channels
        self.epsilon = epsilon
        self.lam = Tensor(np.full((1, channels, 1, 1), 0.5, dtype), requires_grad=True)
        self.gamma = Tensor(np.ones((1, channels, 1, 1), dtype), requires_grad=True)
        self.beta = Tensor(np.zeros((1, channels, 1, 1), dtype), requires_grad=True)

    def forward(self, x, train=False):
        if x.shape[1] != self.channels:
            raise ShapeError(f"input has {x.shape[1]} channels, "
                             f"AdaResNorm expects {self.channels}")
        lam, gamma, beta = self.lam, self.gamma, self.beta
        mu = x.data.mean(axis=(1, 3), keepdims=True)
        var = x.data.var(axis=(1, 3), keepdims=True)
        inv = 1.0 / np.sqrt(var + self.epsilon)
        z = (x.data - mu) * inv
        normed = gamma.data * z + beta.data
        out = lam.data * x.data + (1 - lam.data) * normed

        def bwd(node: Tensor) -> None:
            g = node.grad
            if lam.requires_grad:
                lam.accumulate_grad((g * (x.data - normed)).sum(axis=(0, 2, 3),
                                                                keepdims=True))
            if gamma.requires_grad:
                gamma.accumulate_grad((g * (1 - lam.data) * z).sum(axis=(0, 2, 3),
                                                                   keepdims=True))
            if beta.requires_grad:
                beta.accumulate_grad((g * (1 - lam.data)).sum(axis=(0, 2, 3),
                                                              keepdims=True))
            if x.requires_grad:
                dz = g * (1 - lam.data) * gamma.data
                mean_dz = dz.mean(axis=(1, 3), keepdims=True)
                mean_dzz = (dz * z).mean(axis=(1, 3), keepdims=True)
                gx = lam.data * g + inv * (dz - mean_dz - z * mean_dzz)
                x.accumulate_grad(gx)

        return Tensor._op(out, [x, lam, gamma, beta], bwd)

    def params(self):
        return {"lam": self.lam, "gamma": self.gamma, "beta": self.beta}

    def complexity(self, in_shape):
        return in_shape, 0, int(np.prod(in_shape))


class _BroadcastPath(Layer):
    """One TF-SepConvs path: depthwise 1D conv, axis average, pointwise mix,
    then broadcast-add back onto the path input."""

    def __init__(self, channels: int, axis: str, *, rng, dtype=np.float32):
        if axis not in (tz.AXIS_F, tz.AXIS_T):
            raise ShapeError(f"path axis must be F or T, got {axis!r}")
        self.axis = axis
        kernel = (3, 1) if axis == tz.AXIS_F else (1, 3)
        padding = (1, 0) if axis == tz.AXIS_F else (0, 1)
        self.dw = ConvBnRelu(channels, channels, kernel, padding=padding,
                             groups=channels, rng=rng, dtype=dtype)
        self.pw = ConvBnRelu(channels, channels, (1, 1), rng=rng, dtype=dtype)

    def forward(self, x, train=False):
        v = self.pw.forward(tz.mean_over_axis(self.dw.forward(x, train), self.axis),
                            train)
        return tz.broadcast_add(x, v, axis=2 if self.axis == tz.AXIS_F else 3)

    def params(self):
        out = {f"dw.{k}": v for k, v in self.dw.params().items()}
        out.update({f"pw.{k}": v for k, v in self.pw.params().items()})
        return out

    def buffers(self):
        out = {f"dw.{k}": v for k, v in self.dw.buffers().items()}
        out.update({f"pw.{k}": v for k, v in self.pw.buffers().items()})
        return out

    def set_buffer(self, name, value):
        head, rest = name.split(".", 1)
        {"dw": self.dw, "pw": self.pw}[head].set_buffer(rest, value)

    def complexity(self, in_shape):
        shape, macs, other = self.dw.complexity(in_shape)
        pooled = list(shape)
        pooled[2 if self.axis == tz.AXIS_F else 3] = 1
        _, pw_macs, pw_other = self.pw.complexity(tuple(pooled))
        other += pw_other + int(np.prod(in_shape))  # mean + broadcast add
        return in_shape, macs + pw_macs, other


class TfSepConvs(Layer):
    """Time/frequency-separated convolution block."""

    def __init__(self, in_ch: int, out_ch: int, shuffle_groups: int = 2, *,
                 use_shuffle: bool = True, use_freq_path: bool = True,
                 use_temp_path: bool = True, rng, dtype=np.float32):
        if out_ch % 2:
            raise ShapeError(f"output channels must be even, got {out_ch}")
        if not (use_freq_path or use_temp_path):
            raise ShapeError("at least one path must be enabled")
        self.in_ch, self.out_ch = in_ch, out_ch
        self.shuffle_groups = shuffle_groups if use_shuffle else 1
        self.split = use_freq_path and use_temp_path
        self.transition = (ConvBnRelu(in_ch, out_ch, (1, 1), rng=rng, dtype=dtype)
                           if in_ch != out_ch else None)
        width = out_ch // 2 if self.split else out_ch
        self.freq = (_BroadcastPath(width, tz.AXIS_F, rng=rng, dtype=dtype)
                     if use_freq_path else None)
        self.temp = (_BroadcastPath(width, tz.AXIS_T, rng=rng, dtype=dtype)
                     if use_temp_path else None)

    def forward(self, x, train=False):
        if x.shape[1] != self.in_ch:
            raise ShapeError(f"input has {x.shape[1]} channels, expected {self.in_ch}")
        if self.transition is not None:
            x = self.transition.forward(x, train)
        if self.shuffle_groups > 1:
            x = tz.channel_shuffle(x, self.shuffle_groups)
        if self.split:
            xf, xt = tz.split_channels(x)
            return tz.concat_channels(self.freq.forward(xf, train),
                                      self.temp.forward(xt, train))
        path = self.freq if self.freq is not None else self.temp
        return path.forward(x, train)

    def _children(self):
        out = {}
        if self.transition is not None:
            out["transition"] = self.transition
        if self.freq is not None:
            out["freq"] = self.freq
        if self.temp is not None:
            out["temp"] = self.temp
        return out

    def params(self):
        return {f"{cn}.{k}": v for cn, child in self._children().items()
                for k, v in child.params().items()}

    def buffers(self):
        return {f"{cn}.{k}": v for cn, child in self._children().items()
                for k, v in child.buffers().items()}

    def set_buffer(self, name, value):
        head, rest = name.split(".", 1)
        self._children()[head].set_buffer(rest, value)

    def complexity(self, in_shape):
        macs = other = 0
        shape = in_shape
        if self.transition is not None:
            shape, macs, other = self.transition.complexity(in_shape)
        n, c, f, t = shape
        if self.split:
            half = (n, c // 2, f, t)
            for path in (self.freq, self.temp):
                _, m, o = path.complexity(half)
                macs += m
                other += o
        else:
            path = self.freq if self.freq is not None else self.temp
            _, m, o = path.complexity(shape)
            macs += m
            other += o
        return shape, macs, other


class ConsecutiveBlock(Layer):
    """Baseline block: 3x1 then 1x3 depthwise convs in sequence over the full
    width, pointwise mix (no axis pooling), residual add."""

    def __init__(self, channels: int, *, rng, dtype=np.float32):
        self.channels = channels
        self.dw_f = ConvBnRelu(channels, channels, (3, 1), padding=(1, 0),
                               groups=channels, rng=rng, dtype=dtype)
        self.dw_t = ConvBnRelu(channels, channels, (1, 3), padding=(0, 1),
                               groups=channels, rng=rng, dtype=dtype)
        self.pw = ConvBnRelu(channels, channels, (1, 1), rng=rng, dtype=dtype)

    def forward(self, x, train=False):
        if x.shape[1] != self.channels:
            raise ShapeError(f"input has {x.shape[1]} channels, "
                             f"expected {self.channels}")
        y = self.pw.forward(self.dw_t.forward(self.dw_f.forward(x, train), train),
                            train)
        return tz.add(x, y)

    def params(self):
        return {f"{cn}.{k}": v
                for cn, child in (("dw_f", self.dw_f), ("dw_t", self.dw_t),
                                  ("pw", self.pw))
                for k, v in child.params().items()}

    def buffers(self):
        return {f"{cn}.{k}": v
                for cn, child in (("dw_f", self.dw_f), ("dw_t", self.dw_t),
                                  ("pw", self.pw))
                for k, v in child.buffers().items()}

    def set_buffer(self, name, value):
        head, rest = name.split(".", 1)
        {"dw_f": self.dw_f, "dw_t": self.dw_t, "pw": self.pw}[head].set_buffer(rest, value)

    def complexity(self, in_shape):
        macs = other = 0
        for child in (self.dw_f, self.dw_t, self.pw):
            _, m, o = child.complexity(in_shape)
            macs += m
            other += o
        return in_shape, macs, other + int(np.prod(in_shape))


def param_count(layer: Layer) -> int:
    return sum(t.data.size for t in layer.params().values())
