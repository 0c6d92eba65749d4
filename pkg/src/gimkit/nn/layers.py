"""Parameterized layers over float64 numpy tensors.

Images travel as (batch, channels, height, width); vectors as (batch, dim).
Every layer caches what its backward pass needs on forward, returns the
input gradient from backward, and accumulates parameter gradients into
arrays of the same shape as the parameters. 64-bit floats throughout so
central finite differences can certify the gradients tightly.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Input tensor incompatible with a layer; message names the layer."""


def _he_normal(rng, shape, fan_in, scale):
    if scale == 0.0:
        return np.zeros(shape)
    return rng.normal(0.0, scale * np.sqrt(2.0 / fan_in), shape)


class Layer:
    """Base: stateless unless a subclass declares parameters."""

    name = ""

    def parameters(self):
        """Yields (attribute_name, value_array, gradient_array)."""
        return ()

    def zero_grads(self):
        for _, _, g in self.parameters():
            g[...] = 0.0

    def spec(self):
        raise NotImplementedError

    def param_arrays(self):
        return [value for _, value, _ in self.parameters()]


class Conv2D(Layer):
    """Cross-correlation with square kernel, zero padding, and stride.

    Weights are (out_channels, in_channels, k, k). The same class covers
    the 3x3 stride-1, 3x3 stride-2 downsampling, and 1x1 projection
    flavors.
    """

    def __init__(self, in_channels, out_channels, kernel, stride=1, pad=0,
                 rng=None, weight_scale=1.0, name="conv"):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.pad = pad
        self.name = name
        rng = rng or np.random.default_rng(0)
        fan_in = in_channels * kernel * kernel
        self.w = _he_normal(rng, (out_channels, in_channels, kernel, kernel),
                            fan_in, weight_scale)
        self.b = np.zeros(out_channels)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._cache = None

    def parameters(self):
        yield "w", self.w, self.dw
        yield "b", self.b, self.db

    def spec(self):
        return {
            "kind": "conv",
            "name": self.name,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "kernel": self.kernel,
            "stride": self.stride,
            "pad": self.pad,
        }

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError("%s expects (B, %d, H, W), got %r"
                             % (self.name, self.in_channels, x.shape))
        k, s, p = self.kernel, self.stride, self.pad
        if x.shape[2] + 2 * p < k or x.shape[3] + 2 * p < k:
            raise ShapeError("%s: input %r too small for kernel %d"
                             % (self.name, x.shape, k))
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        out = np.einsum("bcijkl,ockl->boij", win, self.w, optimize=True)
        out += self.b[:, None, None]
        self._cache = (win, xp.shape, x.shape)
        return out

    def backward(self, dout):
        win, xp_shape, x_shape = self._cache
        k, s, p = self.kernel, self.stride, self.pad
        self.dw += np.einsum("bcijkl,boij->ockl", win, dout, optimize=True)
        self.db += dout.sum(axis=(0, 2, 3))
        dxp = np.zeros(xp_shape)
        oh, ow = dout.shape[2], dout.shape[3]
        for a in range(k):
            for b in range(k):
                dxp[:, :, a:a + s * oh:s, b:b + s * ow:s] += np.einsum(
                    "boij,oc->bcij", dout, self.w[:, :, a, b], optimize=True)
        h, w = x_shape[2], x_shape[3]
        return dxp[:, :, p:p + h, p:p + w]


class ConvTranspose2D(Layer):
    """Transposed convolution with kernel size = stride (no overlap).

    Exact adjoint of Conv2D(kernel=k, stride=k, pad=0) sharing the same
    weight array read as (in_channels, out_channels, k, k): output size is
    k times the input size with zero crop. Covers both the upsampling
    filter and the 2x2 projection shortcut.
    """

    def __init__(self, in_channels, out_channels, kernel=2, rng=None,
                 weight_scale=1.0, name="convT"):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.name = name
        rng = rng or np.random.default_rng(0)
        # fan_in per output pixel is just in_channels: each output position
        # hears exactly one input pixel through one kernel tap
        self.w = _he_normal(rng, (in_channels, out_channels, kernel, kernel),
                            in_channels, weight_scale)
        self.b = np.zeros(out_channels)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._cache = None

    def parameters(self):
        yield "w", self.w, self.dw
        yield "b", self.b, self.db

    def spec(self):
        return {
            "kind": "convT",
            "name": self.name,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "kernel": self.kernel,
        }

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError("%s expects (B, %d, H, W), got %r"
                             % (self.name, self.in_channels, x.shape))
        k = self.kernel
        bsz, _, h, w = x.shape
        out = np.einsum("bcij,covw->boivjw", x, self.w, optimize=True)
        out = out.reshape(bsz, self.out_channels, k * h, k * w)
        out += self.b[:, None, None]
        self._cache = x
        return out

    def backward(self, dout):
        x = self._cache
        k = self.kernel
        bsz, _, h, w = x.shape
        d6 = dout.reshape(bsz, self.out_channels, h, k, w, k)
        self.dw += np.einsum("bcij,boivjw->covw", x, d6, optimize=True)
        self.db += dout.sum(axis=(0, 2, 3))
        return np.einsum("boivjw,covw->bcij", d6, self.w, optimize=True)


class Dense(Layer):
    """Fully connected (batch, in) -> (batch, out)."""

    def __init__(self, in_dim, out_dim, rng=None, weight_scale=1.0, name="fc"):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.name = name
        rng = rng or np.random.default_rng(0)
        self.w = _he_normal(rng, (in_dim, out_dim), in_dim, weight_scale)
        self.b = np.zeros(out_dim)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._cache = None

    def parameters(self):
        yield "w", self.w, self.dw
        yield "b", self.b, self.db

    def spec(self):
        return {"kind": "dense", "name": self.name,
                "in_dim": self.in_dim, "out_dim": self.out_dim}

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError("%s expects (B, %d), got %r"
                             % (self.name, self.in_dim, x.shape))
        self._cache = x
        return x @ self.w + self.b

    def backward(self, dout):
        x = self._cache
        self.dw += x.T @ dout
        self.db += dout.sum(axis=0)
        return dout @ self.w.T


class LeakyReLU(Layer):
    """max(x, leak * x); leak 0 is the plain rectifier, leak 1 the identity."""

    def __init__(self, leak=0.0, name="lrelu"):
        self.leak = float(leak)
        self.name = name
        self._cache = None

    def spec(self):
        return {"kind": "leaky_relu", "name": self.name, "leak": self.leak}

    def forward(self, x):
        neg = x < 0.0
        self._cache = neg
        return np.where(neg, self.leak * x, x)

    def backward(self, dout):
        neg = self._cache
        return np.where(neg, self.leak * dout, dout)


class Relu(LeakyReLU):
    def __init__(self, name="relu"):
        super().__init__(0.0, name=name)

    def spec(self):
        return {"kind": "relu", "name": self.name}


class Reshape(Layer):
    """(batch, prod(shape)) <-> (batch, *shape); used to seed the spatial
    decoder from the fully connected stem."""

    def __init__(self, shape, name="reshape"):
        self.shape = tuple(int(n) for n in shape)
        self.name = name
        self._cache = None

    def spec(self):
        return {"kind": "reshape", "name": self.name, "shape": list(self.shape)}

    def forward(self, x):
        want = int(np.prod(self.shape))
        if x.ndim != 2 or x.shape[1] != want:
            raise ShapeError("%s expects (B, %d), got %r"
                             % (self.name, want, x.shape))
        self._cache = x.shape
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, dout):
        return dout.reshape(self._cache)
