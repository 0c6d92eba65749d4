"""Residual blocks: standard (identity shortcut), downsampling (1x1
stride-2 projection shortcut), and upsampling (2x2 transposed-conv
projection shortcut).

A block computes branch(x) + shortcut(x) with no activation after the sum,
so a zero-initialized branch tail makes the standard block an exact
identity. The composed "down-residual" / "up-residual" units used by the
networks are one resizing block followed by two standard blocks.
"""

from __future__ import annotations

import numpy as np

from .layers import Conv2D, ConvTranspose2D, LeakyReLU, ShapeError


class _Block:
    """Shared plumbing: a main branch (list of layers) plus a shortcut."""

    branch = ()
    shortcut = None
    name = ""

    def parameters(self):
        for layer in self.branch:
            for item in layer.parameters():
                yield item
        if self.shortcut is not None:
            for item in self.shortcut.parameters():
                yield item

    def zero_grads(self):
        for _, _, g in self.parameters():
            g[...] = 0.0

    def forward(self, x):
        out = x
        for layer in self.branch:
            out = layer.forward(out)
        skip = x if self.shortcut is None else self.shortcut.forward(x)
        if out.shape != skip.shape:
            raise ShapeError("%s: branch %r vs shortcut %r"
                             % (self.name, out.shape, skip.shape))
        return out + skip

    def backward(self, dout):
        d = dout
        for layer in reversed(self.branch):
            d = layer.backward(d)
        if self.shortcut is None:
            return d + dout
        return d + self.shortcut.backward(dout)


class ResidualBlock(_Block):
    """conv3x3 -> activation -> conv3x3 (zero-init) + identity."""

    def __init__(self, channels, rng=None, leak=0.0, name="res"):
        self.channels = channels
        self.leak = leak
        self.name = name
        self.branch = [
            Conv2D(channels, channels, 3, stride=1, pad=1, rng=rng,
                   name=name + ".c1"),
            LeakyReLU(leak, name=name + ".a"),
            Conv2D(channels, channels, 3, stride=1, pad=1, rng=rng,
                   weight_scale=0.0, name=name + ".c2"),
        ]
        self.shortcut = None

    def spec(self):
        return {"kind": "res_block", "name": self.name,
                "channels": self.channels, "leak": self.leak}


class DownBlock(_Block):
    """First filter is a stride-2 zero-padded 3x3 convolution; the shortcut
    is a 1x1 stride-2 projection. Halves the spatial size."""

    def __init__(self, in_channels, out_channels, rng=None, name="down"):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.name = name
        self.branch = [
            Conv2D(in_channels, out_channels, 3, stride=2, pad=1, rng=rng,
                   name=name + ".c1"),
            LeakyReLU(0.0, name=name + ".a"),
            Conv2D(out_channels, out_channels, 3, stride=1, pad=1, rng=rng,
                   weight_scale=0.0, name=name + ".c2"),
        ]
        self.shortcut = Conv2D(in_channels, out_channels, 1, stride=2, pad=0,
                               rng=rng, name=name + ".proj")

    def spec(self):
        return {"kind": "down_block", "name": self.name,
                "in_channels": self.in_channels,
                "out_channels": self.out_channels}


class UpBlock(_Block):
    """First filter is a 2x2 transposed convolution with upsample 2 and
    zero crop; the shortcut is a 2x2 transposed-conv projection. Doubles
    the spatial size; activations leak 0.2."""

    def __init__(self, in_channels, out_channels, rng=None, leak=0.2,
                 name="up"):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.leak = leak
        self.name = name
        self.branch = [
            ConvTranspose2D(in_channels, out_channels, 2, rng=rng,
                            name=name + ".t1"),
            LeakyReLU(leak, name=name + ".a"),
            Conv2D(out_channels, out_channels, 3, stride=1, pad=1, rng=rng,
                   weight_scale=0.0, name=name + ".c2"),
        ]
        self.shortcut = ConvTranspose2D(in_channels, out_channels, 2, rng=rng,
                                        name=name + ".proj")

    def spec(self):
        return {"kind": "up_block", "name": self.name,
                "in_channels": self.in_channels,
                "out_channels": self.out_channels, "leak": self.leak}


def down_residual(in_channels, out_channels, rng=None, name="downres"):
    """Downsampling block followed by two standard blocks."""
    return [
        DownBlock(in_channels, out_channels, rng=rng, name=name + ".d"),
        ResidualBlock(out_channels, rng=rng, leak=0.0, name=name + ".r1"),
        ResidualBlock(out_channels, rng=rng, leak=0.0, name=name + ".r2"),
    ]


def up_residual(in_channels, out_channels, rng=None, leak=0.2, name="upres"):
    """Upsampling block followed by two standard blocks; every activation
    in the unit shares the up-path leak."""
    return [
        UpBlock(in_channels, out_channels, rng=rng, leak=leak, name=name + ".u"),
        ResidualBlock(out_channels, rng=rng, leak=leak, name=name + ".r1"),
        ResidualBlock(out_channels, rng=rng, leak=leak, name=name + ".r2"),
    ]
