"""Generator networks and their checkpoint container.

Two builders: a depth-image encoder/decoder that emits one geometry-image
channel, and a parametric-code decoder that emits one residual channel to
be summed with a transformed base image. Both are per-channel — three
independent instances cover x, y, z.

Default sizes are desk scale. ``paper_depth=True`` keeps the same block
grammar but pads with extra standard residual blocks to the full published
depths (102 parameterized layers for image->channel, 65 for code->channel);
those variants exist for shape checks, not desk training.
"""

from __future__ import annotations

import json

import numpy as np

from .blocks import DownBlock, ResidualBlock, UpBlock, down_residual, up_residual
from .layers import Conv2D, ConvTranspose2D, Dense, LeakyReLU, Relu, Reshape

_COUNTED = (Conv2D, ConvTranspose2D, Dense)


class Network:
    """Ordered units (layers and residual blocks) with shared plumbing."""

    def __init__(self, units, meta=None):
        self.units = list(units)
        self.meta = dict(meta or {})

    def forward(self, x):
        for unit in self.units:
            x = unit.forward(x)
        return x

    def backward(self, dout):
        for unit in reversed(self.units):
            dout = unit.backward(dout)
        return dout

    def parameters(self):
        for unit in self.units:
            for item in unit.parameters():
                yield item

    def zero_grads(self):
        for _, _, g in self.parameters():
            g[...] = 0.0

    def n_parameters(self):
        return sum(v.size for _, v, _ in self.parameters())


def count_layers(network):
    """Number of parameterized layers: convolutions, transposed
    convolutions, projections, and fully connected layers. Activations and
    reshapes are free."""
    total = 0
    for unit in network.units:
        if isinstance(unit, _COUNTED):
            total += 1
        elif hasattr(unit, "branch"):
            total += sum(isinstance(l, _COUNTED) for l in unit.branch)
            if unit.shortcut is not None:
                total += 1
    return total


def _halvings(src, dst):
    if src < dst or src % dst != 0:
        raise ValueError("resolution %d not reachable from %d by halving"
                         % (dst, src))
    n = 0
    while src > dst:
        if src % 2 != 0:
            raise ValueError("resolution chain must stay even")
        src //= 2
        n += 1
    return n


def _width_ladder(width, steps, cap=4):
    # stem width, doubling toward the bottleneck but capped at cap*width
    out = []
    w = width
    for _ in range(steps):
        w = min(w * 2, cap * width)
        out.append(w)
    return out


def build_image_to_gim(input_channels=1, input_res=128, gim_res=64, width=8,
                       bottleneck=8, paper_depth=False, seed=0, meta=None):
    """Depth/RGB image -> one geometry-image channel.

    Stem convolution, down-residual units to the bottleneck resolution,
    up-residual units to the output resolution, head convolution to one
    channel. paper_depth pins bottleneck 4 and pads with standard blocks
    so the parameterized-layer count is exactly 102.
    """
    if paper_depth:
        bottleneck = 4
    rng = np.random.default_rng(seed)
    downs = _halvings(input_res, bottleneck)
    ups = _halvings(gim_res, bottleneck)
    dwidths = _width_ladder(width, downs)
    deep = dwidths[-1] if dwidths else width
    uwidths = dwidths[-2::-1] + [width] if downs > 1 else [width]
    uwidths = uwidths[-ups:] if ups <= len(uwidths) else (
        [deep] * (ups - len(uwidths)) + uwidths)

    units = [Conv2D(input_channels, width, 3, stride=1, pad=1, rng=rng,
                    name="stem")]
    w = width
    for i in range(downs):
        units.extend(down_residual(w, dwidths[i], rng=rng, name="d%d" % i))
        w = dwidths[i]
    if paper_depth:
        # grammar-preserving padding to the published depth: 18 standard
        # blocks and one extra convolution at the bottleneck
        # 1 stem + 5*7 downs + 18*2 + 1 + 4*7 ups + 1 head = 102
        for i in range(18):
            units.append(ResidualBlock(w, rng=rng, name="mid%d" % i))
        units.append(Conv2D(w, w, 3, stride=1, pad=1, rng=rng, name="neck"))
    for i in range(ups):
        units.extend(up_residual(w, uwidths[i], rng=rng, name="u%d" % i))
        w = uwidths[i]
    # zero-init head: the network starts emitting exactly zero, so early
    # epochs fit signal rather than unwinding random output scale
    units.append(Conv2D(w, 1, 3, stride=1, pad=1, rng=rng, weight_scale=0.0,
                        name="head"))

    info = {"input": "image", "input_channels": input_channels,
            "input_res": input_res, "gim_res": gim_res, "width": width,
            "bottleneck": bottleneck, "paper_depth": bool(paper_depth),
            "seed": seed}
    info.update(meta or {})
    return Network(units, info)


def build_param_to_residual_gim(param_dim, gim_res=64, width=8, base_res=4,
                                fc_hidden=128, paper_depth=False, seed=0,
                                meta=None):
    """Parametric code -> one residual geometry-image channel.

    Two fully connected layers seed a coarse spatial tensor; up-residual
    units grow it to the output resolution; a head convolution emits the
    channel. The channel is meant to be summed with the matching channel
    of the transformed base image. paper_depth pads with standard blocks
    at the coarse resolution so the count is exactly 65.
    """
    if param_dim < 1:
        raise ValueError("param_dim must be >= 1")
    rng = np.random.default_rng(seed)
    ups = _halvings(gim_res, base_res)
    widths = [max(width, width * 2 ** (ups - 1 - i)) for i in range(ups)]
    widths = [min(w, 4 * width) for w in widths]
    w0 = min(4 * width, width * 2 ** ups)

    units = [
        Dense(param_dim, fc_hidden, rng=rng, name="fc1"),
        LeakyReLU(0.2, name="fc1.a"),
        Dense(fc_hidden, w0 * base_res * base_res, rng=rng, name="fc2"),
        LeakyReLU(0.2, name="fc2.a"),
        Reshape((w0, base_res, base_res), name="seed"),
    ]
    w = w0
    if paper_depth:
        # 2 fc + 17*2 standard blocks + 4*7 ups + 1 head = 65
        for i in range(17):
            units.append(ResidualBlock(w, rng=rng, leak=0.2, name="mid%d" % i))
    for i in range(ups):
        units.extend(up_residual(w, widths[i], rng=rng, name="u%d" % i))
        w = widths[i]
    # zero-init head: an untrained generator emits a zero residual, i.e.
    # exactly the transformed base shape
    units.append(Conv2D(w, 1, 3, stride=1, pad=1, rng=rng, weight_scale=0.0,
                        name="head"))

    info = {"input": "param", "param_dim": param_dim, "gim_res": gim_res,
            "width": width, "base_res": base_res, "fc_hidden": fc_hidden,
            "paper_depth": bool(paper_depth), "seed": seed}
    info.update(meta or {})
    return Network(units, info)


def _rebuild_unit(spec):
    kind = spec["kind"]
    name = spec["name"]
    if kind == "conv":
        return Conv2D(spec["in_channels"], spec["out_channels"],
                      spec["kernel"], stride=spec["stride"], pad=spec["pad"],
                      name=name)
    if kind == "convT":
        return ConvTranspose2D(spec["in_channels"], spec["out_channels"],
                               spec["kernel"], name=name)
    if kind == "dense":
        return Dense(spec["in_dim"], spec["out_dim"], name=name)
    if kind == "relu":
        return Relu(name=name)
    if kind == "leaky_relu":
        return LeakyReLU(spec["leak"], name=name)
    if kind == "reshape":
        return Reshape(spec["shape"], name=name)
    if kind == "res_block":
        return ResidualBlock(spec["channels"], leak=spec["leak"], name=name)
    if kind == "down_block":
        return DownBlock(spec["in_channels"], spec["out_channels"], name=name)
    if kind == "up_block":
        return UpBlock(spec["in_channels"], spec["out_channels"],
                       leak=spec["leak"], name=name)
    raise ValueError("unknown unit kind %r" % kind)


def save_network(network, path):
    """One JSON header line describing the graph, then every parameter
    array concatenated as raw little-endian float64."""
    params = list(network.parameters())
    header = {
        "format": "netkit-1",
        "meta": network.meta,
        "units": [u.spec() for u in network.units],
        "params": [{"name": n, "shape": list(v.shape)} for n, v, _ in params],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for _, v, _ in params:
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_network(path):
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        if header.get("format") != "netkit-1":
            raise ValueError("not a network checkpoint: %s" % path)
        units = [_rebuild_unit(s) for s in header["units"]]
        net = Network(units, header["meta"])
        for rec, (_, v, _) in zip(header["params"], net.parameters()):
            n = int(np.prod(rec["shape"]))
            blob = fh.read(n * 8)
            if len(blob) != n * 8:
                raise ValueError("checkpoint blob truncated")
            v[...] = np.frombuffer(blob, dtype="<f8").reshape(rec["shape"])
    return net
