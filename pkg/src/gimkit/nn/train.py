"""SGD training with momentum and a staircase learning-rate schedule,
plus the shape-aware loss and the generation helpers built on trained
channel networks.

The loss contract per sample is the raw sum L = sum((|C| * (u - g))^2)
over pixels, with gradient 2 * C^2 * (u - g). The optimizer divides batch
gradients by (batch * pixels) so the published step sizes behave the same
across resolutions; reported epoch losses use the same per-pixel mean
scale, always in the units of the raw targets.

Residual targets can sit orders of magnitude below the He-scaled feature
maps feeding the output head, which starves every interior layer of
gradient. train() therefore rescales the targets so their pooled std hits
config.target_std before the loss, and records the applied gain in
network.meta["output_gain"]; predict_gim and RigidGenerator divide it back
out, so callers always see raw units end to end.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ..gim import GeometryImage
from .layers import ShapeError


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; training aborted."""


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    epochs: int = 15
    batch_size: int = 16
    seed: int = 0
    decay_every: int = 5
    decay_factor: float = 0.1
    # pooled std the targets are rescaled to before the loss; None trains
    # in raw units (gain 1). 0.4 sits well clear of the momentum-0.9
    # stability edge, which is near unit internal std at lr 0.01.
    target_std: float | None = 0.4


def learning_rate_at(config, epoch):
    """Staircase schedule, epoch is 1-based: the initial rate holds for
    decay_every epochs, then shrinks by decay_factor per stair."""
    stair = (epoch - 1) // config.decay_every
    return config.learning_rate * config.decay_factor ** stair


def curvature_weighted_loss(pred, target, curvature=None):
    """L = sum((|C| * (pred - target))^2); returns (loss, d/dpred).

    curvature None means unweighted (C identically 1), which reduces to
    the plain squared Euclidean loss.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError("loss: pred %r vs target %r"
                         % (pred.shape, target.shape))
    resid = pred - target
    if curvature is None:
        return float((resid ** 2).sum()), 2.0 * resid
    c = np.abs(np.asarray(curvature, dtype=np.float64))
    if c.shape != pred.shape:
        raise ShapeError("loss: curvature %r vs pred %r"
                         % (c.shape, pred.shape))
    c2 = c * c
    return float((c2 * resid * resid).sum()), 2.0 * c2 * resid


@dataclass
class TrainResult:
    network: object
    epoch_losses: list = field(default_factory=list)
    learning_rates: list = field(default_factory=list)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "mean_loss", "lr"])
            for i, (loss, lr) in enumerate(
                    zip(self.epoch_losses, self.learning_rates), start=1):
                w.writerow([i, repr(loss), repr(lr)])


def train(network, samples, config, verbose=False):
    """SGD with momentum over (input, target[, weight]) samples.

    inputs are per-sample arrays without the batch axis: (dim,) for
    parametric networks, (channels, H, W) for image networks; targets are
    (H, W) channels; the optional third element is the |C| weight image.
    Shuffling is driven entirely by config.seed, so equal seeds give
    identical loss curves.
    """
    if not samples:
        raise ValueError("empty training set")
    xs = [np.asarray(s[0], dtype=np.float64) for s in samples]
    ys = [np.asarray(s[1], dtype=np.float64) for s in samples]
    ws = [np.asarray(s[2], dtype=np.float64) if len(s) > 2 and s[2] is not None
          else None for s in samples]
    n = len(xs)

    gain = 1.0
    if config.target_std is not None:
        pooled = float(np.std(np.stack(ys)))
        if pooled > 1e-12:
            gain = config.target_std / pooled
    network.meta["output_gain"] = gain
    ys = [y * gain for y in ys]

    rng = np.random.default_rng(config.seed)
    velocity = [np.zeros_like(v) for _, v, _ in network.parameters()]

    result = TrainResult(network)
    pixels = ys[0].size
    for epoch in range(1, config.epochs + 1):
        lr = learning_rate_at(config, epoch)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            xb = np.stack([xs[i] for i in idx])
            yb = np.stack([ys[i] for i in idx])
            wb = None
            if any(ws[i] is not None for i in idx):
                wb = np.stack([ws[i] if ws[i] is not None
                               else np.ones_like(ys[i]) for i in idx])
            network.zero_grads()
            out = network.forward(xb)
            pred = out[:, 0]
            loss, dpred = curvature_weighted_loss(pred, yb, wb)
            if not np.isfinite(loss):
                raise TrainingDiverged("non-finite loss at epoch %d" % epoch)
            total += loss
            scale = 1.0 / (len(idx) * pixels)
            network.backward((dpred * scale)[:, None])
            for v, (_, p, g) in zip(velocity, network.parameters()):
                v *= config.momentum
                v -= lr * g
                p += v
        mean_loss = total / (n * pixels * gain * gain)
        result.epoch_losses.append(mean_loss)
        result.learning_rates.append(lr)
        if verbose:
            print("epoch %d  loss %.6g  lr %g" % (epoch, mean_loss, lr))
    return result


def depth_to_input(depth):
    """Depth image (object with .pixels or raw array, 0..255) to the
    (1, H, W) float input the image networks consume."""
    pixels = getattr(depth, "pixels", depth)
    arr = np.asarray(pixels, dtype=np.float64) / 255.0
    if arr.ndim == 2:
        arr = arr[None]
    return arr


def _raw_units(network, out):
    return out / network.meta.get("output_gain", 1.0)


def predict_gim(channel_nets, depth):
    """Run the three per-channel image networks on one depth image and
    stack the outputs into a position geometry image."""
    x = depth_to_input(depth)[None]
    chans = [_raw_units(channel_nets[name], channel_nets[name].forward(x)[0, 0])
             for name in ("x", "y", "z")]
    return GeometryImage(np.stack(chans, axis=-1), ["x", "y", "z"])


def make_base_gim(base_gim, azimuth_deg, elevation_deg=0.0):
    """Rotate the base image's position channels by the view rotation.

    The rotation acts on channel values, not on pixel coordinates: pixel
    (i, j) still names the same parametric point of the base surface, now
    seen in the transformed pose.
    """
    from ..render import view_rotation

    r = view_rotation(azimuth_deg, elevation_deg)
    pos = base_gim.position_channels() @ r.T
    return GeometryImage(pos, ["x", "y", "z"])


def view_from_param(param, n_classes):
    """Angles (azimuth, elevation) in degrees from the sin/cos block that
    follows the one-hot block; tolerant of interpolated (non-unit) values."""
    v = np.asarray(param, dtype=np.float64)[n_classes:n_classes + 4]
    az = np.degrees(np.arctan2(v[0], v[1]))
    el = np.degrees(np.arctan2(v[2], v[3]))
    return az, el


@dataclass
class RigidGenerator:
    """Bundle of three trained residual-channel networks plus the base
    image they are residuals against."""

    nets: dict
    base_gim: GeometryImage
    n_classes: int

    def generate(self, param):
        param = np.asarray(param, dtype=np.float64)
        az, el = view_from_param(param, self.n_classes)
        base = make_base_gim(self.base_gim, az, el)
        x = param[None]
        res = [_raw_units(self.nets[name], self.nets[name].forward(x)[0, 0])
               for name in ("x", "y", "z")]
        data = base.position_channels() + np.stack(res, axis=-1)
        return GeometryImage(data, ["x", "y", "z"])

    def generate_zero_residual(self, param):
        """The network contribution forced to zero: the transformed base."""
        az, el = view_from_param(np.asarray(param, np.float64), self.n_classes)
        return make_base_gim(self.base_gim, az, el)


def interpolate_params(generator, v1, v2, steps):
    """Geometry images at linear blends of two codes, endpoints included:
    steps=5 gives interior weights 0.75/0.25, 0.5/0.5, 0.25/0.75."""
    if steps < 2:
        raise ValueError("steps must be >= 2")
    v1 = np.asarray(v1, dtype=np.float64)
    v2 = np.asarray(v2, dtype=np.float64)
    if v1.shape != v2.shape:
        raise ValueError("parameter vectors differ in shape")
    out = []
    for t in np.linspace(0.0, 1.0, steps):
        out.append(generator.generate((1.0 - t) * v1 + t * v2))
    return out
