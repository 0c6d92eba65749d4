"""Orthographic depth rendering and the shared view-rotation convention.

A view is (azimuth, elevation) in degrees: azimuth spins the object about
the +z axis, elevation then tilts it about the +y axis. The camera sits on
the +z axis looking down -z, so after rotation the nearest surface point
has the largest z. The nearest visible depth maps to intensity 255, the
farthest visible to 1, background stays 0, and the object centroid
projects to the image center.
"""

from __future__ import annotations

import numpy as np


class RenderError(RuntimeError):
    """Nothing rasterized (empty or degenerate projection)."""


def view_rotation(azimuth_deg, elevation_deg=0.0):
    """Object-space rotation for a view: tilt(about y) @ spin(about z)."""
    az = np.radians(azimuth_deg)
    el = np.radians(elevation_deg)
    ca, sa = np.cos(az), np.sin(az)
    ce, se = np.cos(el), np.sin(el)
    rz = np.array([[ca, -sa, 0.0], [sa, ca, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[ce, 0.0, se], [0.0, 1.0, 0.0], [-se, 0.0, ce]])
    return ry @ rz


class DepthImage:
    """uint8 raster plus the view and depth range it was rendered with."""

    def __init__(self, pixels, azimuth=0.0, elevation=0.0, near=0.0, far=0.0,
                 scale=1.0):
        self.pixels = np.asarray(pixels, dtype=np.uint8)
        if self.pixels.ndim != 2:
            raise ValueError("depth image must be 2-D")
        self.azimuth = float(azimuth)
        self.elevation = float(elevation)
        self.near = float(near)
        self.far = float(far)
        self.scale = float(scale)

    @property
    def resolution(self):
        return self.pixels.shape[0]


def render_depth(mesh, azimuth_deg, elevation_deg=0.0, resolution=128):
    """Orthographic depth image of the rotated mesh.

    Vertices are rotated by view_rotation, centered on their centroid, and
    scaled so the larger in-plane extent spans 90% of the frame. Depth per
    pixel is the nearest triangle along -z (z-buffer on interpolated z).
    """
    if mesh.n_faces == 0:
        raise RenderError("mesh has no faces")
    r = view_rotation(azimuth_deg, elevation_deg)
    v = mesh.vertices @ r.T
    v = v - v.mean(axis=0)
    extent = np.abs(v[:, :2]).max()
    if extent <= 0.0:
        raise RenderError("mesh projects to a point")
    scale = 0.45 * resolution / extent
    cx = (resolution - 1) / 2.0
    px = cx + v[:, 0] * scale
    py = cx - v[:, 1] * scale
    pz = v[:, 2]

    zbuf = np.full((resolution, resolution), -np.inf)
    tris = mesh.faces
    for f in range(len(tris)):
        i0, i1, i2 = tris[f]
        x0, x1, x2 = px[i0], px[i1], px[i2]
        y0, y1, y2 = py[i0], py[i1], py[i2]
        lo_c = max(int(np.floor(min(x0, x1, x2))), 0)
        hi_c = min(int(np.ceil(max(x0, x1, x2))), resolution - 1)
        lo_r = max(int(np.floor(min(y0, y1, y2))), 0)
        hi_r = min(int(np.ceil(max(y0, y1, y2))), resolution - 1)
        if lo_c > hi_c or lo_r > hi_r:
            continue
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if area == 0.0:
            continue
        cols, rows = np.meshgrid(np.arange(lo_c, hi_c + 1),
                                 np.arange(lo_r, hi_r + 1))
        w0 = ((x1 - cols) * (y2 - rows) - (x2 - cols) * (y1 - rows)) / area
        w1 = ((x2 - cols) * (y0 - rows) - (x0 - cols) * (y2 - rows)) / area
        w2 = 1.0 - w0 - w1
        eps = -1e-12
        inside = (w0 >= eps) & (w1 >= eps) & (w2 >= eps)
        if not inside.any():
            continue
        z = w0 * pz[i0] + w1 * pz[i1] + w2 * pz[i2]
        patch = zbuf[lo_r:hi_r + 1, lo_c:hi_c + 1]
        upd = inside & (z > patch)
        patch[upd] = z[upd]

    visible = np.isfinite(zbuf)
    if not visible.any():
        raise RenderError("empty render")
    znear = zbuf[visible].max()
    zfar = zbuf[visible].min()
    img = np.zeros((resolution, resolution))
    if znear - zfar < 1e-12:
        img[visible] = 255.0
    else:
        img[visible] = 1.0 + 254.0 * (zbuf[visible] - zfar) / (znear - zfar)
    return DepthImage(np.round(img).astype(np.uint8), azimuth_deg,
                      elevation_deg, near=znear, far=zfar, scale=scale)


def save_pgm(image, path):
    """Binary PGM (P5, maxval 255)."""
    pixels = np.asarray(getattr(image, "pixels", image), dtype=np.uint8)
    if pixels.ndim != 2:
        raise ValueError("PGM wants a 2-D image")
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(pixels.tobytes())


def load_pgm(path):
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"P5":
            raise ValueError("not a binary PGM: %s" % path)
        line = fh.readline()
        while line.startswith(b"#"):
            line = fh.readline()
        w, h = (int(t) for t in line.split())
        maxval = int(fh.readline())
        if maxval != 255:
            raise ValueError("unsupported maxval %d" % maxval)
        data = fh.read(w * h)
        if len(data) != w * h:
            raise ValueError("PGM payload truncated")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w).copy()
