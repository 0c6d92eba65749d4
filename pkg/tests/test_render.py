"""Depth rendering: normalization, centering, and PGM round trips."""

import numpy as np
import pytest

from gimkit.render import (DepthImage, RenderError, load_pgm, render_depth,
                           save_pgm, view_rotation)
from gimkit.shapes import icosphere, superellipsoid
from gimkit.mesh import TriMesh


def test_view_rotation_composition():
    r = view_rotation(0.0, 0.0)
    assert np.allclose(r, np.eye(3))
    r180 = view_rotation(180.0, 0.0)
    assert np.allclose(r180 @ np.array([1.0, 0, 0]), [-1.0, 0, 0], atol=1e-12)
    assert np.allclose(r180 @ np.array([0, 0, 1.0]), [0, 0, 1.0], atol=1e-12)
    # elevation tips the +z axis; rotations stay orthonormal
    r_el = view_rotation(30.0, 45.0)
    assert np.allclose(r_el @ r_el.T, np.eye(3), atol=1e-12)


def test_depth_normalization_and_centering():
    img = render_depth(icosphere(3), 30.0, 15.0, resolution=128)
    assert img.pixels.shape == (128, 128)
    assert img.pixels.max() == 255
    # occupied-pixel centroid lands on the image center
    ys, xs = np.nonzero(img.pixels)
    assert abs(xs.mean() - 63.5) < 1.0
    assert abs(ys.mean() - 63.5) < 1.0
    # background stays 0 and the depth range is recorded
    assert img.pixels[0, 0] == 0
    assert img.near > img.far


def test_sphere_silhouette_is_circular():
    img = render_depth(icosphere(3), 0.0, 0.0, resolution=96)
    occupied = (img.pixels > 0).sum()
    # 90% frame fill: radius 0.45 * 96 -> area within a few percent
    expect = np.pi * (0.45 * 96) ** 2
    assert abs(occupied - expect) / expect < 0.05


def test_distinct_views_differ():
    # 180 degrees would alias on this point-symmetric shape; 90 does not
    mesh = superellipsoid(0.6, 1.2, (1.3, 0.8, 1.0), 2)
    a = render_depth(mesh, 0.0, 0.0, resolution=64)
    b = render_depth(mesh, 90.0, 0.0, resolution=64)
    assert int(np.abs(a.pixels.astype(int) - b.pixels.astype(int)).sum()) > 0


def test_resolution_parameter():
    img = render_depth(icosphere(2), 45.0, resolution=32)
    assert img.pixels.shape == (32, 32)


def test_degenerate_meshes_are_an_error():
    with pytest.raises(RenderError):
        render_depth(TriMesh(np.zeros((0, 3)), np.zeros((0, 3))), 0.0)
    flat = TriMesh(np.zeros((3, 3)), np.array([[0, 1, 2]]))
    with pytest.raises(RenderError):
        render_depth(flat, 0.0)


def test_pgm_roundtrip(tmp_path):
    img = render_depth(icosphere(2), 10.0, 5.0, resolution=48)
    path = tmp_path / "d.pgm"
    save_pgm(img, path)
    back = load_pgm(path)
    assert np.array_equal(back, img.pixels)


def test_pgm_rejects_other_formats(tmp_path):
    path = tmp_path / "bad.pgm"
    path.write_bytes(b"P2\n2 2\n255\n0 1 2 3\n")
    with pytest.raises(ValueError):
        load_pgm(path)


def test_depth_image_wants_2d():
    with pytest.raises(ValueError):
        DepthImage(np.zeros((4, 4, 3), dtype=np.uint8))
