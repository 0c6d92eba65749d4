"""Spherical parametrization: validity, area preservation, and the
distortion trajectory."""

import numpy as np
import pytest

from gimkit.mesh import MeshError
from gimkit.shapes import ellipsoid, icosphere, superellipsoid, torus
from gimkit.sphere import (SphericalParam, area_distortion, count_flipped,
                           parametrize_authalic, spherical_face_areas,
                           _centroid_projection)


def test_param_container_validates():
    mesh = icosphere(1)
    good = mesh.vertices / np.linalg.norm(mesh.vertices, axis=1)[:, None]
    SphericalParam(good, mesh)
    with pytest.raises(ValueError):
        SphericalParam(good * 1.5, mesh)
    with pytest.raises(ValueError):
        SphericalParam(good[:-1], mesh)


def test_spherical_face_areas_cover_the_sphere():
    mesh = icosphere(2)
    pos = mesh.vertices / np.linalg.norm(mesh.vertices, axis=1)[:, None]
    areas = spherical_face_areas(pos, mesh.faces)
    assert areas.min() > 0
    assert areas.sum() == pytest.approx(4 * np.pi, rel=1e-9)


def test_genus_must_be_zero():
    with pytest.raises(MeshError):
        parametrize_authalic(torus())


def test_sphere_parametrizes_to_itself():
    mesh = icosphere(2)
    param = parametrize_authalic(mesh)
    assert count_flipped(param.positions, mesh.faces) == 0
    assert area_distortion(mesh, param) < 1e-3


def test_ellipsoid_flat_distortion_halves_against_centroid_start():
    mesh = ellipsoid((3.0, 1.0, 1.0), subdivisions=3)
    start = SphericalParam(_centroid_projection(mesh), mesh)
    baseline = area_distortion(mesh, start)
    param = parametrize_authalic(mesh)
    final = area_distortion(mesh, param)
    assert count_flipped(param.positions, mesh.faces) == 0
    assert final <= 0.5 * baseline
    # accepted-iteration trajectory is monotone non-increasing
    hist = np.asarray(param.history)
    assert hist[0] == pytest.approx(baseline)
    assert np.all(np.diff(hist) <= 0)
    assert hist[-1] == pytest.approx(final)


def test_creased_shape_parametrizes_cleanly():
    mesh = superellipsoid(0.3, 0.3, (1.0, 0.9, 0.8), subdivisions=2)
    param = parametrize_authalic(mesh)
    assert count_flipped(param.positions, mesh.faces) == 0
    assert area_distortion(mesh, param) < area_distortion(
        mesh, SphericalParam(_centroid_projection(mesh), mesh))


def test_distortion_is_scale_invariant():
    mesh = icosphere(2)
    big = type(mesh)(mesh.vertices * 7.0, mesh.faces)
    p_small = parametrize_authalic(mesh)
    p_big = parametrize_authalic(big)
    assert area_distortion(mesh, p_small) == pytest.approx(
        area_distortion(big, p_big), rel=1e-6)
