"""Cross-shape mapping: rotation search, composition, filtering, descriptors."""

import numpy as np
import pytest

from gimkit.correspond import (
    D2Descriptor,
    compose,
    consistent_geometry_image,
    d2_descriptor,
    dense_map,
    gim_to_correspondence,
    load_correspondence,
    nearest_surface_point,
    save_correspondence,
    select_map_and_filter,
    similarity_matrix,
    smoothness_energy,
    spectral_cluster,
)
from gimkit.gim import reconstruction_error
from gimkit.mesh import TriMesh
from gimkit.shapes import icosphere, superellipsoid
from gimkit.sphere import parametrize_authalic


@pytest.fixture(scope="module")
def sphere_param():
    mesh = icosphere(2)
    return mesh, parametrize_authalic(mesh)


@pytest.fixture(scope="module")
def blob_pair():
    # radial bumps keyed to x and y kill every mirror/flip symmetry, so the
    # rotation recovery below has a unique answer
    ico = icosphere(2)
    v = ico.vertices
    scale = 1.0 + 0.25 * np.tanh(2.0 * v[:, 0]) + 0.12 * np.tanh(2.0 * v[:, 1])
    blob = TriMesh(v * scale[:, None], ico.faces.copy())
    rz = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    rot = TriMesh(blob.vertices @ rz.T, blob.faces.copy())
    return blob, rot, rz


@pytest.fixture(scope="module")
def ellipsoid_param():
    mesh = superellipsoid(1.0, 1.0, (1.2, 1.0, 1.0), 3)
    return mesh, parametrize_authalic(mesh)


def test_self_map_is_identity(sphere_param):
    mesh, param = sphere_param
    m = dense_map(param, param)
    assert np.array_equal(m.rotation, np.eye(3))
    assert np.abs(m.mapped_positions() - mesh.vertices).max() < 1e-12


def test_rotated_copy_recovers_the_rotation(blob_pair):
    blob, rot, rz = blob_pair
    m = dense_map(parametrize_authalic(blob), parametrize_authalic(rot))
    assert np.linalg.norm(m.rotation - rz) < 1e-12
    # every source vertex must land on its rotated twin
    want = blob.vertices @ rz.T
    err = np.linalg.norm(m.mapped_positions() - want, axis=1)
    assert err.max() < 1e-9


def test_sphere_to_ellipsoid_tracks_radial_oracle(ellipsoid_param):
    # with the domain alignment pinned, the map must stay close to the
    # analytic radial correspondence p -> (1.2 px, py, pz)
    ell, pe = ellipsoid_param
    ico = icosphere(3)
    pi = parametrize_authalic(ico)
    m = dense_map(pi, pe, rotation=np.eye(3))
    unit = ico.vertices / np.linalg.norm(ico.vertices, axis=1, keepdims=True)
    radial = unit * np.array([1.2, 1.0, 1.0])
    d = np.linalg.norm(m.mapped_positions() - radial, axis=1)
    assert d.max() < 0.05
    assert d.mean() < 0.03


def test_pinned_rotation_is_used_verbatim(sphere_param):
    _, param = sphere_param
    rz = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    m = dense_map(param, param, rotation=rz)
    assert np.array_equal(m.rotation, rz)


def test_rotation_pin_must_be_orthonormal(sphere_param):
    _, param = sphere_param
    with pytest.raises(ValueError):
        dense_map(param, param, rotation=np.eye(3) * 2.0)
    with pytest.raises(ValueError):
        dense_map(param, param, rotation=np.ones((3, 3)))


def test_compose_chains_and_snaps(sphere_param, ellipsoid_param):
    mesh2, p2 = sphere_param
    ell, pe = ellipsoid_param
    ico3 = icosphere(3)
    p3 = parametrize_authalic(ico3)
    comp = compose(dense_map(p2, p3), dense_map(p3, pe))
    assert comp.source is mesh2
    assert comp.target is ell
    pos = comp.mapped_positions()
    _, _, snapped = nearest_surface_point(ell, pos)
    assert np.linalg.norm(pos - snapped, axis=1).max() < 1e-12


def test_compose_rejects_mismatched_chain(sphere_param, ellipsoid_param):
    _, p2 = sphere_param
    _, pe = ellipsoid_param
    m = dense_map(p2, p2)
    with pytest.raises(ValueError):
        compose(m, dense_map(pe, pe))


def test_smoothness_energy_equals_direct_edge_sum(sphere_param):
    # independent route: the self map puts every vertex on itself, so the
    # energy must equal the mesh's own sum of squared edge lengths
    mesh, param = sphere_param
    m = dense_map(param, param)
    e = mesh.edges()
    direct = float(((mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]]) ** 2).sum())
    assert smoothness_energy(m) == pytest.approx(direct, rel=1e-9)


def test_consistent_image_encodes_the_source(sphere_param):
    mesh, param = sphere_param
    m = dense_map(param, param)
    img = consistent_geometry_image(mesh, param, m, 32)
    assert img.data.shape == (32, 32, 3)
    assert reconstruction_error(mesh, img) < 5e-4


def test_consistent_image_checks_endpoints(sphere_param, ellipsoid_param):
    mesh, param = sphere_param
    ell, pe = ellipsoid_param
    m = dense_map(param, param)
    with pytest.raises(ValueError):
        consistent_geometry_image(ell, param, m, 16)
    with pytest.raises(ValueError):
        consistent_geometry_image(mesh, pe, m, 16)


def test_select_map_accepts_and_thresholds(sphere_param, ellipsoid_param):
    mesh, param = sphere_param
    ell, pe = ellipsoid_param
    ok = select_map_and_filter(ell, pe, param, [], 0.05, n=32,
                               rotation=np.eye(3))
    assert ok.accepted
    assert ok.route == "direct"
    assert ok.error == pytest.approx(reconstruction_error(ell, ok.gim))
    # an impossible bound turns the same candidate into a rejection
    rej = select_map_and_filter(ell, pe, param, [], 1e-9, n=32,
                                rotation=np.eye(3))
    assert not rej.accepted
    assert rej.error == pytest.approx(ok.error)


def test_gim_roundtrips_to_a_near_identity_map(sphere_param):
    mesh, param = sphere_param
    m = dense_map(param, param)
    img = consistent_geometry_image(mesh, param, m, 64)
    corr = gim_to_correspondence(param, img, mesh)
    err = np.linalg.norm(corr.mapped_positions() - mesh.vertices, axis=1)
    # fold seams blend distant pixels, so the max sits well above the mean
    assert err.max() < 0.05
    assert err.mean() < 0.01


def test_correspondence_save_load_roundtrip(tmp_path, sphere_param):
    mesh, param = sphere_param
    m = dense_map(param, param)
    path = tmp_path / "corr.json"
    save_correspondence(m, path)
    back = load_correspondence(path, mesh, mesh)
    assert np.array_equal(back.faces, m.faces)
    assert np.allclose(back.barycentric, m.barycentric)


def test_d2_descriptor_is_deterministic_and_rigid_invariant(blob_pair):
    blob, rot, _ = blob_pair
    a = d2_descriptor(blob, samples=1200, seed=5)
    b = d2_descriptor(blob, samples=1200, seed=5)
    assert np.array_equal(a.histogram, b.histogram)
    # same seed draws the same face/barycentric samples, and a rigid motion
    # preserves their pairwise distances bit for bit
    c = d2_descriptor(rot, samples=1200, seed=5)
    assert np.allclose(a.histogram, c.histogram)
    assert d2_descriptor(blob, samples=1200, seed=6).histogram.shape == (64,)


def test_d2_descriptor_guards():
    mesh = icosphere(1)
    with pytest.raises(ValueError):
        d2_descriptor(mesh, samples=500)
    with pytest.raises(ValueError):
        d2_descriptor(mesh, bins=8)
    with pytest.raises(ValueError):
        D2Descriptor(np.array([0.5, 0.2]), 1.0)


def test_similarity_matrix_properties():
    meshes = [icosphere(1),
              superellipsoid(1.0, 1.0, (1.5, 1.0, 1.0), 1),
              superellipsoid(0.4, 0.4, (1.0, 1.0, 1.0), 1)]
    descs = [d2_descriptor(m, samples=1500, seed=0) for m in meshes]
    S = similarity_matrix(descs)
    assert S.shape == (3, 3)
    assert np.allclose(S, S.T)
    assert np.allclose(np.diag(S), 1.0)
    assert np.all(S > 0) and np.all(S <= 1.0)


def test_spectral_cluster_separates_families():
    # 4 rounded + 3 creased shapes; the aspect spread stays narrow so the
    # crease signal dominates the descriptor distance
    meshes = []
    for ax in (0.85, 0.95, 1.0, 1.05):
        meshes.append(superellipsoid(1.0, 1.0, (ax, 1.0, 0.9), 2))
    for ax in (0.85, 0.95, 1.05):
        meshes.append(superellipsoid(0.3, 0.3, (ax, 1.0, 0.9), 2))
    descs = [d2_descriptor(m, samples=1500, seed=0) for m in meshes]
    S = similarity_matrix(descs)
    results = [spectral_cluster(S, 2, seed=s) for s in range(3)]
    first = results[0]
    labels = first.assignments
    assert len(set(labels[:4])) == 1
    assert len(set(labels[4:])) == 1
    assert labels[0] != labels[4]
    assert first.base in range(4)
    # label ids are arbitrary per seed; the induced partition must not be
    def groups(assign):
        return frozenset(frozenset(np.nonzero(assign == c)[0].tolist())
                         for c in set(assign.tolist()))

    assert all(groups(r.assignments) == groups(labels) for r in results[1:])
    assert all(r.base == first.base for r in results[1:])


def test_spectral_cluster_validates_k():
    S = np.eye(3)
    with pytest.raises(ValueError):
        spectral_cluster(S, 0)
    with pytest.raises(ValueError):
        spectral_cluster(S, 4)
