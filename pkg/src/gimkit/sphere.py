"""Area-preserving spherical parametrization of genus-0 meshes.

Maps every vertex of a closed genus-0 mesh to the unit sphere so that
spherical triangle areas track the original face areas (an area flow with
an explicit bijectivity safeguard), and measures how far a given map is
from that goal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import MeshError, euler_genus


class ParametrizationError(RuntimeError):
    pass


@dataclass
class SphericalParam:
    """Unit-sphere vertex positions for a parametrized mesh.

    history holds the total area distortion after each accepted solver
    iteration (starting value included) when the param came out of
    parametrize_authalic; hand-built params leave it None.
    """

    positions: np.ndarray
    source: object
    history: list = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.shape != (self.source.n_vertices, 3):
            raise ValueError("one unit vector per source vertex required")
        norms = np.linalg.norm(self.positions, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError("positions must lie on the unit sphere")


def spherical_face_areas(positions, faces):
    """Signed solid angle of each face's spherical triangle.

    Positive for counterclockwise (outward) triangles; the values of a
    bijective parametrization sum to 4*pi.
    """
    u1 = positions[faces[:, 0]]
    u2 = positions[faces[:, 1]]
    u3 = positions[faces[:, 2]]
    det = np.einsum("ij,ij->i", u1, np.cross(u2, u3))
    denom = (
        1.0
        + np.einsum("ij,ij->i", u1, u2)
        + np.einsum("ij,ij->i", u2, u3)
        + np.einsum("ij,ij->i", u3, u1)
    )
    return 2.0 * np.arctan2(det, denom)


def count_flipped(positions, faces):
    return int(np.sum(spherical_face_areas(positions, faces) <= 0.0))


def area_distortion(mesh, param):
    """Total normalized-area mismatch between mesh faces and their spherical
    images: sum_f |a_f - s_f| with both measures normalized to 1.

    0 for a perfectly authalic map, bounded above by 2.
    """
    if param.positions.shape[0] != mesh.n_vertices:
        raise ValueError("parametrization does not match mesh")
    flat = mesh.face_areas()
    sph = spherical_face_areas(param.positions, mesh.faces)
    return float(np.abs(flat / flat.sum() - sph / (4.0 * np.pi)).sum())


def _centroid_projection(mesh):
    p = mesh.vertices - mesh.centroid()
    n = np.linalg.norm(p, axis=1)
    if np.any(n == 0.0):
        raise ParametrizationError("vertex coincides with the mesh centroid")
    return p / n[:, None]


def _neighbor_centroids(positions, adjacency):
    indptr, indices = adjacency
    sums = np.add.reduceat(positions[indices], indptr[:-1], axis=0)
    counts = np.diff(indptr)
    return sums / counts[:, None]


def _vertex_adjacency(mesh):
    e = mesh.edges()
    both = np.concatenate([e, e[:, ::-1]])
    order = np.lexsort((both[:, 1], both[:, 0]))
    both = both[order]
    indptr = np.searchsorted(both[:, 0], np.arange(mesh.n_vertices + 1))
    return indptr, both[:, 1]


def _ring_areas_from_faces(face_areas, faces, n_vertices):
    ring = np.zeros(n_vertices)
    np.add.at(ring, faces.reshape(-1), np.repeat(face_areas, 3))
    return ring


def _repair_flips(positions, faces, adjacency, max_rounds=500):
    """Uniform tangential smoothing until every spherical triangle is upright
    and clear of the degenerate-area floor (tiny triangles block the flow's
    line search just like inverted ones)."""
    floor = 0.02 * 4.0 * np.pi / len(faces)
    pos = positions.copy()
    for _ in range(max_rounds):
        if spherical_face_areas(pos, faces).min() >= floor:
            return pos
        cen = _neighbor_centroids(pos, adjacency)
        d = cen - pos
        d -= np.einsum("ij,ij->i", d, pos)[:, None] * pos
        pos = pos + 0.5 * d
        pos /= np.linalg.norm(pos, axis=1)[:, None]
    if count_flipped(pos, faces) == 0:
        return pos
    raise ParametrizationError("could not remove inverted spherical triangles")


def _distortion_gradient(pos, faces, flat_n):
    """Ambient gradient of sum_f (s_f - a_f)^2 over normalized areas."""
    u1 = pos[faces[:, 0]]
    u2 = pos[faces[:, 1]]
    u3 = pos[faces[:, 2]]
    c23 = np.cross(u2, u3)
    c31 = np.cross(u3, u1)
    c12 = np.cross(u1, u2)
    det = np.einsum("ij,ij->i", u1, c23)
    den = (
        1.0
        + np.einsum("ij,ij->i", u1, u2)
        + np.einsum("ij,ij->i", u2, u3)
        + np.einsum("ij,ij->i", u3, u1)
    )
    areas = 2.0 * np.arctan2(det, den)
    resid = areas / (4.0 * np.pi) - flat_n
    scale = (2.0 * resid / (4.0 * np.pi) * 2.0 / (det * det + den * den))[:, None]
    grad = np.zeros_like(pos)
    np.add.at(grad, faces[:, 0], scale * (den[:, None] * c23 - det[:, None] * (u2 + u3)))
    np.add.at(grad, faces[:, 1], scale * (den[:, None] * c31 - det[:, None] * (u3 + u1)))
    np.add.at(grad, faces[:, 2], scale * (den[:, None] * c12 - det[:, None] * (u1 + u2)))
    return grad


def parametrize_authalic(mesh, max_iters=500, tol=1e-7):
    """Compute a bijective, approximately area-preserving sphere map.

    Starts from the normalized centroid projection and iterates tangential
    Laplacian steps scaled per vertex by the ratio of original to current
    ring area, reprojecting to the sphere after each step. A step that
    inverts any spherical triangle or increases the total area distortion
    is rejected and retried at half the step size, so the distortion is
    non-increasing over accepted iterations. Stops when an accepted
    iteration improves the distortion by less than ``tol`` (relative) or
    after ``max_iters`` accepted iterations.
    """
    mesh.validate()
    chi, genus = euler_genus(mesh)
    if genus != 0:
        raise MeshError("parametrization requires genus 0, got genus %d" % genus)

    adjacency = _vertex_adjacency(mesh)
    faces = mesh.faces
    flat = mesh.face_areas()
    target_ring = _ring_areas_from_faces(flat / flat.sum(), faces, mesh.n_vertices)

    pos = _centroid_projection(mesh)
    floor = 0.02 * 4.0 * np.pi / len(faces)
    if spherical_face_areas(pos, faces).min() < floor:
        pos = _repair_flips(pos, faces, adjacency)

    flat_n = flat / flat.sum()

    def _search(pos, d, best, step):
        # backtracking line search: flip-free and distortion-non-increasing
        trial = step
        for _ in range(40):
            cand = pos + trial * d
            cand /= np.linalg.norm(cand, axis=1)[:, None]
            areas = spherical_face_areas(cand, faces)
            if np.all(areas > 0.0):
                dist = float(np.abs(flat_n - areas / (4.0 * np.pi)).sum())
                if dist < best - 1e-15:
                    return cand, dist, trial
            trial *= 0.5
        return None, best, step

    best = area_distortion(mesh, SphericalParam(pos, mesh))
    history = [best]
    step = 0.5
    stall = 0
    for _ in range(max_iters):
        sph = spherical_face_areas(pos, faces)
        ring = _ring_areas_from_faces(sph / (4.0 * np.pi), faces, mesh.n_vertices)
        weight = target_ring / np.maximum(ring, 1e-12)
        weight = np.clip(weight / weight.mean(), 0.0, 10.0)
        cen = _neighbor_centroids(pos, adjacency)
        d = cen - pos
        d -= np.einsum("ij,ij->i", d, pos)[:, None] * pos
        d *= weight[:, None]

        cand, dist, used = _search(pos, d, best, step)
        if cand is None:
            # ring-ratio step stalled, fall back to the area misfit gradient
            g = -_distortion_gradient(pos, faces, flat_n)
            g -= np.einsum("ij,ij->i", g, pos)[:, None] * pos
            gmax = np.abs(g).max()
            if gmax > 0:
                cand, dist, used = _search(pos, g / gmax, best, 0.25)
        if cand is None:
            break
        improvement = best - dist
        pos, best = cand, dist
        history.append(best)
        step = min(used * 1.3, 1.0)
        if improvement < tol * max(best, 1e-30):
            stall += 1
            if stall >= 20:
                break
        else:
            stall = 0
    return SphericalParam(pos, mesh, history)
