"""Procedural test and dataset shapes: spheres, boxes, tori, superellipsoids."""

from __future__ import annotations

import numpy as np

from .mesh import TriMesh


def tetrahedron():
    v = np.array([
        [1.0, 1.0, 1.0],
        [1.0, -1.0, -1.0],
        [-1.0, 1.0, -1.0],
        [-1.0, -1.0, 1.0],
    ])
    f = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    return TriMesh(v, f)


def icosahedron():
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    v /= np.linalg.norm(v, axis=1)[:, None]
    f = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ])
    return TriMesh(v, f)


def icosphere(subdivisions=3, radius=1.0):
    """Icosahedron subdivided ``subdivisions`` times, vertices on a sphere."""
    mesh = icosahedron()
    v = list(mesh.vertices)
    f = mesh.faces
    for _ in range(subdivisions):
        midpoint = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in midpoint:
                p = v[i] + v[j]
                p = p / np.linalg.norm(p)
                midpoint[key] = len(v)
                v.append(p)
            return midpoint[key]

        new_f = []
        for a, b, c in f:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_f.extend([[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]])
        f = np.array(new_f)
    v = np.array(v)
    v = v / np.linalg.norm(v, axis=1)[:, None] * radius
    return TriMesh(v, f)


def ellipsoid(semi_axes=(1.0, 1.0, 1.0), subdivisions=3):
    sphere = icosphere(subdivisions)
    v = sphere.vertices * np.asarray(semi_axes, dtype=np.float64)
    return TriMesh(v, sphere.faces)


def grid_face(n):
    """Faces of an (n+1) x (n+1) vertex grid, fixed diagonal split."""
    faces = []
    for r in range(n):
        for c in range(n):
            a = r * (n + 1) + c
            b = a + 1
            d = a + (n + 1)
            e = d + 1
            faces.append([a, d, e])
            faces.append([a, e, b])
    return np.array(faces)


def tessellated_cube(n=8, size=1.0):
    """Axis-aligned cube with each face an n x n triangle grid, edges welded."""
    h = size / 2.0
    lin = np.linspace(-h, h, n + 1)
    verts = []
    vert_id = {}

    def vid(p):
        key = (round(p[0], 12), round(p[1], 12), round(p[2], 12))
        if key not in vert_id:
            vert_id[key] = len(verts)
            verts.append(p)
        return vert_id[key]

    faces = []

    def add_face(point_fn):
        ids = np.empty((n + 1, n + 1), dtype=np.int64)
        for i, u in enumerate(lin):
            for j, v in enumerate(lin):
                ids[i, j] = vid(np.array(point_fn(u, v)))
        for i in range(n):
            for j in range(n):
                a, b = ids[i, j], ids[i + 1, j]
                c, d = ids[i + 1, j + 1], ids[i, j + 1]
                faces.append([a, b, c])
                faces.append([a, c, d])

    add_face(lambda u, v: (u, v, +h))       # top (+z), ccw from outside
    add_face(lambda u, v: (v, u, -h))       # bottom (-z)
    add_face(lambda u, v: (v, +h, u))       # +y
    add_face(lambda u, v: (u, -h, v))       # -y
    add_face(lambda u, v: (+h, u, v))       # +x
    add_face(lambda u, v: (-h, v, u))       # -x
    return TriMesh(np.array(verts), np.array(faces))


def torus(major_radius=1.0, minor_radius=0.35, n_major=8, n_minor=8):
    """Torus from an n_major x n_minor periodic quad grid split into triangles."""
    verts = np.empty((n_major * n_minor, 3))
    for i in range(n_major):
        a = 2.0 * np.pi * i / n_major
        for j in range(n_minor):
            b = 2.0 * np.pi * j / n_minor
            r = major_radius + minor_radius * np.cos(b)
            verts[i * n_minor + j] = (r * np.cos(a), r * np.sin(a), minor_radius * np.sin(b))
    faces = []
    for i in range(n_major):
        for j in range(n_minor):
            a = i * n_minor + j
            b = i * n_minor + (j + 1) % n_minor
            c = ((i + 1) % n_major) * n_minor + (j + 1) % n_minor
            d = ((i + 1) % n_major) * n_minor + j
            faces.append([a, b, c])
            faces.append([a, c, d])
    return TriMesh(verts, np.array(faces))


def superellipsoid(eps1=1.0, eps2=1.0, semi_axes=(1.0, 1.0, 1.0), subdivisions=3):
    """Superellipsoid meshed as a radial graph over an icosphere.

    The implicit surface (unit semi-axes) is
    ``((|x|^(2/e2) + |y|^(2/e2))^(e2/e1) + |z|^(2/e1))^(e1/2) = 1``;
    each icosphere direction u is scaled onto it, then stretched by the
    semi-axes. Low exponents give boxy shapes with sharp creases.
    Genus 0 by construction (star-shaped about the origin).
    """
    if eps1 <= 0 or eps2 <= 0:
        raise ValueError("superellipsoid exponents must be positive")
    sphere = icosphere(subdivisions)
    u = sphere.vertices
    ax = np.abs(u[:, 0])
    ay = np.abs(u[:, 1])
    az = np.abs(u[:, 2])
    tiny = 1e-300
    inner = (np.maximum(ax, tiny) ** (2.0 / eps2) + np.maximum(ay, tiny) ** (2.0 / eps2))
    value = inner ** (eps2 / eps1) + np.maximum(az, tiny) ** (2.0 / eps1)
    scale = value ** (-eps1 / 2.0)
    v = u * scale[:, None] * np.asarray(semi_axes, dtype=np.float64)
    return TriMesh(v, sphere.faces)


def capsule_cluster(directions, lengths, radii, subdivisions=3):
    """Union of capsules radiating from the origin, meshed as a radial graph.

    Each capsule is the set of points within ``radius`` of the segment from
    the origin along ``direction`` with the given length. Capsules are
    convex and contain the origin, so their union is star-shaped and the
    radial mesh is genus 0.

    Parameters
    ----------
    directions : (k, 3) array_like of unit vectors
    lengths, radii : length-k sequences
    """
    directions = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    directions = directions / np.linalg.norm(directions, axis=1)[:, None]
    lengths = np.asarray(lengths, dtype=np.float64)
    radii = np.asarray(radii, dtype=np.float64)
    if np.any(radii <= 0) or np.any(lengths < 0):
        raise ValueError("capsule radii must be positive and lengths non-negative")
    sphere = icosphere(subdivisions)
    u = sphere.vertices
    # exit distance of the ray t*u from one capsule: ||t u - clamp(t u.d, 0, L) d|| = r
    t_best = np.zeros(len(u))
    for d, length, r in zip(directions, lengths, radii):
        c = u @ d
        s2 = np.maximum(1.0 - c ** 2, 1e-15)
        t_side = r / np.sqrt(s2)                       # exit through the cylinder wall
        side_ok = (c > 0) & (t_side * c <= length)
        disc = np.maximum(r ** 2 - length ** 2 * s2, 0.0)
        t_tip = length * c + np.sqrt(disc)             # exit through the far cap
        t = np.where(c <= 0, r, np.where(side_ok, t_side, t_tip))
        t_best = np.maximum(t_best, t)
    v = u * t_best[:, None]
    return TriMesh(v, sphere.faces)
