"""Geometry images: octahedral unfolding of a spherical parametrization,
regular resampling of per-vertex fields, and decoding back to meshes.

The sphere is L1-projected onto an octahedron whose upper half maps to the
center diamond of the unit square and whose lower half folds outward into
the corners. The cut edges are fixed by this convention, so one spherical
parametrization always produces one canonical image. Boundary pixels obey
the side-reflection identification ((u,0)~(1-u,0) and rotations thereof),
and all four square corners meet at the south pole.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .mesh import TriMesh


@dataclass
class GeometryImage:
    """Square multi-channel raster sampled over the unfolded sphere."""

    data: np.ndarray
    channel_names: list = field(default_factory=list)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[0] != self.data.shape[1]:
            raise ValueError("data must be N x N x C")
        if not self.channel_names:
            self.channel_names = ["c%d" % i for i in range(self.data.shape[2])]
        if len(self.channel_names) != self.data.shape[2]:
            raise ValueError("one name per channel required")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("geometry image values must be finite")

    @property
    def resolution(self):
        return self.data.shape[0]

    @property
    def channels(self):
        return self.data.shape[2]

    def channel(self, name):
        return self.data[:, :, self.channel_names.index(name)]

    def position_channels(self):
        idx = [self.channel_names.index(n) for n in ("x", "y", "z")]
        return self.data[:, :, idx]


def _sign(x):
    # sign with sign(0) = +1 so folds are deterministic
    return np.where(np.asarray(x) < 0.0, -1.0, 1.0)


def octahedral_unfold(points):
    """Map unit vectors to (u, v) in [0,1]^2 via the octahedral cut.

    Accepts a single 3-vector or an (n, 3) array.
    """
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n1 = np.abs(p).sum(axis=1)
    x, y, z = (p / n1[:, None]).T
    a = np.where(z >= 0.0, x, _sign(x) * (1.0 - np.abs(y)))
    b = np.where(z >= 0.0, y, _sign(y) * (1.0 - np.abs(x)))
    uv = np.stack([(a + 1.0) / 2.0, (b + 1.0) / 2.0], axis=1)
    if np.asarray(points).ndim == 1:
        return uv[0]
    return uv


def octahedral_fold(uv):
    """Inverse of octahedral_unfold: (u, v) to unit sphere points."""
    q = np.atleast_2d(np.asarray(uv, dtype=np.float64))
    a = 2.0 * q[:, 0] - 1.0
    b = 2.0 * q[:, 1] - 1.0
    inner = np.abs(a) + np.abs(b) <= 1.0
    x = np.where(inner, a, _sign(a) * (1.0 - np.abs(b)))
    y = np.where(inner, b, _sign(b) * (1.0 - np.abs(a)))
    z = np.where(inner, 1.0 - np.abs(a) - np.abs(b), -(np.abs(a) + np.abs(b) - 1.0))
    p = np.stack([x, y, z], axis=1)
    p /= np.linalg.norm(p, axis=1)[:, None]
    if np.asarray(uv).ndim == 1:
        return p[0]
    return p


def pixel_centers(n):
    """(u, v) pixel-center grid; row i is v, column j is u."""
    ticks = (np.arange(n) + 0.5) / n
    u, v = np.meshgrid(ticks, ticks, indexing="xy")
    return np.stack([u.reshape(-1), v.reshape(-1)], axis=1)


class PointLocationError(RuntimeError):
    pass


def _containment_pick(pos, faces, cand, q, tol=-1e-12):
    """Among candidate faces (nq, k) pick per query the smallest-index face
    whose spherical triangle contains the query. Returns (face, bary);
    face = -1 where no candidate contains it."""
    tri = pos[faces[cand]]
    qb = q[:, None, :]
    s0 = np.einsum("nkj,nkj->nk", np.cross(tri[:, :, 0], tri[:, :, 1]), np.broadcast_to(qb, tri[:, :, 0].shape))
    s1 = np.einsum("nkj,nkj->nk", np.cross(tri[:, :, 1], tri[:, :, 2]), np.broadcast_to(qb, tri[:, :, 0].shape))
    s2 = np.einsum("nkj,nkj->nk", np.cross(tri[:, :, 2], tri[:, :, 0]), np.broadcast_to(qb, tri[:, :, 0].shape))
    inside = (s0 >= tol) & (s1 >= tol) & (s2 >= tol)
    big = np.iinfo(np.int64).max
    masked = np.where(inside, cand, big)
    pick = np.argmin(masked, axis=1)
    rows = np.arange(len(q))
    face = np.where(inside[rows, pick], cand[rows, pick], -1)
    w = np.stack([s1[rows, pick], s2[rows, pick], s0[rows, pick]], axis=1)
    total = w.sum(axis=1)
    safe = total > 0
    w = np.where(safe[:, None], w / np.where(safe, total, 1.0)[:, None], 1.0 / 3.0)
    # containment passed within tol, so a trace-negative weight is roundoff:
    # clamp into the simplex rather than leak it to every consumer
    w = np.clip(w, 0.0, 1.0)
    w /= w.sum(axis=1)[:, None]
    return face, w


def locate_on_sphere(param, queries, k_candidates=16, max_ring=8):
    """Find for each unit-vector query the containing spherical triangle.

    A batched pass tests the faces with nearest centroids; leftovers fall
    back to an adjacency walk widening ring by ring from the nearest
    vertex. Ties go to the smallest face index. Returns (face indices,
    barycentric weights).
    """
    mesh = param.source
    pos = param.positions
    faces = mesh.faces
    q = np.atleast_2d(queries)
    nq = len(q)

    centroids = pos[faces].mean(axis=1)
    centroids /= np.linalg.norm(centroids, axis=1)[:, None]
    k = min(k_candidates, len(faces))
    ftree = cKDTree(centroids)
    _, cand = ftree.query(q, k=k)
    if k == 1:
        cand = cand[:, None]
    face_out, bary_out = _containment_pick(pos, faces, cand, q)

    unresolved = np.nonzero(face_out < 0)[0]
    if len(unresolved):
        vtree = cKDTree(pos)
        _, seed_vertex = vtree.query(q[unresolved])
        vertex_faces = mesh.vertex_face_lists()
        adjacency = mesh.vertex_neighbors()
        for qi, v0 in zip(unresolved, seed_vertex):
            ring = set([int(v0)])
            seen_f = set()
            found = False
            for _ in range(max_ring):
                fresh = []
                for v in ring:
                    for f in vertex_faces[v]:
                        if f not in seen_f:
                            seen_f.add(f)
                            fresh.append(f)
                if fresh:
                    carr = np.asarray(fresh, dtype=np.int64)[None, :]
                    fsel, w = _containment_pick(pos, faces, carr, q[qi][None, :])
                    if fsel[0] >= 0:
                        face_out[qi] = fsel[0]
                        bary_out[qi] = w[0]
                        found = True
                        break
                grown = set()
                for v in ring:
                    grown.update(adjacency[v])
                ring = grown
            if not found:
                # bijective parametrizations always resolve by ring growth;
                # this signals flipped or degenerate spherical triangles
                raise PointLocationError(
                    "query %d not inside any spherical triangle" % qi
                )
    return face_out, bary_out


def sample_geometry_image(mesh, param, n, channels):
    """Resample per-vertex fields over the n x n unfolded pixel grid.

    ``channels`` is an ordered dict-like of name -> per-vertex array
    (scalars or rows of any width); vector fields expand into one channel
    per component with suffixes x, y, z for width 3.
    """
    if n < 4:
        raise ValueError("resolution must be >= 4")
    names = []
    columns = []
    for name, values in channels.items():
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.shape[0] != mesh.n_vertices:
            raise ValueError("channel %r must have one row per vertex" % name)
        if arr.shape[1] == 3 and name == "position":
            sub = ["x", "y", "z"]
        elif arr.shape[1] == 1:
            sub = [name]
        else:
            sub = ["%s%d" % (name, k) for k in range(arr.shape[1])]
        names.extend(sub)
        columns.append(arr)
    values = np.concatenate(columns, axis=1)

    queries = octahedral_fold(pixel_centers(n))
    face_idx, bary = locate_on_sphere(param, queries)
    tri = mesh.faces[face_idx]
    sampled = np.einsum("nk,nkc->nc", bary, values[tri])
    data = sampled.reshape(n, n, -1)
    return GeometryImage(data, names)


def _boundary_weld_classes(n):
    """Union-find classes of the n*n pixel grid under the octahedral
    boundary identification. Pixel id = row * n + col."""
    parent = np.arange(n * n)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i, j):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[rj] = ri

    for j in range(n):
        union(0 * n + j, 0 * n + (n - 1 - j))          # v = 0 row
        union((n - 1) * n + j, (n - 1) * n + (n - 1 - j))  # v = 1 row
    for i in range(n):
        union(i * n + 0, (n - 1 - i) * n + 0)          # u = 0 column
        union(i * n + (n - 1), (n - 1 - i) * n + (n - 1))  # u = 1 column
    roots = np.array([find(i) for i in range(n * n)])
    _, ids = np.unique(roots, return_inverse=True)
    return ids


def decode_geometry_image(gim):
    """Rebuild a closed genus-0 mesh from position channels.

    One vertex per weld class of the pixel grid (welded positions are
    averaged), two triangles per grid cell with a fixed diagonal split,
    degenerate triangles dropped.
    """
    for required in ("x", "y", "z"):
        if required not in gim.channel_names:
            raise ValueError("position channel %r missing" % required)
    n = gim.resolution
    pixels = gim.position_channels().reshape(-1, 3)
    weld = _boundary_weld_classes(n)
    n_out = weld.max() + 1
    sums = np.zeros((n_out, 3))
    counts = np.zeros(n_out)
    np.add.at(sums, weld, pixels)
    np.add.at(counts, weld, 1.0)
    verts = sums / counts[:, None]

    cells = []
    for i in range(n - 1):
        for j in range(n - 1):
            p00 = weld[i * n + j]
            p10 = weld[(i + 1) * n + j]
            p11 = weld[(i + 1) * n + j + 1]
            p01 = weld[i * n + j + 1]
            cells.append((p00, p10, p11))
            cells.append((p00, p11, p01))
    tris = np.array(
        [t for t in cells if t[0] != t[1] and t[1] != t[2] and t[0] != t[2]],
        dtype=np.int64,
    )
    mesh = TriMesh(verts, tris)
    vol = np.einsum(
        "ij,ij->i", verts[tris[:, 0]], np.cross(verts[tris[:, 1]], verts[tris[:, 2]])
    ).sum()
    if vol < 0.0:
        mesh = TriMesh(verts, tris[:, ::-1])
    return mesh


def point_triangle_distances(points, mesh, k_candidates=24):
    """Exact distance from each point to the mesh surface.

    Candidate triangles come from the nearest face centroids; the exact
    point-triangle distance is evaluated on the candidates and minimized.
    """
    v = mesh.vertices
    f = mesh.faces
    centroids = v[f].mean(axis=1)
    k = min(k_candidates, len(f))
    tree = cKDTree(centroids)
    _, cand = tree.query(points, k=k)
    if k == 1:
        cand = cand[:, None]
    a = v[f[cand, 0]]
    b = v[f[cand, 1]]
    c = v[f[cand, 2]]
    d = _point_triangle_distance_batch(points[:, None, :], a, b, c)
    return d.min(axis=1)


def _point_triangle_distance_batch(p, a, b, c):
    # closest point on triangle, vectorized over leading dims
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("...i,...i->...", ab, ap)
    d2 = np.einsum("...i,...i->...", ac, ap)
    bp = p - b
    d3 = np.einsum("...i,...i->...", ab, bp)
    d4 = np.einsum("...i,...i->...", ac, bp)
    cp = p - c
    d5 = np.einsum("...i,...i->...", ab, cp)
    d6 = np.einsum("...i,...i->...", ac, cp)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    denom = va + vb + vc
    w1 = np.where(np.abs(denom) > 0, vb / np.where(denom == 0, 1.0, denom), 0.0)
    w2 = np.where(np.abs(denom) > 0, vc / np.where(denom == 0, 1.0, denom), 0.0)
    closest = a + w1[..., None] * ab + w2[..., None] * ac

    # vertex regions
    cond_a = (d1 <= 0) & (d2 <= 0)
    cond_b = (d3 >= 0) & (d4 <= d3)
    cond_c = (d6 >= 0) & (d5 <= d6)
    # edge regions
    v_ab = d1 * d4 - d3 * d2
    cond_ab = (~cond_a) & (~cond_b) & (v_ab <= 0) & (d1 >= 0) & (d3 <= 0)
    t_ab = np.where(d1 - d3 != 0, d1 / np.where(d1 - d3 == 0, 1.0, d1 - d3), 0.0)
    v_ac = d5 * d2 - d1 * d6
    cond_ac = (~cond_a) & (~cond_c) & (v_ac <= 0) & (d2 >= 0) & (d6 <= 0)
    t_ac = np.where(d2 - d6 != 0, d2 / np.where(d2 - d6 == 0, 1.0, d2 - d6), 0.0)
    v_bc = d3 * d6 - d5 * d4
    d43 = d4 - d3
    d56 = d5 - d6
    cond_bc = (~cond_b) & (~cond_c) & (v_bc <= 0) & (d43 >= 0) & (d56 >= 0)
    denom_bc = d43 + d56
    t_bc = np.where(denom_bc != 0, d43 / np.where(denom_bc == 0, 1.0, denom_bc), 0.0)

    closest = np.where(cond_bc[..., None], b + t_bc[..., None] * (c - b), closest)
    closest = np.where(cond_ac[..., None], a + t_ac[..., None] * ac, closest)
    closest = np.where(cond_ab[..., None], a + t_ab[..., None] * ab, closest)
    closest = np.where(cond_c[..., None], c, closest)
    closest = np.where(cond_b[..., None], b, closest)
    closest = np.where(cond_a[..., None], a, closest)
    return np.linalg.norm(p - closest, axis=-1)


def reconstruction_error(mesh, gim):
    """Mean distance from decoded geometry-image points to the mesh surface."""
    decoded = decode_geometry_image(gim)
    return float(point_triangle_distances(decoded.vertices, mesh).mean())


def chamfer_distance(points_a, points_b):
    """Symmetric mean nearest-neighbor distance between two point sets."""
    points_a = np.asarray(points_a, dtype=np.float64)
    points_b = np.asarray(points_b, dtype=np.float64)
    da, _ = cKDTree(points_b).query(points_a)
    db, _ = cKDTree(points_a).query(points_b)
    return 0.5 * (float(da.mean()) + float(db.mean()))


def save_gim(gim, path):
    """JSON header line, then raw little-endian float32 in (row, col,
    channel) order."""
    header = {
        "resolution": gim.resolution,
        "channels": gim.channels,
        "channel_names": list(gim.channel_names),
        "dtype": "f32-le",
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("ascii"))
        fh.write(b"\n")
        fh.write(gim.data.astype("<f4").tobytes())


def load_gim(path):
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        raw = fh.read()
    n = header["resolution"]
    c = header["channels"]
    if header.get("dtype") != "f32-le":
        raise ValueError("unsupported dtype %r" % header.get("dtype"))
    data = np.frombuffer(raw, dtype="<f4", count=n * n * c).astype(np.float64)
    return GeometryImage(data.reshape(n, n, c), header["channel_names"])
