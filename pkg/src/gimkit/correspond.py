"""Cross-shape correspondence for categories of genus-0 shapes.

Shapes are described by D2 distance histograms, grouped by spectral
clustering of a similarity matrix, and mapped densely onto a base exemplar
by aligning their spherical parametrizations with a rotation search. The
base shape's pixel grid then re-encodes every class member, so pixel (i,j)
means the same surface region on all of them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from . import shapes
from .gim import (
    GeometryImage,
    _point_triangle_distance_batch,
    locate_on_sphere,
    pixel_centers,
    octahedral_fold,
    octahedral_unfold,
    reconstruction_error,
)
from .mesh import TriMesh


@dataclass
class D2Descriptor:
    histogram: np.ndarray
    normalization: float

    def __post_init__(self):
        self.histogram = np.asarray(self.histogram, dtype=np.float64)
        if np.any(self.histogram < 0) or abs(self.histogram.sum() - 1.0) > 1e-9:
            raise ValueError("histogram must be a distribution")


def surface_samples(mesh, n, rng):
    """Area-weighted uniform random points on the surface."""
    areas = mesh.face_areas()
    total = areas.sum()
    if total <= 0:
        raise ValueError("mesh has zero surface area")
    f = rng.choice(mesh.n_faces, size=n, p=areas / total)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    w0 = 1.0 - r1
    w1 = r1 * (1.0 - r2)
    w2 = r1 * r2
    v = mesh.vertices
    tri = mesh.faces[f]
    return (
        v[tri[:, 0]] * w0[:, None]
        + v[tri[:, 1]] * w1[:, None]
        + v[tri[:, 2]] * w2[:, None]
    )


def d2_descriptor(mesh, samples=2000, bins=64, seed=0):
    """Histogram of pairwise sample distances, scale-removed by their mean.

    Distances are divided by their mean and binned over [0, 3]; values
    beyond 3 land in the last bin. Deterministic for a fixed seed, and
    rigid-motion invariant because only distances enter.
    """
    if samples < 1000:
        raise ValueError("need at least 1000 samples")
    if bins < 16:
        raise ValueError("need at least 16 bins")
    rng = np.random.default_rng(seed)
    pts = surface_samples(mesh, samples, rng)
    iu = np.triu_indices(samples, k=1)
    d = np.linalg.norm(pts[iu[0]] - pts[iu[1]], axis=1)
    mean = d.mean()
    if mean <= 0:
        raise ValueError("mesh has zero surface area")
    dn = np.minimum(d / mean, 3.0 * (1.0 - 1e-12))
    hist, _ = np.histogram(dn, bins=bins, range=(0.0, 3.0))
    return D2Descriptor(hist / hist.sum(), float(mean))


def similarity_matrix(descriptors):
    """S[i][j] = exp(-L1(i,j)/sigma), sigma = median pairwise L1 distance."""
    if len(descriptors) < 2:
        raise ValueError("need at least 2 descriptors")
    H = np.stack([d.histogram for d in descriptors])
    dist = cdist(H, H, metric="cityblock")
    iu = np.triu_indices(len(descriptors), k=1)
    sigma = max(float(np.median(dist[iu])), 1e-12)
    return np.exp(-dist / sigma)


@dataclass
class ClusterResult:
    assignments: np.ndarray
    exemplars: list
    base: int
    auxiliaries: list


def _kmeans(points, k, seed, restarts=50, iters=100):
    rng = np.random.default_rng(seed)
    n = len(points)
    best_inertia = np.inf
    best_labels = None
    for _ in range(restarts):
        # k-means++ seeding
        centers = [points[rng.integers(n)]]
        for _ in range(k - 1):
            d2 = np.min(
                cdist(points, np.stack(centers), metric="sqeuclidean"), axis=1
            )
            total = d2.sum()
            if total <= 0:
                centers.append(points[rng.integers(n)])
                continue
            centers.append(points[rng.choice(n, p=d2 / total)])
        centers = np.stack(centers)
        for _ in range(iters):
            labels = np.argmin(cdist(points, centers, metric="sqeuclidean"), axis=1)
            new_centers = centers.copy()
            for c in range(k):
                members = points[labels == c]
                if len(members):
                    new_centers[c] = members.mean(axis=0)
            if np.allclose(new_centers, centers):
                break
            centers = new_centers
        inertia = float(
            np.sum((points - centers[labels]) ** 2)
        )
        if inertia < best_inertia - 1e-12:
            best_inertia = inertia
            best_labels = labels
    return best_labels


def spectral_cluster(S, k, seed=0):
    """Cluster shapes from a similarity matrix.

    Embeds with the k smallest eigenvectors of the normalized Laplacian
    (rows normalized), clusters them with seeded k-means (50 restarts),
    and picks per-cluster exemplars nearest the cluster mean. The base is
    the exemplar of the most-populated cluster; size ties go to the lowest
    exemplar index.
    """
    S = np.asarray(S, dtype=np.float64)
    n = len(S)
    if not 1 <= k <= n:
        raise ValueError("k must be in [1, shape count]")
    deg = S.sum(axis=1)
    dm12 = 1.0 / np.sqrt(np.maximum(deg, 1e-30))
    lap = np.eye(n) - dm12[:, None] * S * dm12[None, :]
    try:
        vals, vecs = np.linalg.eigh(lap)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError("spectral embedding failed") from exc
    emb = vecs[:, :k]
    norms = np.linalg.norm(emb, axis=1)
    emb = emb / np.maximum(norms, 1e-30)[:, None]

    labels = _kmeans(emb, k, seed)
    exemplars = []
    for c in range(k):
        members = np.nonzero(labels == c)[0]
        if len(members) == 0:
            exemplars.append(-1)
            continue
        mean = emb[members].mean(axis=0)
        d = np.linalg.norm(emb[members] - mean, axis=1)
        exemplars.append(int(members[np.argmin(d)]))

    counts = np.bincount(labels, minlength=k)
    max_count = counts.max()
    tied = [c for c in range(k) if counts[c] == max_count]
    base_cluster = min(tied, key=lambda c: exemplars[c])
    base = exemplars[base_cluster]
    auxiliaries = [e for c, e in enumerate(exemplars) if c != base_cluster and e >= 0]
    return ClusterResult(labels, exemplars, base, auxiliaries)


@dataclass
class DenseCorrespondence:
    """Per source-vertex location on the target surface."""

    faces: np.ndarray
    barycentric: np.ndarray
    source: object
    target: object
    rotation: np.ndarray = None
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        self.faces = np.asarray(self.faces, dtype=np.int64)
        self.barycentric = np.asarray(self.barycentric, dtype=np.float64)
        if len(self.faces) != self.source.n_vertices:
            raise ValueError("one entry per source vertex required")
        if np.any(self.faces < 0) or np.any(self.faces >= self.target.n_faces):
            raise ValueError("target face index out of range")
        if np.any(self.barycentric < -1e-12) or np.any(
            np.abs(self.barycentric.sum(axis=1) - 1.0) > 1e-9
        ):
            raise ValueError("barycentric weights must be a convex combination")

    def mapped_positions(self):
        tri = self.target.faces[self.faces]
        v = self.target.vertices
        return np.einsum("nk,nkc->nc", self.barycentric, v[tri])


def _icosa_edge_axes():
    ico = shapes.icosahedron()
    mids = ico.vertices[ico.edges()].mean(axis=1)
    return mids / np.linalg.norm(mids, axis=1)[:, None]


def _align_z_to(d):
    z = np.array([0.0, 0.0, 1.0])
    v = np.cross(z, d)
    s = np.linalg.norm(v)
    c = float(z @ d)
    if s < 1e-12:
        return np.eye(3) if c > 0 else np.diag([1.0, -1.0, -1.0])
    vx = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + vx + vx @ vx * ((1 - c) / (s * s))


def _axis_rotation(axis, angle):
    axis = axis / np.linalg.norm(axis)
    x, y, z = axis
    c, s = np.cos(angle), np.sin(angle)
    C = 1 - c
    return np.array(
        [
            [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
            [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
            [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
        ]
    )


def _candidate_rotations():
    rots = [np.eye(3)]
    for d in _icosa_edge_axes():
        align = _align_z_to(d)
        for a in range(8):
            rots.append(_axis_rotation(d, a * np.pi / 4.0) @ align)
    return rots


def _surface_at(param, points):
    faces, bary = locate_on_sphere(param, points)
    tri = param.source.faces[faces]
    v = param.source.vertices
    return np.einsum("nk,nkc->nc", bary, v[tri])


def _aligned_residual(tgt, src):
    """Least-squares residual of rigidly aligning tgt onto src (rotation
    plus translation, Kabsch)."""
    tc = tgt - tgt.mean(axis=0)
    sc = src - src.mean(axis=0)
    H = tc.T @ sc
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    Q = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return float(((tc @ Q.T - sc) ** 2).sum())


def _spiral_points(n):
    """Golden-spiral sphere covering; deliberately unaligned with the
    icosahedral meshes so sampled costs do not inherit their symmetry."""
    i = np.arange(n) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / n)
    theta = np.pi * (1.0 + np.sqrt(5.0)) * i
    return np.stack(
        [np.sin(phi) * np.cos(theta), np.sin(phi) * np.sin(theta), np.cos(phi)],
        axis=1,
    )


def dense_map(source_param, target_param, n_probes=200, rotation=None):
    """Map every source vertex to a (face, barycentric) point on the target.

    The two spherical parametrizations are aligned by the rotation R of the
    sphere domain that minimizes the rigidly-aligned squared distance
    between the surfaces sampled at matched sphere points (coarse candidate
    grid, then local shrinking-step refinement). The rigid alignment inside
    the cost makes the search insensitive to the shapes' ambient pose, so a
    rotated copy maps feature to feature; near-ties break toward the
    identity so rotationally ambiguous sources keep the pose anchor. Each
    source vertex's rotated sphere position is then located on the target's
    spherical triangulation.

    Passing ``rotation`` (a 3x3 matrix) skips the search and pins the
    sphere-domain alignment — the right call for corpora whose shapes
    share one canonical frame, where the search's best rigid fit may
    legitimately swap axes of unequally proportioned shapes and break
    cross-shape pixel consistency.
    """
    source = source_param.source
    target = target_param.source
    if rotation is not None:
        best_r = np.asarray(rotation, dtype=np.float64)
        if best_r.shape != (3, 3) or not np.allclose(
                best_r @ best_r.T, np.eye(3), atol=1e-9):
            raise ValueError("rotation must be a 3x3 orthonormal matrix")
        rotated = source_param.positions @ best_r.T
        faces, bary = locate_on_sphere(target_param, rotated)
        return DenseCorrespondence(faces, bary, source, target, best_r, [])
    probes = _spiral_points(n_probes)
    src_vals = _surface_at(source_param, probes)

    rotations = _candidate_rotations()
    stacked = np.concatenate([probes @ R.T for R in rotations])
    tgt_vals = _surface_at(target_param, stacked).reshape(len(rotations), len(probes), 3)
    costs = np.array([_aligned_residual(tv, src_vals) for tv in tgt_vals])

    warnings = []
    cmin = costs.min()
    spread = costs.max() - cmin
    # proportional band with an absolute floor: when the best cost is
    # fp-zero (self maps, exact symmetries) a bare 5% band collapses and
    # roundoff dust would pick among exact ties instead of the identity
    band = 0.05 * cmin + 1e-9 * float((src_vals ** 2).sum())
    if spread <= 1e-9 * (1.0 + abs(costs.max())):
        best_r = np.eye(3)
        warnings.append("degenerate rotation search, using identity")
    elif spread <= band:
        # the whole grid is within 5% of the best cost: the residual is
        # shape mismatch, not rotation signal, and refining would only fit
        # probe-sampling noise. Anchor the gauge at the identity.
        best_r = np.eye(3)
        warnings.append("flat rotation landscape, anchoring at identity")
    else:
        # near-ties (within the same 5% band) still break toward identity
        # so partially ambiguous sources keep the ambient pose anchor
        near = np.nonzero(costs <= cmin + band)[0]
        ident_dist = [np.linalg.norm(rotations[i] - np.eye(3)) for i in near]
        best_i = int(near[int(np.argmin(ident_dist))])
        best_r = rotations[best_i]
        best_cost = costs[best_i]
        step = 0.2
        axes = np.eye(3)
        while step > 1e-4:
            improved = False
            for axis in axes:
                for sgn in (1.0, -1.0):
                    cand_r = _axis_rotation(axis, sgn * step) @ best_r
                    vals = _surface_at(target_param, probes @ cand_r.T)
                    cost = _aligned_residual(vals, src_vals)
                    if cost < best_cost - 1e-15:
                        best_cost = cost
                        best_r = cand_r
                        improved = True
            if not improved:
                step *= 0.5

    rotated = source_param.positions @ best_r.T
    faces, bary = locate_on_sphere(target_param, rotated)
    return DenseCorrespondence(faces, bary, source, target, best_r, warnings)


def nearest_surface_point(mesh, points, k_candidates=24):
    """Project points onto the mesh: (face, barycentric, position) of the
    closest surface point each. Distance ties go to the smallest face index."""
    v = mesh.vertices
    f = mesh.faces
    centroids = v[f].mean(axis=1)
    k = min(k_candidates, len(f))
    tree = cKDTree(centroids)
    _, cand = tree.query(points, k=k)
    if k == 1:
        cand = cand[:, None]
    a, b, c = v[f[cand, 0]], v[f[cand, 1]], v[f[cand, 2]]
    d = _point_triangle_distance_batch(points[:, None, :], a, b, c)
    near_min = d <= d.min(axis=1)[:, None] + 1e-12
    masked = np.where(near_min, cand, np.iinfo(np.int64).max)
    pick = np.argmin(masked, axis=1)
    rows = np.arange(len(points))
    faces = cand[rows, pick]

    tri = f[faces]
    e0 = v[tri[:, 1]] - v[tri[:, 0]]
    e1 = v[tri[:, 2]] - v[tri[:, 0]]
    w = points - v[tri[:, 0]]
    d00 = np.einsum("ij,ij->i", e0, e0)
    d01 = np.einsum("ij,ij->i", e0, e1)
    d11 = np.einsum("ij,ij->i", e1, e1)
    d20 = np.einsum("ij,ij->i", w, e0)
    d21 = np.einsum("ij,ij->i", w, e1)
    denom = np.maximum(d00 * d11 - d01 * d01, 1e-30)
    w1 = (d11 * d20 - d01 * d21) / denom
    w2 = (d00 * d21 - d01 * d20) / denom
    w1 = np.clip(w1, 0.0, 1.0)
    w2 = np.clip(w2, 0.0, 1.0)
    over = w1 + w2 > 1.0
    scale = np.where(over, w1 + w2, 1.0)
    w1, w2 = w1 / scale, w2 / scale
    bary = np.stack([1.0 - w1 - w2, w1, w2], axis=1)
    bary = np.clip(bary, 0.0, 1.0)
    bary /= bary.sum(axis=1)[:, None]
    pos = np.einsum("nk,nkc->nc", bary, v[tri])
    return faces, bary, pos


def compose(map_ma, map_ab):
    """Chain two maps: push each source vertex's point on A through A's
    vertex images on B, then snap to B's surface."""
    if map_ma.target is not map_ab.source:
        raise ValueError("intermediate meshes do not match")
    a_images = map_ab.mapped_positions()
    tri = map_ma.target.faces[map_ma.faces]
    blended = np.einsum("nk,nkc->nc", map_ma.barycentric, a_images[tri])
    faces, bary, _ = nearest_surface_point(map_ab.target, blended)
    return DenseCorrespondence(
        faces,
        bary,
        map_ma.source,
        map_ab.target,
        warnings=list(map_ma.warnings) + list(map_ab.warnings),
    )


def consistent_geometry_image(m_mesh, base_param, base_to_m, n, extra_channels=None):
    """Encode mesh M on the base shape's pixel grid.

    Each pixel of the base's unfolded grid is carried through the dense map
    base->M and snapped to M's surface, so the image is M's geometry in the
    base's canonical parametrization. ``extra_channels`` maps names to
    per-M-vertex scalars interpolated the same way.
    """
    base = base_param.source
    if base_to_m.source is not base:
        raise ValueError("map must start at the base mesh")
    if base_to_m.target is not m_mesh:
        raise ValueError("map must end at the encoded mesh")
    queries = octahedral_fold(pixel_centers(n))
    faces, bary = locate_on_sphere(base_param, queries)
    tri = base.faces[faces]

    m_images = base_to_m.mapped_positions()
    blended = np.einsum("nk,nkc->nc", bary, m_images[tri])
    snap_faces, snap_bary, pos = nearest_surface_point(m_mesh, blended)

    names = ["x", "y", "z"]
    cols = [pos]
    if extra_channels:
        m_vert_vals = []
        for name, values in extra_channels.items():
            values = np.asarray(values, dtype=np.float64)
            if values.shape != (m_mesh.n_vertices,):
                raise ValueError("extra channel %r must be scalar per M vertex" % name)
            names.append(name)
            m_vert_vals.append(values)
        stacked = np.stack(m_vert_vals, axis=1)
        snap_tri = m_mesh.faces[snap_faces]
        cols.append(np.einsum("nk,nkc->nc", snap_bary, stacked[snap_tri]))
    data = np.concatenate(cols, axis=1).reshape(n, n, -1)
    return GeometryImage(data, names)


@dataclass
class MapSelection:
    accepted: bool
    gim: object
    error: float
    route: str


def select_map_and_filter(m_mesh, m_param, base_param, aux_params, threshold,
                          n=64, extra_channels=None, rotation=None):
    """Pick the best of the direct and auxiliary-composed base->M maps.

    Candidates are the direct map and, per auxiliary A, base->A composed
    with A->M. The consistent geometry image with the lowest reconstruction
    error wins; models whose best error exceeds the threshold are rejected
    (a value, not an error). extra_channels ride along on the winning
    image and play no part in the decision; rotation pins the sphere
    alignment of every hop (see dense_map).
    """
    candidates = {"direct": dense_map(base_param, m_param, rotation=rotation)}
    for i, aux in enumerate(aux_params):
        base_to_aux = dense_map(base_param, aux, rotation=rotation)
        aux_to_m = dense_map(aux, m_param, rotation=rotation)
        candidates["via_aux%d" % i] = compose(base_to_aux, aux_to_m)

    best = None
    for route, mapping in candidates.items():
        img = consistent_geometry_image(m_mesh, base_param, mapping, n,
                                        extra_channels=extra_channels)
        err = reconstruction_error(m_mesh, img)
        if best is None or err < best.error:
            best = MapSelection(True, img, err, route)
    if best.error > threshold:
        return MapSelection(False, best.gim, best.error, best.route)
    return best


def smoothness_energy(correspondence):
    """Sum over source-mesh edges of squared distance between the mapped
    endpoint positions; low values mean a spatially coherent map."""
    pos = correspondence.mapped_positions()
    e = correspondence.source.edges()
    return float(((pos[e[:, 0]] - pos[e[:, 1]]) ** 2).sum())


def gim_to_correspondence(base_param, predicted_gim, m_mesh):
    """Read a base->M dense map off a predicted geometry image.

    Every base vertex is unfolded into the image, the predicted position is
    bilinearly sampled at its (u, v), and the result is snapped to M's
    surface. Pixel (i, j) of the prediction and of the base's own image
    describe the same parametric location, which is what makes this a
    correspondence.
    """
    uv = octahedral_unfold(base_param.positions)
    pred = _bilinear_sample(predicted_gim.position_channels(), uv)
    faces, bary, _ = nearest_surface_point(m_mesh, pred)
    return DenseCorrespondence(faces, bary, base_param.source, m_mesh)


def rectify_correspondence(base_param, m_mesh, network, depth_image, view_ok=True):
    """Replace a noisy base->M map with one read from the network's
    predicted geometry image for M's rendered view."""
    from .nn.train import predict_gim

    pred = predict_gim(network, depth_image)
    corr = gim_to_correspondence(base_param, pred, m_mesh)
    if not view_ok:
        corr.warnings.append("view outside trained range, low confidence")
    return corr


def _bilinear_sample(data, uv):
    n = data.shape[0]
    # pixel centers at (i + 0.5)/n; clamp to the valid center range
    x = np.clip(uv[:, 0] * n - 0.5, 0.0, n - 1.0)
    y = np.clip(uv[:, 1] * n - 0.5, 0.0, n - 1.0)
    x0 = np.floor(x).astype(int)
    y0 = np.floor(y).astype(int)
    x1 = np.minimum(x0 + 1, n - 1)
    y1 = np.minimum(y0 + 1, n - 1)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    # rows index v, columns index u
    v00 = data[y0, x0]
    v01 = data[y0, x1]
    v10 = data[y1, x0]
    v11 = data[y1, x1]
    return (
        v00 * (1 - fx) * (1 - fy)
        + v01 * fx * (1 - fy)
        + v10 * (1 - fx) * fy
        + v11 * fx * fy
    )


def save_correspondence(corr, path):
    records = [
        {
            "source_vertex": int(i),
            "target_face": int(corr.faces[i]),
            "barycentric": [float(w) for w in corr.barycentric[i]],
        }
        for i in range(len(corr.faces))
    ]
    with open(path, "w") as fh:
        json.dump(records, fh)


def load_correspondence(path, source, target):
    with open(path) as fh:
        records = json.load(fh)
    faces = np.empty(len(records), dtype=np.int64)
    bary = np.empty((len(records), 3))
    for rec in records:
        faces[rec["source_vertex"]] = rec["target_face"]
        bary[rec["source_vertex"]] = rec["barycentric"]
    return DenseCorrespondence(faces, bary, source, target)
