"""Solid voxelization and watertight boundary-surface extraction.

Arbitrary (possibly non-manifold) input meshes are converted into closed,
Euler-valid surfaces: occupancy by ray-crossing parity, then the boundary
quads of the occupied cells with pinch configurations resolved by vertex
duplication, so the output always passes mesh validation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .mesh import TriMesh

_JITTER_SEED = 20240815


@dataclass
class OccupancyGrid:
    """Boolean occupancy over a regular grid.

    ``bits[i, j, k]`` covers the cell with min corner
    ``origin + (i, j, k) * cell_size``.
    """

    resolution: tuple
    origin: np.ndarray
    cell_size: float
    bits: np.ndarray
    from_shell_fallback: bool = False

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64)
        nx, ny, nz = self.resolution
        if nx < 1 or ny < 1 or nz < 1:
            raise ValueError("grid resolution must be >= 1 per axis")
        if self.bits.shape != (nx, ny, nz):
            raise ValueError("bits shape does not match resolution")

    def occupied_count(self):
        return int(self.bits.sum())

    def cell_centers_x(self):
        nx = self.resolution[0]
        return self.origin[0] + (np.arange(nx) + 0.5) * self.cell_size


def _is_watertight(mesh):
    return mesh.n_faces > 0 and mesh.is_edge_manifold() and mesh.is_oriented()


def voxelize(mesh, resolution):
    """Solid-voxelize a mesh by +x ray-crossing parity.

    The grid covers the mesh bounding box padded by 2 cells per side; the
    cell size is the longest AABB extent divided by ``resolution``. A cell
    is occupied iff its center lies inside the surface. Rays that graze an
    edge or vertex are re-cast with a new deterministic jitter. Open
    (non-watertight) input falls back to shell voxelization (cell occupied
    iff it meets a triangle) with ``from_shell_fallback`` set.

    Parameters
    ----------
    mesh : TriMesh
    resolution : int
        Cell count along the longest axis, >= 8.
    """
    if mesh.n_faces == 0:
        raise ValueError("cannot voxelize an empty mesh")
    if resolution < 8:
        raise ValueError("resolution must be >= 8")
    lo, hi = mesh.bounding_box()
    extent = hi - lo
    cell = float(extent.max()) / resolution
    if cell <= 0:
        raise ValueError("mesh has zero extent")
    counts = np.ceil(extent / cell - 1e-9).astype(int) + 4
    origin = lo - 2.0 * cell

    if _is_watertight(mesh):
        bits = _parity_fill(mesh, origin, cell, counts)
        fallback = False
    else:
        bits = _shell_fill(mesh, origin, cell, counts)
        fallback = True
    return OccupancyGrid(tuple(int(c) for c in counts), origin, cell, bits, fallback)


def _parity_fill(mesh, origin, cell, counts):
    nx, ny, nz = counts
    v = mesh.vertices
    f = mesh.faces
    a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
    x_centers = origin[0] + (np.arange(nx) + 0.5) * cell
    bits = np.zeros((nx, ny, nz), dtype=bool)

    rng = np.random.default_rng(_JITTER_SEED)
    pending = np.ones(ny * nz, dtype=bool)
    base_y = origin[1] + (np.arange(ny) + 0.5) * cell
    base_z = origin[2] + (np.arange(nz) + 0.5) * cell
    eps = 1e-9

    for _attempt in range(12):
        if not pending.any():
            break
        jy, jz = (rng.random(2) - 0.5) * 0.2 * cell
        ray_y = np.repeat(base_y + jy, nz)
        ray_z = np.tile(base_z + jz, ny)
        line_ids = np.nonzero(pending)[0]
        ys = ray_y[line_ids]
        zs = ray_z[line_ids]
        cross_line = []
        cross_x = []
        bad = np.zeros(len(line_ids), dtype=bool)
        # lines sorted by (y, z) already; bucket triangles by their yz bbox
        for t in range(len(f)):
            ty = np.array([a[t, 1], b[t, 1], c[t, 1]])
            tz = np.array([a[t, 2], b[t, 2], c[t, 2]])
            sel = np.nonzero(
                (ys >= ty.min() - eps) & (ys <= ty.max() + eps)
                & (zs >= tz.min() - eps) & (zs <= tz.max() + eps)
            )[0]
            if len(sel) == 0:
                continue
            det = (ty[1] - ty[0]) * (tz[2] - tz[0]) - (ty[2] - ty[0]) * (tz[1] - tz[0])
            scale = max(np.ptp(ty), np.ptp(tz), eps)
            if abs(det) < 1e-12 * scale * scale:
                # ray-parallel triangle: only rays grazing its projected
                # segment are degenerate, the rest miss it cleanly
                near = _near_projected_edges(ty, tz, ys[sel], zs[sel], 1e-9 * scale)
                bad[sel[near]] = True
                continue
            w1 = ((ys[sel] - ty[0]) * (tz[2] - tz[0]) - (ty[2] - ty[0]) * (zs[sel] - tz[0])) / det
            w2 = ((ty[1] - ty[0]) * (zs[sel] - tz[0]) - (ys[sel] - ty[0]) * (tz[1] - tz[0])) / det
            w0 = 1.0 - w1 - w2
            margin = 1e-9
            inside = (w0 > margin) & (w1 > margin) & (w2 > margin)
            grazing = (
                (np.abs(w0) <= margin) | (np.abs(w1) <= margin) | (np.abs(w2) <= margin)
            ) & (w0 > -margin) & (w1 > -margin) & (w2 > -margin)
            bad[sel[grazing]] = True
            hit = sel[inside]
            if len(hit):
                xh = (
                    a[t, 0] * w0[inside]
                    + b[t, 0] * w1[inside]
                    + c[t, 0] * w2[inside]
                )
                cross_line.append(hit)
                cross_x.append(xh)
        if cross_line:
            cl = np.concatenate(cross_line)
            cx = np.concatenate(cross_x)
        else:
            cl = np.empty(0, dtype=int)
            cx = np.empty(0)
        good = ~bad
        order = np.lexsort((cx, cl))
        cl, cx = cl[order], cx[order]
        starts = np.searchsorted(cl, np.arange(len(line_ids)))
        ends = np.searchsorted(cl, np.arange(len(line_ids)) + 1)
        for li in np.nonzero(good)[0]:
            xs = cx[starts[li]:ends[li]]
            if len(xs) % 2 != 0:
                bad[li] = True
                continue
            line = line_ids[li]
            iy, iz = divmod(line, nz)
            inside_mask = (np.searchsorted(xs, x_centers) % 2) == 1
            bits[:, iy, iz] = inside_mask
            pending[line] = False
        # lines still pending get a fresh jitter next attempt
    if pending.any():
        raise RuntimeError("ray jitter failed to resolve degenerate crossings")
    return bits


def _near_projected_edges(ty, tz, ys, zs, tol):
    near = np.zeros(len(ys), dtype=bool)
    for i in range(3):
        j = (i + 1) % 3
        ey, ez = ty[j] - ty[i], tz[j] - tz[i]
        L2 = ey * ey + ez * ez
        if L2 == 0.0:
            d2 = (ys - ty[i]) ** 2 + (zs - tz[i]) ** 2
        else:
            s = np.clip(((ys - ty[i]) * ey + (zs - tz[i]) * ez) / L2, 0.0, 1.0)
            d2 = (ys - ty[i] - s * ey) ** 2 + (zs - tz[i] - s * ez) ** 2
        near |= d2 <= tol * tol
    return near


def _shell_fill(mesh, origin, cell, counts):
    nx, ny, nz = counts
    bits = np.zeros((nx, ny, nz), dtype=bool)
    v = mesh.vertices
    for tri in mesh.faces:
        p0, p1, p2 = v[tri[0]], v[tri[1]], v[tri[2]]
        longest = max(
            np.linalg.norm(p1 - p0), np.linalg.norm(p2 - p0), np.linalg.norm(p2 - p1)
        )
        n = max(2, int(np.ceil(longest / (0.5 * cell))) + 1)
        s = np.linspace(0.0, 1.0, n)
        su, sv = np.meshgrid(s, s)
        keep = su + sv <= 1.0 + 1e-12
        su, sv = su[keep], sv[keep]
        pts = (
            p0[None, :] * (1.0 - su - sv)[:, None]
            + p1[None, :] * su[:, None]
            + p2[None, :] * sv[:, None]
        )
        idx = np.floor((pts - origin) / cell).astype(int)
        ok = np.all((idx >= 0) & (idx < np.array([nx, ny, nz])), axis=1)
        idx = idx[ok]
        bits[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    return bits


# axis triples (a, b, c) in right-handed cyclic order
_CYCLIC = {0: (1, 2), 1: (2, 0), 2: (0, 1)}

_UNIT = np.eye(3, dtype=int)


def _largest_component(bits):
    structure = ndimage.generate_binary_structure(3, 1)
    labels, n = ndimage.label(bits, structure=structure)
    if n <= 1:
        return bits, n
    sizes = ndimage.sum_labels(np.ones_like(labels), labels, index=np.arange(1, n + 1))
    keep = int(np.argmax(sizes)) + 1
    return labels == keep, n


@dataclass
class SurfaceExtraction:
    mesh: TriMesh
    vertex_splits: int = 0
    edge_pinches: int = 0
    components_dropped: int = 0


def extract_surface(grid):
    """Extract the boundary surface of the occupied cells as a closed mesh.

    Boundary quads (between occupied and empty cells) are split into two
    triangles each, oriented outward. Non-manifold edge and vertex pinches
    are resolved by duplicating grid vertices so diagonal cell contacts
    become separate surface sheets, matching the 6-connected solid. If the
    occupancy has several 6-connected components, only the largest is kept.

    Returns
    -------
    SurfaceExtraction
        Mesh plus repair counters; ``mesh`` always validates and satisfies
        the Euler formula.
    """
    if grid.occupied_count() == 0:
        raise ValueError("no occupied cells")
    bits, n_comp = _largest_component(grid.bits)
    nx, ny, nz = bits.shape
    occ = np.zeros((nx + 2, ny + 2, nz + 2), dtype=bool)
    occ[1:-1, 1:-1, 1:-1] = bits

    def occupied(cell):
        return occ[cell[0] + 1, cell[1] + 1, cell[2] + 1]

    # boundary faces keyed by (cell, axis, sign)
    face_key_to_id = {}
    face_list = []
    for axis in range(3):
        for sign in (1, -1):
            shifted = np.roll(occ, -sign, axis=axis)
            sel = occ & ~shifted
            cells = np.argwhere(sel) - 1
            for cellv in cells:
                key = (int(cellv[0]), int(cellv[1]), int(cellv[2]), axis, sign)
                face_key_to_id[key] = len(face_list)
                face_list.append(key)

    n_faces = len(face_list)
    corners = np.empty((n_faces, 4, 3), dtype=np.int64)
    edge_sides = np.empty((n_faces, 4, 2), dtype=np.int64)  # (side axis, side sign)
    for fid, (ci, cj, ck, a, s) in enumerate(face_list):
        b, c = _CYCLIC[a]
        base = np.array([ci, cj, ck], dtype=np.int64)
        plane = base.copy()
        if s == 1:
            plane[a] += 1
        off_b = _UNIT[b]
        off_c = _UNIT[c]
        if s == 1:
            quad = [plane, plane + off_b, plane + off_b + off_c, plane + off_c]
            sides = [(c, -1), (b, 1), (c, 1), (b, -1)]
        else:
            quad = [plane, plane + off_c, plane + off_b + off_c, plane + off_b]
            sides = [(b, -1), (c, 1), (b, 1), (c, -1)]
        corners[fid] = quad
        edge_sides[fid] = sides

    # union-find over the 4 corner slots of every face
    parent = np.arange(4 * n_faces)

    def find(i):
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    def union(i, j):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[rj] = ri

    edge_pinch_edges = set()
    for fid, (ci, cj, ck, a, s) in enumerate(face_list):
        o = np.array([ci, cj, ck], dtype=np.int64)
        d_axis, d_sign = a, s
        for m in range(4):
            t_axis, t_sign = edge_sides[fid, m]
            t = _UNIT[t_axis] * t_sign
            d = _UNIT[d_axis] * d_sign
            p = o + t
            q = o + d + t
            p_occ = occupied(p)
            q_occ = occupied(q)
            if not p_occ:
                partner = (int(o[0]), int(o[1]), int(o[2]), int(t_axis), int(t_sign))
                if q_occ:
                    edge_pinch_edges.add(_grid_edge_key(corners[fid, m], corners[fid, (m + 1) % 4]))
            elif not q_occ:
                partner = (int(p[0]), int(p[1]), int(p[2]), d_axis, d_sign)
            else:
                partner = (int(q[0]), int(q[1]), int(q[2]), int(t_axis), -int(t_sign))
            pid = face_key_to_id[partner]
            # weld the two slots on each shared grid vertex
            va = corners[fid, m]
            vb = corners[fid, (m + 1) % 4]
            for gv in (va, vb):
                slot_here = 4 * fid + _corner_slot(corners[fid], gv)
                slot_there = 4 * pid + _corner_slot(corners[pid], gv)
                union(slot_here, slot_there)

    roots = np.array([find(i) for i in range(4 * n_faces)])
    uniq, vert_ids = np.unique(roots, return_inverse=True)
    n_verts = len(uniq)
    positions = np.empty((n_verts, 3))
    positions[vert_ids] = grid.origin + corners.reshape(-1, 3) * grid.cell_size

    slot_ids = vert_ids.reshape(n_faces, 4)
    tris = np.empty((2 * n_faces, 3), dtype=np.int64)
    tris[0::2] = slot_ids[:, [0, 1, 2]]
    tris[1::2] = slot_ids[:, [0, 2, 3]]

    # count grid vertices that were split into several surface vertices
    gv_flat = corners.reshape(-1, 3)
    gv_keys = (gv_flat[:, 0] << 42) + (gv_flat[:, 1] << 21) + gv_flat[:, 2]
    split_count = 0
    for _, grp in _group_by(gv_keys, vert_ids):
        if len(np.unique(grp)) > 1:
            split_count += 1

    mesh = TriMesh(positions, tris)
    return SurfaceExtraction(
        mesh=mesh,
        vertex_splits=split_count,
        edge_pinches=len(edge_pinch_edges),
        components_dropped=max(0, n_comp - 1),
    )


def _grid_edge_key(va, vb):
    lo = np.minimum(va, vb)
    axis = int(np.nonzero(va != vb)[0][0])
    return (int(lo[0]), int(lo[1]), int(lo[2]), axis)


def _corner_slot(quad_corners, gv):
    for m in range(4):
        if (
            quad_corners[m, 0] == gv[0]
            and quad_corners[m, 1] == gv[1]
            and quad_corners[m, 2] == gv[2]
        ):
            return m
    raise AssertionError("grid vertex not on quad")


def _group_by(keys, values):
    order = np.argsort(keys, kind="stable")
    keys = keys[order]
    values = values[order]
    boundaries = np.nonzero(np.diff(keys))[0] + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [len(keys)]])
    for s, e in zip(starts, ends):
        yield keys[s], values[s:e]


def enclosed_volume(mesh):
    """Signed volume via the divergence theorem (positive for outward CCW)."""
    v = mesh.vertices
    f = mesh.faces
    return float(
        np.einsum("ij,ij->i", v[f[:, 0]], np.cross(v[f[:, 1]], v[f[:, 2]])).sum() / 6.0
    )


def save_grid(grid, path):
    """Write a grid as a JSON header line plus run-length-encoded bits.

    Runs alternate empty/occupied starting with empty; the RLE is a
    comma-separated integer list over the flattened (x, y, z) order.
    """
    flat = grid.bits.reshape(-1)
    runs = []
    current = False
    count = 0
    for bit in flat:
        if bool(bit) == current:
            count += 1
        else:
            runs.append(count)
            current = not current
            count = 1
    runs.append(count)
    header = {
        "resolution": list(grid.resolution),
        "origin": [float(x) for x in grid.origin],
        "cell_size": grid.cell_size,
        "from_shell_fallback": grid.from_shell_fallback,
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True))
        fh.write("\n")
        fh.write(",".join(str(r) for r in runs))
        fh.write("\n")


def load_grid(path):
    with open(path, "r") as fh:
        header = json.loads(fh.readline())
        runs = [int(tok) for tok in fh.readline().strip().split(",")]
    nx, ny, nz = header["resolution"]
    flat = np.zeros(nx * ny * nz, dtype=bool)
    pos = 0
    value = False
    for run in runs:
        if value:
            flat[pos:pos + run] = True
        pos += run
        value = not value
    if pos != nx * ny * nz:
        raise ValueError("RLE length does not match grid resolution")
    return OccupancyGrid(
        (nx, ny, nz),
        np.array(header["origin"]),
        header["cell_size"],
        flat.reshape(nx, ny, nz),
        header.get("from_shell_fallback", False),
    )
