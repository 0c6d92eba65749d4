"""Synthetic training corpora: parametric shape families, their consistent
geometry images through a clustered base shape, depth renders over a view
grid, and a JSON manifest tying the artifacts together.

The default corpus is a 3x3x3 superellipsoid lattice (exponent pair and
x-semi-axis each on three levels): genus-0 by construction, smoothly
parameterized, and creased at low exponents. Every sample carries its
parameter vector, mesh, position+curvature geometry image, and one depth
image per view; the manifest is byte-identical for a fixed seed.
"""

from __future__ import annotations

import itertools
import json
import os

import numpy as np

from . import shapes
from .correspond import d2_descriptor, select_map_and_filter, similarity_matrix
from .gim import load_gim, save_gim
from .mesh import mean_curvature, save_obj
from .render import load_pgm, render_depth, save_pgm, view_rotation
from .sphere import parametrize_authalic

LATTICE_EPS1 = (0.55, 1.0, 1.45)
LATTICE_EPS2 = (0.55, 1.0, 1.45)
LATTICE_AX = (0.75, 1.0, 1.25)
DEFAULT_AZIMUTHS = tuple(float(a) for a in range(0, 120, 15))
DEFAULT_THRESHOLD = 0.02


def lattice_params():
    """The 27 (eps1, eps2, x-semi-axis) lattice points, in one-hot order."""
    return [
        {"eps1": e1, "eps2": e2, "ax": ax}
        for e1, e2, ax in itertools.product(LATTICE_EPS1, LATTICE_EPS2,
                                            LATTICE_AX)
    ]


def creased_family_params(count=8):
    """Sharp-crease family: exponents pinned at 0.3, sizes varying."""
    axes = np.linspace(0.7, 1.3, count)
    return [{"eps1": 0.3, "eps2": 0.3, "ax": float(a)} for a in axes]


def family_mesh(params, subdivisions=2):
    return shapes.superellipsoid(params["eps1"], params["eps2"],
                                 (params["ax"], 1.0, 0.85), subdivisions)


def param_vector(one_hot_index, n_classes, azimuth_deg, elevation_deg=0.0):
    """One-hot class block followed by (sin az, cos az, sin el, cos el)."""
    v = np.zeros(n_classes + 4)
    v[one_hot_index] = 1.0
    az = np.radians(azimuth_deg)
    el = np.radians(elevation_deg)
    v[n_classes:] = [np.sin(az), np.cos(az), np.sin(el), np.cos(el)]
    return v


def normalized_weight(curv):
    """|curvature| scaled to mean 1 so the weighted loss keeps the plain
    loss's magnitude and the same learning rates stay usable."""
    c = np.abs(np.asarray(curv, dtype=np.float64))
    m = c.mean()
    return c / m if m > 0 else np.ones_like(c)


def build_dataset(out_dir, seed=0, family="superellipsoid-lattice",
                  subdivisions=2, gim_res=64, depth_res=128,
                  azimuths=DEFAULT_AZIMUTHS, elevations=(0.0,),
                  threshold=DEFAULT_THRESHOLD, progress=None):
    """Generate the corpus under out_dir and return the manifest dict.

    Any sample whose best base->shape map exceeds the reconstruction
    threshold stays in the manifest marked rejected; the consistency
    contract is that every accepted sample's error is within threshold.
    """
    if family == "superellipsoid-lattice":
        plist = lattice_params()
    elif family == "creased":
        plist = creased_family_params()
    else:
        raise ValueError("unknown family %r" % family)

    os.makedirs(out_dir, exist_ok=True)
    for sub in ("meshes", "gims", "depth"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)

    meshes = [family_mesh(p, subdivisions) for p in plist]
    params = []
    for i, m in enumerate(meshes):
        if progress:
            progress("parametrize %d/%d" % (i + 1, len(meshes)))
        params.append(parametrize_authalic(m))

    descriptors = [d2_descriptor(m, samples=1500, bins=32, seed=seed + i)
                   for i, m in enumerate(meshes)]
    similarity = similarity_matrix(descriptors)
    # one family, so no clustering: the base is the similarity medoid,
    # the shape the rest of the family is collectively closest to
    base_idx = int(np.argmax(similarity.sum(axis=1)))

    # family shapes are constructed in one canonical frame, so the sphere
    # alignment is pinned to the identity rather than searched: the best
    # rigid fit between unequally proportioned siblings may swap axes,
    # which would break pixel-level consistency across the corpus
    pinned = np.eye(3)
    entries = []
    for i, (p, mesh, param) in enumerate(zip(plist, meshes, params)):
        if progress:
            progress("encode %d/%d" % (i + 1, len(meshes)))
        curv = np.abs(mean_curvature(mesh))
        sel = select_map_and_filter(mesh, param, params[base_idx], [],
                                    threshold, n=gim_res,
                                    extra_channels={"curv": curv},
                                    rotation=pinned)
        entry_id = "s%03d" % i
        obj_path = os.path.join("meshes", entry_id + ".obj")
        gim_path = os.path.join("gims", entry_id + ".gim")
        save_obj(mesh, os.path.join(out_dir, obj_path))
        save_gim(sel.gim, os.path.join(out_dir, gim_path))
        depth_paths = []
        for el in elevations:
            for az in azimuths:
                dp = os.path.join(
                    "depth",
                    "%s_az%03d_el%02d.pgm" % (entry_id, int(az), int(el)))
                save_pgm(render_depth(mesh, az, el, depth_res),
                         os.path.join(out_dir, dp))
                depth_paths.append(dp)
        entries.append({
            "id": entry_id,
            "one_hot_index": i,
            "params": p,
            "obj": obj_path,
            "gim": gim_path,
            "depths": depth_paths,
            "accepted": bool(sel.accepted),
            "route": sel.route,
            "recon_error": sel.error,
        })

    manifest = {
        "format": "gimkit-dataset-1",
        "seed": seed,
        "family": family,
        "subdivisions": subdivisions,
        "gim_res": gim_res,
        "depth_res": depth_res,
        "azimuths": list(azimuths),
        "elevations": list(elevations),
        "threshold": threshold,
        "base_id": "s%03d" % base_idx,
        "base_index": base_idx,
        "n_classes": len(plist),
        "samples": entries,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return manifest


def load_manifest(out_dir):
    with open(os.path.join(out_dir, "manifest.json")) as fh:
        return json.load(fh)


def manifest_entry(manifest, entry_id):
    for e in manifest["samples"]:
        if e["id"] == entry_id:
            return e
    raise KeyError(entry_id)


def base_image(out_dir, manifest):
    return load_gim(os.path.join(
        out_dir, manifest_entry(manifest, manifest["base_id"])["gim"]))


def training_samples(out_dir, manifest, channel, weighted=False):
    """(param_vector, residual_target, weight) triples for one channel.

    The target is the rotated difference between the sample's geometry
    image and the base's: rotating position channels by the view matrix
    commutes with the subtraction, so the network models only the shape
    change, expressed in the rotated frame.
    """
    ci = {"x": 0, "y": 1, "z": 2}[channel]
    base_pos = base_image(out_dir, manifest).position_channels()
    n_classes = manifest["n_classes"]
    out = []
    for entry in manifest["samples"]:
        if not entry["accepted"]:
            continue
        gim = load_gim(os.path.join(out_dir, entry["gim"]))
        diff = gim.position_channels() - base_pos
        weight = normalized_weight(gim.channel("curv")) if weighted else None
        for el in manifest["elevations"]:
            for az in manifest["azimuths"]:
                r = view_rotation(az, el)
                target = (diff @ r.T)[:, :, ci]
                vec = param_vector(entry["one_hot_index"], n_classes, az, el)
                out.append((vec, target, weight))
    return out


def image_training_samples(out_dir, manifest, channel):
    """(depth_input, posed_target) pairs for the image->channel networks.

    One pair per stored depth view; pose is implicit in the image, so the
    target is the sample's geometry image rotated into the view's frame.
    """
    ci = {"x": 0, "y": 1, "z": 2}[channel]
    out = []
    for entry in manifest["samples"]:
        if not entry["accepted"]:
            continue
        gim = load_gim(os.path.join(out_dir, entry["gim"]))
        pos = gim.position_channels()
        k = 0
        for el in manifest["elevations"]:
            for az in manifest["azimuths"]:
                pix = load_pgm(os.path.join(out_dir, entry["depths"][k]))
                k += 1
                r = view_rotation(az, el)
                target = (pos @ r.T)[:, :, ci]
                out.append((pix.astype(np.float64)[None] / 255.0, target))
    return out
