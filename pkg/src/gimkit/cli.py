"""Command-line pipeline driver.

Every subcommand is a thin wrapper over the library modules and prints a
single-line JSON summary (status, outputs, metrics) to stdout. Stages that
write artifacts drop a content-hash stamp next to their output; rerunning
a completed stage with identical inputs is a no-op reported with status
"skipped". All randomness is derived from --seed.
"""

from __future__ import annotations

import argparse
import glob as globmod
import hashlib
import json
import os
import sys
import time

import numpy as np


class StageError(RuntimeError):
    pass


# ---------------------------------------------------------------- plumbing

def _require(path, what="artifact"):
    if not os.path.exists(path):
        raise StageError("missing %s: %s" % (what, path))
    return path


def _file_sha(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _digest(args_dict, input_paths):
    rec = {"args": args_dict,
           "inputs": {p: _file_sha(p) for p in sorted(input_paths)}}
    return hashlib.sha256(
        json.dumps(rec, sort_keys=True).encode()).hexdigest()


def _stamp_path(command, out):
    if os.path.isdir(out) or not os.path.splitext(out)[1]:
        return os.path.join(out, ".stamp-%s.json" % command)
    return out + ".stamp"


def _check_stamp(command, out, digest):
    """Return the recorded summary if this stage already ran on identical
    inputs and its outputs are untouched."""
    spath = _stamp_path(command, out)
    if not os.path.exists(spath):
        return None
    try:
        with open(spath) as fh:
            rec = json.load(fh)
    except (OSError, ValueError):
        return None
    if rec.get("digest") != digest:
        return None
    for path, sha in rec.get("outputs", {}).items():
        if not os.path.exists(path) or _file_sha(path) != sha:
            return None
    return rec.get("summary")


def _write_stamp(command, out, digest, summary):
    spath = _stamp_path(command, out)
    os.makedirs(os.path.dirname(spath) or ".", exist_ok=True)
    rec = {
        "digest": digest,
        "outputs": {p: _file_sha(p) for p in summary.get("outputs", [])},
        "summary": summary,
    }
    with open(spath, "w") as fh:
        json.dump(rec, fh, indent=1, sort_keys=True)


def _summary(command, outputs, metrics):
    return {"command": command, "status": "ok",
            "outputs": list(outputs), "metrics": metrics}


def _floats(csv_text):
    return [float(tok) for tok in csv_text.split(",") if tok.strip()]


def _load_mesh(path):
    from .mesh import load_obj

    return load_obj(_require(path, "mesh"))


def _manifest(dataset_dir):
    from .dataset import load_manifest

    _require(os.path.join(dataset_dir, "manifest.json"), "dataset manifest")
    return load_manifest(dataset_dir)


# ---------------------------------------------------------------- commands

def cmd_gen_data(args):
    from .dataset import build_dataset

    params = {
        "seed": args.seed, "family": args.family,
        "subdivisions": args.subdivisions, "gim_res": args.gim_res,
        "depth_res": args.resolution,
        "azimuths": _floats(args.azimuths),
        "elevations": _floats(args.elevations),
        "threshold": args.threshold,
    }
    digest = _digest(params, [])
    os.makedirs(args.out, exist_ok=True)
    skipped = _check_stamp("gen-data", args.out, digest)
    if skipped is not None:
        return skipped, True

    manifest = build_dataset(args.out, **params)
    accepted = [s for s in manifest["samples"] if s["accepted"]]
    outputs = [os.path.join(args.out, "manifest.json")]
    summary = _summary("gen-data", outputs, {
        "samples": len(manifest["samples"]),
        "accepted": len(accepted),
        "base_id": manifest["base_id"],
        "max_recon_error": max(s["recon_error"] for s in accepted)
        if accepted else None,
    })
    _write_stamp("gen-data", args.out, digest, summary)
    return summary, False


def cmd_preprocess(args):
    from .mesh import euler_genus, laplacian_smooth, save_obj
    from .voxel import extract_surface, voxelize

    mesh = _load_mesh(args.mesh)
    digest = _digest({"resolution": args.resolution,
                      "smooth_iters": args.smooth_iters}, [args.mesh])
    skipped = _check_stamp("preprocess", args.out, digest)
    if skipped is not None:
        return skipped, True

    grid = voxelize(mesh, args.resolution)
    surf = extract_surface(grid)
    smoothed = laplacian_smooth(surf.mesh, iterations=args.smooth_iters)
    save_obj(smoothed, args.out)
    chi, genus = euler_genus(smoothed)
    summary = _summary("preprocess", [args.out], {
        "vertices": smoothed.n_vertices,
        "faces": smoothed.n_faces,
        "euler_characteristic": chi,
        "genus": genus,
        "occupied_voxels": grid.occupied_count(),
    })
    _write_stamp("preprocess", args.out, digest, summary)
    return summary, False


def cmd_parametrize(args):
    from .sphere import area_distortion, count_flipped, parametrize_authalic

    mesh = _load_mesh(args.mesh)
    digest = _digest({}, [args.mesh])
    skipped = _check_stamp("parametrize", args.out, digest)
    if skipped is not None:
        return skipped, True

    param = parametrize_authalic(mesh)
    with open(args.out, "w") as fh:
        json.dump({
            "format": "sphereparam-1",
            "mesh": os.path.basename(args.mesh),
            "positions": param.positions.tolist(),
        }, fh)
    summary = _summary("parametrize", [args.out], {
        "vertices": mesh.n_vertices,
        "area_distortion": area_distortion(mesh, param),
        "flipped_triangles": count_flipped(param.positions, mesh.faces),
    })
    _write_stamp("parametrize", args.out, digest, summary)
    return summary, False


def _dataset_meshes(args):
    # either every mesh of a dataset, or an explicit glob
    if args.dataset:
        man = _manifest(args.dataset)
        ids = [s["id"] for s in man["samples"]]
        paths = [os.path.join(args.dataset, s["obj"]) for s in man["samples"]]
    else:
        paths = sorted(globmod.glob(args.meshes))
        if not paths:
            raise StageError("missing meshes: no files match %r" % args.meshes)
        ids = [os.path.splitext(os.path.basename(p))[0] for p in paths]
    return ids, paths


def cmd_encode(args):
    from .correspond import d2_descriptor

    ids, paths = _dataset_meshes(args)
    digest = _digest({"samples": args.samples, "bins": args.bins,
                      "seed": args.seed}, paths)
    skipped = _check_stamp("encode", args.out, digest)
    if skipped is not None:
        return skipped, True

    items = []
    for i, (mesh_id, path) in enumerate(zip(ids, paths)):
        mesh = _load_mesh(path)
        d = d2_descriptor(mesh, samples=args.samples, bins=args.bins,
                          seed=args.seed + i)
        items.append({"id": mesh_id, "histogram": d.histogram.tolist(),
                      "normalization": d.normalization})
    with open(args.out, "w") as fh:
        json.dump({"format": "descriptors-1", "bins": args.bins,
                   "samples": args.samples, "items": items}, fh)
    summary = _summary("encode", [args.out],
                       {"count": len(items), "bins": args.bins})
    _write_stamp("encode", args.out, digest, summary)
    return summary, False


def cmd_cluster(args):
    from .correspond import D2Descriptor, similarity_matrix, spectral_cluster

    _require(args.descriptors, "descriptor file")
    with open(args.descriptors) as fh:
        desc = json.load(fh)
    digest = _digest({"k": args.k, "seed": args.seed}, [args.descriptors])
    skipped = _check_stamp("cluster", args.out, digest)
    if skipped is not None:
        return skipped, True

    descriptors = [D2Descriptor(np.asarray(item["histogram"]),
                                item.get("normalization", 1.0))
                   for item in desc["items"]]
    S = similarity_matrix(descriptors)
    result = spectral_cluster(S, args.k, seed=args.seed)
    ids = [item["id"] for item in desc["items"]]
    with open(args.out, "w") as fh:
        json.dump({
            "format": "clusters-1",
            "k": args.k,
            "assignments": {ids[i]: int(c)
                            for i, c in enumerate(result.assignments)},
            "exemplars": [ids[e] for e in result.exemplars],
            "base": ids[result.base],
            "auxiliaries": [ids[a] for a in result.auxiliaries],
        }, fh)
    sizes = np.bincount(result.assignments, minlength=args.k).tolist()
    summary = _summary("cluster", [args.out], {
        "sizes": sizes, "base": ids[result.base],
    })
    _write_stamp("cluster", args.out, digest, summary)
    return summary, False


def cmd_correspond(args):
    from .correspond import (consistent_geometry_image, dense_map,
                             save_correspondence)
    from .gim import reconstruction_error, save_gim
    from .sphere import parametrize_authalic

    src = _load_mesh(args.source)
    tgt = _load_mesh(args.target)
    digest = _digest({"gim_res": args.gim_res, "threshold": args.threshold},
                     [args.source, args.target])
    skipped = _check_stamp("correspond", args.out, digest)
    if skipped is not None:
        return skipped, True

    src_param = parametrize_authalic(src)
    tgt_param = parametrize_authalic(tgt)
    mapping = dense_map(src_param, tgt_param)
    img = consistent_geometry_image(tgt, src_param, mapping, args.gim_res)
    err = reconstruction_error(tgt, img)
    save_correspondence(mapping, args.out)
    outputs = [args.out]
    if args.gim_out:
        save_gim(img, args.gim_out)
        outputs.append(args.gim_out)
    summary = _summary("correspond", outputs, {
        "recon_error": err,
        "accepted": err <= args.threshold,
        "warnings": list(mapping.warnings),
    })
    _write_stamp("correspond", args.out, digest, summary)
    return summary, False


def _train_channels(args, kind):
    from .dataset import image_training_samples, training_samples
    from .nn.networks import (build_image_to_gim,
                              build_param_to_residual_gim, save_network)
    from .nn.train import TrainConfig, train

    man = _manifest(args.dataset)
    manifest_path = os.path.join(args.dataset, "manifest.json")
    params = {"epochs": args.epochs, "lr": args.lr, "batch": args.batch,
              "seed": args.seed, "paper_depth": args.paper_depth,
              "weighted": getattr(args, "weighted", False), "kind": kind}
    digest = _digest(params, [manifest_path])
    os.makedirs(args.out, exist_ok=True)
    command = "train-param" if kind == "param" else "train-img"
    skipped = _check_stamp(command, args.out, digest)
    if skipped is not None:
        return skipped, True

    cfg = TrainConfig(learning_rate=args.lr, epochs=args.epochs,
                      batch_size=args.batch, seed=args.seed)
    outputs = []
    finals = {}
    t0 = time.time()
    for ci, ch in enumerate(("x", "y", "z")):
        if kind == "param":
            samples = training_samples(args.dataset, man, ch,
                                       weighted=args.weighted)
            net = build_param_to_residual_gim(
                man["n_classes"] + 4, gim_res=man["gim_res"],
                paper_depth=args.paper_depth, seed=args.seed + ci)
        else:
            samples = image_training_samples(args.dataset, man, ch)
            net = build_image_to_gim(
                1, input_res=man["depth_res"], gim_res=man["gim_res"],
                paper_depth=args.paper_depth, seed=args.seed + ci)
        result = train(net, samples, cfg)
        net_path = os.path.join(args.out, "%s.net" % ch)
        csv_path = os.path.join(args.out, "loss_%s.csv" % ch)
        save_network(net, net_path)
        result.write_csv(csv_path)
        outputs += [net_path, csv_path]
        finals[ch] = result.epoch_losses[-1]
    model = {
        "format": "gimkit-model-1",
        "kind": kind,
        "dataset": os.path.abspath(args.dataset),
        "n_classes": man["n_classes"],
        "gim_res": man["gim_res"],
        "base_id": man["base_id"],
        "epochs": args.epochs,
        "seed": args.seed,
    }
    model_path = os.path.join(args.out, "model.json")
    with open(model_path, "w") as fh:
        json.dump(model, fh, indent=1, sort_keys=True)
    outputs.append(model_path)
    summary = _summary(command, outputs, {
        "final_losses": finals,
        "train_seconds": round(time.time() - t0, 1),
        "samples": len(samples),
    })
    _write_stamp(command, args.out, digest, summary)
    return summary, False


def cmd_train_param(args):
    return _train_channels(args, "param")


def cmd_train_img(args):
    return _train_channels(args, "image")


def _load_model(model_dir):
    from .nn.networks import load_network

    meta_path = _require(os.path.join(model_dir, "model.json"), "model")
    with open(meta_path) as fh:
        model = json.load(fh)
    nets = {ch: load_network(
        _require(os.path.join(model_dir, "%s.net" % ch), "checkpoint"))
        for ch in ("x", "y", "z")}
    return model, nets


def _generator(model, nets, dataset_dir):
    from .dataset import base_image
    from .nn.train import RigidGenerator

    man = _manifest(dataset_dir)
    return RigidGenerator(nets, base_image(dataset_dir, man),
                          man["n_classes"]), man


def cmd_generate(args):
    from .gim import decode_geometry_image, save_gim
    from .mesh import save_obj

    model, nets = _load_model(args.model)
    outputs = []
    if model["kind"] == "image":
        from .nn.train import predict_gim
        from .render import load_pgm

        if not args.depth:
            raise StageError("missing depth image: image models need --depth")
        depth = load_pgm(_require(args.depth, "depth image"))
        gim = predict_gim(nets, depth)
        metrics = {"input": args.depth}
    else:
        from .dataset import param_vector

        if not args.dataset:
            raise StageError(
                "missing dataset: parametric models need --dataset "
                "for the base geometry image")
        gen, man = _generator(model, nets, args.dataset)
        vec = param_vector(args.shape, man["n_classes"],
                           args.azimuth, args.elevation)
        gim = gen.generate(vec)
        metrics = {"shape": args.shape, "azimuth": args.azimuth,
                   "elevation": args.elevation}
    mesh = decode_geometry_image(gim)
    save_obj(mesh, args.out)
    outputs.append(args.out)
    if args.gim_out:
        save_gim(gim, args.gim_out)
        outputs.append(args.gim_out)
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    metrics.update({
        "vertices": mesh.n_vertices,
        "bbox": [lo.tolist(), hi.tolist()],
        "finite": bool(np.isfinite(mesh.vertices).all()),
    })
    return _summary("generate", outputs, metrics), False


def cmd_interpolate(args):
    from .dataset import param_vector
    from .gim import chamfer_distance, decode_geometry_image
    from .mesh import save_obj

    model, nets = _load_model(args.model)
    if model["kind"] != "param":
        raise StageError("interpolation needs a parametric model, got %r"
                         % model["kind"])
    gen, man = _generator(model, nets, args.dataset)
    v1 = param_vector(args.from_shape, man["n_classes"],
                      args.azimuth, args.elevation)
    v2 = param_vector(args.to_shape, man["n_classes"],
                      args.azimuth, args.elevation)
    from .nn.train import interpolate_params

    gims = interpolate_params(gen, v1, v2, args.steps)
    os.makedirs(args.out, exist_ok=True)
    outputs = []
    meshes = []
    for i, gim in enumerate(gims):
        mesh = decode_geometry_image(gim)
        meshes.append(mesh)
        path = os.path.join(args.out, "step_%02d.obj" % i)
        save_obj(mesh, path)
        outputs.append(path)
    hops = [chamfer_distance(a.vertices, b.vertices)
            for a, b in zip(meshes[:-1], meshes[1:])]
    endpoint = chamfer_distance(meshes[0].vertices, meshes[-1].vertices)
    return _summary("interpolate", outputs, {
        "steps": args.steps,
        "step_chamfer": hops,
        "endpoint_chamfer": endpoint,
    }), False


def cmd_export(args):
    from .gim import decode_geometry_image, load_gim
    from .mesh import save_obj

    os.makedirs(args.out, exist_ok=True)
    outputs = []
    for path in args.gims:
        gim = load_gim(_require(path, "geometry image"))
        mesh = decode_geometry_image(gim)
        stem = os.path.splitext(os.path.basename(path))[0]
        dst = os.path.join(args.out, stem + ".obj")
        save_obj(mesh, dst)
        outputs.append(dst)
    return _summary("export", outputs, {"count": len(outputs)}), False


def cmd_rectify(args):
    from .correspond import (DenseCorrespondence, gim_to_correspondence,
                             nearest_surface_point, rectify_correspondence,
                             save_correspondence, smoothness_energy)
    from .dataset import manifest_entry
    from .gim import load_gim
    from .render import load_pgm
    from .sphere import parametrize_authalic

    model, nets = _load_model(args.model)
    if model["kind"] != "image":
        raise StageError("rectification needs an image model, got %r"
                         % model["kind"])
    man = _manifest(args.dataset)
    entry = manifest_entry(man, args.id)
    mesh = _load_mesh(os.path.join(args.dataset, entry["obj"]))
    base_entry = manifest_entry(man, man["base_id"])
    base_mesh = _load_mesh(os.path.join(args.dataset, base_entry["obj"]))
    base_param = parametrize_authalic(base_mesh)

    gim = load_gim(os.path.join(args.dataset, entry["gim"]))
    clean = gim_to_correspondence(base_param, gim, mesh)

    # corrupt the map by jittering mapped points, then re-snapping
    rng = np.random.default_rng(args.seed)
    pos = clean.mapped_positions()
    noisy_pts = pos + rng.normal(0.0, args.noise, pos.shape)
    faces, bary, _ = nearest_surface_point(mesh, noisy_pts)
    noisy = DenseCorrespondence(faces, bary, clean.source, clean.target)

    if not 0 <= args.view_index < len(entry["depths"]):
        raise StageError("missing depth view: index %d of %d stored"
                         % (args.view_index, len(entry["depths"])))
    depth = load_pgm(_require(
        os.path.join(args.dataset, entry["depths"][args.view_index]),
        "depth image"))
    fixed = rectify_correspondence(base_param, mesh, nets, depth)
    before = smoothness_energy(noisy)
    after = smoothness_energy(fixed)
    save_correspondence(fixed, args.out)
    return _summary("rectify", [args.out], {
        "energy_noisy": before,
        "energy_rectified": after,
        "reduction": (before - after) / before if before > 0 else 0.0,
        "warnings": list(fixed.warnings),
    }), False


# ---------------------------------------------------------------- parser

def _add_common(p, *names):
    if "seed" in names:
        p.add_argument("--seed", type=int, default=0)
    if "out" in names:
        p.add_argument("--out", required=True)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gimkit",
        description="geometry-image shape pipeline: dataset synthesis, "
                    "correspondence, training, and generation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="synthesize the training corpus")
    _add_common(p, "seed", "out")
    p.add_argument("--family", default="superellipsoid-lattice",
                   choices=["superellipsoid-lattice", "creased"])
    p.add_argument("--subdivisions", type=int, default=2)
    p.add_argument("--gim-res", type=int, default=64)
    p.add_argument("--resolution", type=int, default=128,
                   help="depth image resolution")
    p.add_argument("--threshold", type=float, default=0.02)
    p.add_argument("--azimuths", default="0,15,30,45,60,75,90,105")
    p.add_argument("--elevations", default="0")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("preprocess",
                       help="voxelize, extract a closed surface, smooth")
    _add_common(p, "out")
    p.add_argument("--mesh", required=True)
    p.add_argument("--resolution", type=int, default=32,
                   help="voxel grid resolution")
    p.add_argument("--smooth-iters", type=int, default=10)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("parametrize",
                       help="area-preserving sphere map for one mesh")
    _add_common(p, "out")
    p.add_argument("--mesh", required=True)
    p.set_defaults(func=cmd_parametrize)

    p = sub.add_parser("encode", help="shape distribution descriptors")
    _add_common(p, "seed", "out")
    p.add_argument("--dataset")
    p.add_argument("--meshes", help="glob, used when --dataset is absent")
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--bins", type=int, default=64)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("cluster", help="spectral clustering of descriptors")
    _add_common(p, "seed", "out")
    p.add_argument("--descriptors", required=True)
    p.add_argument("--k", type=int, required=True)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("correspond",
                       help="dense map between two meshes via the sphere")
    _add_common(p, "out")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--gim-res", type=int, default=64)
    p.add_argument("--threshold", type=float, default=0.02)
    p.add_argument("--gim-out")
    p.set_defaults(func=cmd_correspond)

    for name, fn in (("train-param", cmd_train_param),
                     ("train-img", cmd_train_img)):
        p = sub.add_parser(name, help="train the three channel networks")
        _add_common(p, "seed", "out")
        p.add_argument("--dataset", required=True)
        p.add_argument("--epochs", type=int, default=15)
        p.add_argument("--lr", type=float, default=0.01)
        p.add_argument("--batch", type=int, default=16)
        p.add_argument("--paper-depth", action="store_true")
        if name == "train-param":
            p.add_argument("--weighted", action="store_true",
                           help="curvature-weighted loss")
        p.set_defaults(func=fn)

    p = sub.add_parser("generate", help="decode one generated surface")
    _add_common(p, "out")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset")
    p.add_argument("--shape", type=int, default=0,
                   help="one-hot class index (parametric models)")
    p.add_argument("--azimuth", type=float, default=0.0)
    p.add_argument("--elevation", type=float, default=0.0)
    p.add_argument("--depth", help="input PGM (image models)")
    p.add_argument("--gim-out")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("interpolate",
                       help="surfaces along a parameter-space line")
    _add_common(p, "out")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--from-shape", type=int, required=True)
    p.add_argument("--to-shape", type=int, required=True)
    p.add_argument("--azimuth", type=float, default=0.0)
    p.add_argument("--elevation", type=float, default=0.0)
    p.add_argument("--steps", type=int, default=5)
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("export", help="decode stored geometry images to OBJ")
    _add_common(p, "out")
    p.add_argument("gims", nargs="+")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("rectify",
                       help="replace a noisy correspondence with the "
                            "network's prediction")
    _add_common(p, "seed", "out")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--id", required=True, help="manifest sample id")
    p.add_argument("--view-index", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.05)
    p.set_defaults(func=cmd_rectify)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        summary, was_skipped = args.func(args)
        if was_skipped:
            summary = dict(summary, status="skipped")
    except StageError as exc:
        print(json.dumps({"command": args.command, "status": "error",
                          "error": str(exc)}))
        return 1
    print(json.dumps(summary))
    return 0


if __name__ == "__main__":
    sys.exit(main())
