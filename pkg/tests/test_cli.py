"""End-to-end drives of the pipeline commands on a tiny corpus."""

import json
import os

import numpy as np
import pytest

from gimkit.cli import main

GEN_ARGS = ["--family", "creased", "--subdivisions", "1", "--gim-res", "16",
            "--resolution", "32", "--azimuths", "0,90",
            "--threshold", "0.05", "--seed", "0"]


def run(capsys, *argv):
    rc = main(list(argv))
    out = capsys.readouterr().out.strip().splitlines()[-1]
    return rc, json.loads(out)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_corpus")
    rc = main(["gen-data", "--out", str(out)] + GEN_ARGS)
    assert rc == 0
    return str(out)


@pytest.fixture(scope="module")
def param_model(tmp_path_factory, corpus):
    out = tmp_path_factory.mktemp("cli_pmodel")
    rc = main(["train-param", "--dataset", corpus, "--out", str(out),
               "--epochs", "1", "--batch", "4", "--seed", "0"])
    assert rc == 0
    return str(out)


@pytest.fixture(scope="module")
def image_model(tmp_path_factory, corpus):
    out = tmp_path_factory.mktemp("cli_imodel")
    rc = main(["train-img", "--dataset", corpus, "--out", str(out),
               "--epochs", "1", "--batch", "4", "--seed", "0"])
    assert rc == 0
    return str(out)


def test_gen_data_reports_and_resumes(capsys, corpus):
    # identical rerun must be a no-op that replays the recorded summary
    rc, summary = run(capsys, "gen-data", "--out", corpus, *GEN_ARGS)
    assert rc == 0
    assert summary["status"] == "skipped"
    assert summary["metrics"]["samples"] == 8
    assert summary["metrics"]["accepted"] >= 1
    assert summary["metrics"]["max_recon_error"] <= 0.05
    assert os.path.exists(os.path.join(corpus, "manifest.json"))


def test_gen_data_argument_change_invalidates_stamp(capsys, corpus, tmp_path):
    out = tmp_path / "corpus2"
    args = ["gen-data", "--out", str(out)] + GEN_ARGS
    rc, first = run(capsys, *args)
    assert first["status"] == "ok"
    rc, again = run(capsys, *args)
    assert again["status"] == "skipped"
    # different seed -> different digest -> a real rerun
    rc, reseeded = run(capsys, *(args[:-1] + ["7"]))
    assert reseeded["status"] == "ok"


def test_parametrize_writes_positions(capsys, corpus, tmp_path):
    mesh = os.path.join(corpus, "meshes", "s000.obj")
    out = tmp_path / "param.json"
    rc, summary = run(capsys, "parametrize", "--mesh", mesh, "--out", str(out))
    assert rc == 0
    assert summary["metrics"]["flipped_triangles"] == 0
    assert summary["metrics"]["area_distortion"] > 0
    with open(out) as fh:
        doc = json.load(fh)
    assert doc["format"] == "sphereparam-1"
    pos = np.asarray(doc["positions"])
    assert np.allclose(np.linalg.norm(pos, axis=1), 1.0)
    rc, again = run(capsys, "parametrize", "--mesh", mesh, "--out", str(out))
    assert again["status"] == "skipped"


def test_preprocess_produces_a_closed_surface(capsys, corpus, tmp_path):
    mesh = os.path.join(corpus, "meshes", "s001.obj")
    out = tmp_path / "clean.obj"
    rc, summary = run(capsys, "preprocess", "--mesh", mesh,
                      "--out", str(out), "--resolution", "24")
    assert rc == 0
    assert summary["metrics"]["genus"] == 0
    assert summary["metrics"]["euler_characteristic"] == 2
    assert os.path.exists(out)


def test_encode_then_cluster(capsys, corpus, tmp_path):
    desc = tmp_path / "desc.json"
    rc, summary = run(capsys, "encode", "--dataset", corpus,
                      "--out", str(desc), "--samples", "1200")
    assert rc == 0
    assert summary["metrics"]["count"] == 8
    clusters = tmp_path / "clusters.json"
    rc, summary = run(capsys, "cluster", "--descriptors", str(desc),
                      "--k", "2", "--out", str(clusters))
    assert rc == 0
    assert sum(summary["metrics"]["sizes"]) == 8
    with open(clusters) as fh:
        doc = json.load(fh)
    assert doc["format"] == "clusters-1"
    assert doc["base"] in doc["assignments"]


def test_encode_glob_without_matches_fails(capsys, tmp_path):
    rc, summary = run(capsys, "encode", "--meshes",
                      str(tmp_path / "nothing*.obj"),
                      "--out", str(tmp_path / "d.json"))
    assert rc == 1
    assert summary["status"] == "error"
    assert "missing meshes" in summary["error"]


def test_correspond_between_corpus_shapes(capsys, corpus, tmp_path):
    rc, summary = run(
        capsys, "correspond",
        "--source", os.path.join(corpus, "meshes", "s000.obj"),
        "--target", os.path.join(corpus, "meshes", "s001.obj"),
        "--gim-res", "16", "--threshold", "0.05",
        "--out", str(tmp_path / "corr.json"),
        "--gim-out", str(tmp_path / "corr.gim"))
    assert rc == 0
    assert summary["metrics"]["recon_error"] < 0.05
    assert summary["metrics"]["accepted"] is True
    assert os.path.exists(tmp_path / "corr.gim")


def test_train_param_outputs_and_resume(capsys, corpus, param_model):
    for ch in ("x", "y", "z"):
        assert os.path.exists(os.path.join(param_model, "%s.net" % ch))
        assert os.path.exists(os.path.join(param_model, "loss_%s.csv" % ch))
    with open(os.path.join(param_model, "model.json")) as fh:
        model = json.load(fh)
    assert model["kind"] == "param"
    assert model["gim_res"] == 16
    rc, summary = run(capsys, "train-param", "--dataset", corpus,
                      "--out", param_model, "--epochs", "1", "--batch", "4",
                      "--seed", "0")
    assert rc == 0
    assert summary["status"] == "skipped"
    assert set(summary["metrics"]["final_losses"]) == {"x", "y", "z"}


def test_generate_from_param_model(capsys, corpus, param_model, tmp_path):
    out = tmp_path / "gen.obj"
    rc, summary = run(capsys, "generate", "--model", param_model,
                      "--dataset", corpus, "--shape", "2",
                      "--azimuth", "22.5", "--out", str(out),
                      "--gim-out", str(tmp_path / "gen.gim"))
    assert rc == 0
    assert summary["metrics"]["finite"] is True
    assert summary["metrics"]["vertices"] > 0
    assert os.path.exists(out)
    assert os.path.exists(tmp_path / "gen.gim")


def test_generate_param_model_needs_dataset(capsys, param_model, tmp_path):
    rc, summary = run(capsys, "generate", "--model", param_model,
                      "--out", str(tmp_path / "g.obj"))
    assert rc == 1
    assert "missing dataset" in summary["error"]


def test_interpolate_walks_the_code_space(capsys, corpus, param_model,
                                          tmp_path):
    out = tmp_path / "interp"
    rc, summary = run(capsys, "interpolate", "--model", param_model,
                      "--dataset", corpus, "--from-shape", "0",
                      "--to-shape", "7", "--steps", "3", "--out", str(out))
    assert rc == 0
    assert summary["metrics"]["steps"] == 3
    assert len(summary["metrics"]["step_chamfer"]) == 2
    assert summary["metrics"]["endpoint_chamfer"] > 0
    for i in range(3):
        assert os.path.exists(out / ("step_%02d.obj" % i))


def test_export_decodes_stored_images(capsys, corpus, tmp_path):
    out = tmp_path / "objs"
    gim = os.path.join(corpus, "gims", "s000.gim")
    rc, summary = run(capsys, "export", gim, "--out", str(out))
    assert rc == 0
    assert summary["metrics"]["count"] == 1
    assert os.path.exists(out / "s000.obj")


def test_export_missing_image_fails(capsys, tmp_path):
    rc, summary = run(capsys, "export", str(tmp_path / "no.gim"),
                      "--out", str(tmp_path / "objs"))
    assert rc == 1
    assert "missing geometry image" in summary["error"]


def test_generate_from_image_model(capsys, corpus, image_model, tmp_path):
    from gimkit.dataset import load_manifest

    man = load_manifest(corpus)
    depth = os.path.join(corpus, man["samples"][0]["depths"][0])
    out = tmp_path / "img_gen.obj"
    rc, summary = run(capsys, "generate", "--model", image_model,
                      "--depth", depth, "--out", str(out))
    assert rc == 0
    assert summary["metrics"]["finite"] is True
    assert os.path.exists(out)


def test_generate_image_model_needs_depth(capsys, image_model, tmp_path):
    rc, summary = run(capsys, "generate", "--model", image_model,
                      "--out", str(tmp_path / "g.obj"))
    assert rc == 1
    assert "missing depth image" in summary["error"]


def test_interpolate_rejects_image_models(capsys, corpus, image_model,
                                          tmp_path):
    rc, summary = run(capsys, "interpolate", "--model", image_model,
                      "--dataset", corpus, "--from-shape", "0",
                      "--to-shape", "1", "--out", str(tmp_path / "x"))
    assert rc == 1
    assert "parametric model" in summary["error"]


def test_rectify_reports_energy_change(capsys, corpus, image_model,
                                       tmp_path):
    rc, summary = run(capsys, "rectify", "--model", image_model,
                      "--dataset", corpus, "--id", "s000",
                      "--out", str(tmp_path / "fixed.json"))
    assert rc == 0
    m = summary["metrics"]
    assert m["energy_noisy"] > 0
    assert m["energy_rectified"] > 0
    assert isinstance(m["reduction"], float)


def test_rectify_checks_view_index(capsys, corpus, image_model, tmp_path):
    rc, summary = run(capsys, "rectify", "--model", image_model,
                      "--dataset", corpus, "--id", "s000",
                      "--view-index", "9",
                      "--out", str(tmp_path / "fixed.json"))
    assert rc == 1
    assert "missing depth view" in summary["error"]


def test_rectify_rejects_param_models(capsys, corpus, param_model, tmp_path):
    rc, summary = run(capsys, "rectify", "--model", param_model,
                      "--dataset", corpus, "--id", "s000",
                      "--out", str(tmp_path / "fixed.json"))
    assert rc == 1
    assert "image model" in summary["error"]


def test_train_needs_a_dataset(capsys, tmp_path):
    rc, summary = run(capsys, "train-param", "--dataset",
                      str(tmp_path / "nowhere"), "--out",
                      str(tmp_path / "m"))
    assert rc == 1
    assert "missing dataset manifest" in summary["error"]


def test_cluster_needs_descriptors(capsys, tmp_path):
    rc, summary = run(capsys, "cluster", "--descriptors",
                      str(tmp_path / "no.json"), "--k", "2",
                      "--out", str(tmp_path / "c.json"))
    assert rc == 1
    assert "missing descriptor file" in summary["error"]
