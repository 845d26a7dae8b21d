import json
import os

import numpy as np
import pytest

from hralign.cli import cli_main


def run(argv):
    return cli_main(argv)


def test_help_exits_zero(capsys):
    assert run(["--help"]) == 0
    assert run(["adapt", "--help"]) == 0
    out = capsys.readouterr().out
    assert "usage" in out.lower()


def test_unknown_subcommand_exits_one():
    assert run(["frobnicate"]) == 1


def test_unknown_flag_exits_one():
    assert run(["generate", "--no-such-flag"]) == 1


def test_missing_config_exits_one_naming_path(tmp_path, capsys):
    data = str(tmp_path / "data")
    assert run(["generate", "--out", data, "--tasks", "2", "--pairs-per-task", "2"]) == 0
    code = run(
        [
            "adapt",
            "--config",
            "/nonexistent/config.txt",
            "--data",
            os.path.join(data, "manifest.json"),
            "--backbone",
            "whatever.ckpt",
        ]
    )
    assert code == 1
    assert "/nonexistent/config.txt" in capsys.readouterr().err


def test_bad_manifest_exits_two(tmp_path, capsys):
    out = str(tmp_path / "pre")
    code = run(["pretrain", "--data", str(tmp_path / "missing.json"), "--out", out])
    assert code == 2
    assert "manifest" in capsys.readouterr().err


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Tiny end-to-end pipeline: generate -> pretrain -> adapt."""
    root = tmp_path_factory.mktemp("pipeline")
    data = str(root / "data")
    pre = str(root / "pretrain")
    adapt = str(root / "adapt")
    assert (
        run(
            [
                "generate",
                "--out",
                data,
                "--tasks",
                "3",
                "--pairs-per-task",
                "8",
                "--gap",
                "0.6",
                "--seed",
                "11",
            ]
        )
        == 0
    )
    manifest = os.path.join(data, "manifest.json")
    assert run(["pretrain", "--data", manifest, "--out", pre, "--epochs", "2", "--seed", "11"]) == 0
    backbone = os.path.join(pre, "backbone.ckpt")
    assert (
        run(
            [
                "adapt",
                "--data",
                manifest,
                "--backbone",
                backbone,
                "--out",
                adapt,
                "--set",
                "steps=6",
                "--set",
                "batch_size=4",
                "--set",
                "seed=11",
            ]
        )
        == 0
    )
    return root, manifest, backbone, os.path.join(adapt, "model.ckpt")


def test_pipeline_artifacts_present(pipeline):
    root, manifest, backbone, model = pipeline
    for path in (manifest, backbone, model):
        assert os.path.exists(path), path
    for run_dir in (os.path.dirname(backbone), os.path.dirname(model)):
        assert os.path.exists(os.path.join(run_dir, "resolved_config.txt"))
        files = json.load(open(os.path.join(run_dir, "files.json")))
        assert "resolved_config.txt" in files["produced"]
    metrics = open(os.path.join(os.path.dirname(model), "metrics.csv")).read()
    assert metrics.splitlines()[0] == "step,loss,pos_sim,hard_neg_sim,wall_ms"
    assert len(metrics.splitlines()) == 7  # header + 6 steps


def test_cli_eval_and_dump(pipeline, tmp_path):
    root, manifest, backbone, model = pipeline
    eval_dir = str(tmp_path / "eval")
    assert run(["eval", "--checkpoint", model, "--data", manifest, "--out", eval_dir]) == 0
    report = json.load(open(os.path.join(eval_dir, "report.json")))
    assert "retrieval" in report and "downstream" in report
    assert 0.0 <= report["retrieval"]["r2h_recall1"] <= 1.0
    assert os.path.exists(os.path.join(eval_dir, "report.txt"))

    dump_path = str(tmp_path / "emb.csv")
    assert run(["dump", "--checkpoint", model, "--data", manifest, "--out", dump_path]) == 0
    lines = open(dump_path).read().splitlines()
    assert len(lines) == 1 + 2 * 24  # header + human+robot clips of 24 pairs


def test_cli_eval_frozen_mode(pipeline, tmp_path):
    root, manifest, backbone, model = pipeline
    eval_dir = str(tmp_path / "eval-frozen")
    assert (
        run(["eval", "--checkpoint", model, "--data", manifest, "--out", eval_dir, "--frozen"]) == 0
    )
    report = json.load(open(os.path.join(eval_dir, "report.json")))
    assert report["retrieval"]["tag"] == "frozen"


def test_cli_baseline(pipeline, tmp_path):
    root, manifest, backbone, model = pipeline
    out = str(tmp_path / "baseline")
    code = run(
        [
            "baseline",
            "cls",
            "--data",
            manifest,
            "--backbone",
            backbone,
            "--out",
            out,
            "--set",
            "steps=4",
            "--set",
            "batch_size=4",
            "--set",
            "learning_rate=3e-4",
        ]
    )
    assert code == 0
    assert os.path.exists(os.path.join(out, "model.ckpt"))


def test_cli_resume_matches_straight_run(pipeline, tmp_path):
    root, manifest, backbone, _ = pipeline
    a = str(tmp_path / "a")
    b = str(tmp_path / "b")
    c = str(tmp_path / "c")
    common = ["--data", manifest, "--backbone", backbone, "--set", "batch_size=4", "--set", "seed=11"]
    assert run(["adapt", *common, "--out", a, "--set", "steps=6"]) == 0
    assert run(["adapt", *common, "--out", b, "--set", "steps=3"]) == 0
    assert (
        run(
            [
                "adapt",
                *common,
                "--out",
                c,
                "--set",
                "steps=6",
                "--resume",
                os.path.join(b, "model.ckpt"),
            ]
        )
        == 0
    )
    # headers differ in out_dir only; compare the trajectory-relevant state
    from hralign.trainer import ModelCheckpoint

    direct = ModelCheckpoint.load(os.path.join(a, "model.ckpt"))
    resumed = ModelCheckpoint.load(os.path.join(c, "model.ckpt"))
    assert direct.rng.state() == resumed.rng.state()
    assert direct.adam.step == resumed.adam.step
    for name, tensor in direct.named_tensors().items():
        assert np.array_equal(tensor.data, resumed.named_tensors()[name].data), name
    for name in direct.adam.m:
        assert np.array_equal(direct.adam.m[name], resumed.adam.m[name])
