"""End-to-end CLI: subcommands, exit codes, run-directory layout."""

import json

import numpy as np
import pytest

from cogfatigue.cli import run
from cogfatigue.nifti import load_nifti

TINY_INI = """
[run]
seed = 5

[synth]
n_per_class = 2
shape = 12, 4, 16, 16
roi_radius_vox = 1.5
noise_sigma = 0.1
seed = 13

[augment]
crop_len = 6

[encoder]
conv_channels = 4, 4, 8
lstm_hidden = 8
embed_dim = 4
input_depth = 4
input_hw = 16, 16

[pretrain]
batch_size = 4
queue_size = 8
epochs = 1

[finetune]
epochs = 2
"""


@pytest.fixture(scope="module")
def ini(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.ini"
    path.write_text(TINY_INI, encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def synth_run(tmp_path_factory, ini):
    out = tmp_path_factory.mktemp("cli-synth")
    assert run(["synth", "--config", str(ini), "--out", str(out)]) == 0
    return out


def test_synth_layout(synth_run):
    assert (synth_run / "config.resolved").is_file()
    assert (synth_run / "log.jsonl").is_file()
    manifest = synth_run / "dataset" / "manifest.tsv"
    assert manifest.is_file()
    assert len(list((synth_run / "dataset").glob("*.nii"))) == 12


def test_synth_reproducible_from_resolved_config(synth_run, tmp_path):
    resolved = synth_run / "config.resolved"
    out2 = tmp_path / "again"
    assert run(["synth", "--config", str(resolved), "--out", str(out2)]) == 0
    for scan in sorted((synth_run / "dataset").glob("*.nii")):
        assert scan.read_bytes() == (out2 / "dataset" / scan.name).read_bytes()


def test_unknown_flag_exits_2(capsys):
    assert run(["synth", "--out", "x", "--frobnicate"]) == 2
    assert "usage" in capsys.readouterr().err.lower()


def test_unknown_subcommand_exits_2():
    assert run(["transmogrify"]) == 2


def test_bad_config_key_exits_2(tmp_path, capsys):
    code = run(["synth", "--out", str(tmp_path / "o"), "--set", "pretrain.temprature=0.2"])
    assert code == 2
    assert "temprature" in capsys.readouterr().err


def test_missing_config_file_exits_2(tmp_path):
    assert run(["synth", "--out", str(tmp_path / "o"), "--config", str(tmp_path / "nope.ini")]) == 2


def test_evaluate_missing_model_exits_2(tmp_path, synth_run):
    code = run(
        [
            "evaluate",
            "--data",
            str(synth_run / "dataset" / "manifest.tsv"),
            "--model",
            str(tmp_path / "no-such-ckpt"),
            "--out",
            str(tmp_path / "o"),
        ]
    )
    assert code == 2


def test_augment_preview(tmp_path, ini, synth_run):
    scan = next((synth_run / "dataset").glob("*.nii"))
    out = tmp_path / "prev"
    assert run(["augment-preview", "--config", str(ini), "--scan", str(scan), "--out", str(out)]) == 0
    a = load_nifti(out / "view_a.nii")
    b = load_nifti(out / "view_b.nii")
    assert a.data.shape == (6, 4, 16, 16)
    assert b.data.shape == (6, 4, 16, 16)
    assert not np.array_equal(a.data, b.data)


def test_preprocess(tmp_path, ini, synth_run):
    out = tmp_path / "pre"
    code = run(
        [
            "preprocess",
            "--config",
            str(ini),
            "--data",
            str(synth_run / "dataset" / "manifest.tsv"),
            "--out",
            str(out),
        ]
    )
    assert code == 0
    manifest = out / "preprocessed" / "manifest.tsv"
    assert manifest.is_file()
    vs = load_nifti(next((out / "preprocessed").glob("*.nii")))
    assert abs(vs.data.mean(axis=0)).max() < 1e-4  # z-normalized


@pytest.fixture(scope="module")
def pretrain_run(tmp_path_factory, ini, synth_run):
    out = tmp_path_factory.mktemp("cli-pretrain")
    code = run(
        [
            "pretrain",
            "--config",
            str(ini),
            "--data",
            str(synth_run / "dataset" / "manifest.tsv"),
            "--out",
            str(out),
        ]
    )
    assert code == 0
    return out


def test_pretrain_checkpoint_present(pretrain_run):
    assert (pretrain_run / "checkpoints" / "epoch_0000" / "meta").is_file()
    entries = [json.loads(l) for l in (pretrain_run / "log.jsonl").read_text().splitlines()]
    assert any("loss" in e for e in entries)


def test_pretrain_from_directory_of_scans(tmp_path, ini, synth_run):
    out = tmp_path / "dirrun"
    code = run(
        [
            "pretrain",
            "--config",
            str(ini),
            "--data",
            str(synth_run / "dataset"),
            "--out",
            str(out),
        ]
    )
    assert code == 0
    assert (out / "checkpoints" / "epoch_0000").is_dir()


@pytest.fixture(scope="module")
def finetune_run(tmp_path_factory, ini, synth_run, pretrain_run):
    out = tmp_path_factory.mktemp("cli-finetune")
    code = run(
        [
            "finetune",
            "--config",
            str(ini),
            "--data",
            str(synth_run / "dataset" / "manifest.tsv"),
            "--checkpoint",
            str(pretrain_run / "checkpoints" / "epoch_0000"),
            "--out",
            str(out),
        ]
    )
    assert code == 0
    return out


def test_finetune_outputs(finetune_run):
    assert (finetune_run / "checkpoints" / "classifier" / "meta").is_file()
    reports = finetune_run / "reports"
    assert (reports / "metrics.json").is_file()
    assert (reports / "confusion_matrix.csv").is_file()
    assert (reports / "training_curve.csv").is_file()
    assert (reports / "score_histogram.csv").is_file()
    doc = json.loads((reports / "metrics.json").read_text())
    assert sum(sum(row) for row in doc["confusion"]) == doc["n"]


def test_evaluate_saved_model(tmp_path, ini, synth_run, finetune_run):
    out = tmp_path / "eval"
    code = run(
        [
            "evaluate",
            "--config",
            str(ini),
            "--data",
            str(synth_run / "dataset" / "manifest.tsv"),
            "--model",
            str(finetune_run / "checkpoints" / "classifier"),
            "--out",
            str(out),
        ]
    )
    assert code == 0
    doc = json.loads((out / "reports" / "metrics.json").read_text())
    assert doc["n"] == 12


def test_report_regeneration(tmp_path, finetune_run, synth_run):
    out = tmp_path / "rep"
    code = run(
        [
            "report",
            "--metrics",
            str(finetune_run / "reports" / "metrics.json"),
            "--data",
            str(synth_run / "dataset" / "manifest.tsv"),
            "--out",
            str(out),
        ]
    )
    assert code == 0
    assert (out / "reports" / "confusion_matrix.csv").read_bytes() == (
        finetune_run / "reports" / "confusion_matrix.csv"
    ).read_bytes()


def test_crossval(tmp_path, ini, synth_run):
    out = tmp_path / "cv"
    code = run(
        [
            "crossval",
            "--config",
            str(ini),
            "--data",
            str(synth_run / "dataset" / "manifest.tsv"),
            "--out",
            str(out),
            "--folds",
            "2",
            "--set",
            "finetune.epochs=1",
        ]
    )
    assert code == 0
    doc = json.loads((out / "reports" / "crossval.json").read_text())
    assert "±" in doc["summary"]
    assert (out / "reports" / "fold_0" / "metrics.json").is_file()
    assert (out / "reports" / "fold_1" / "metrics.json").is_file()


def test_seed_flag_overrides_config(tmp_path, ini, synth_run):
    out = tmp_path / "seeded"
    assert (
        run(
            [
                "augment-preview",
                "--config",
                str(ini),
                "--scan",
                str(next((synth_run / "dataset").glob("*.nii"))),
                "--out",
                str(out),
                "--seed",
                "99",
            ]
        )
        == 0
    )
    resolved = (out / "config.resolved").read_text()
    assert "seed = 99" in resolved


def test_runtime_failure_exits_1(tmp_path, synth_run, capsys):
    # manifest whose records have no labels -> evaluation is impossible
    scan = next((synth_run / "dataset").glob("*.nii"))
    manifest = tmp_path / "unlabeled.tsv"
    manifest.write_text(f"{scan}\tsub-x\t-\t-\t0\t-\n", encoding="utf-8")
    code = run(
        [
            "crossval",
            "--data",
            str(manifest),
            "--out",
            str(tmp_path / "o"),
            "--folds",
            "2",
        ]
    )
    assert code == 1
    assert "error" in capsys.readouterr().err.lower()


def test_relative_out_dirs_chain(tmp_path, monkeypatch, ini):
    # regression: manifests written under a relative --out must feed the next stage
    monkeypatch.chdir(tmp_path)
    assert run(["synth", "--config", str(ini), "--out", "data"]) == 0
    manifest = tmp_path / "data" / "dataset" / "manifest.tsv"
    assert manifest.is_file()
    body = manifest.read_text()
    assert "data/dataset" not in body  # paths stored relative to the manifest dir
    code = run(
        [
            "pretrain",
            "--config",
            str(ini),
            "--data",
            "data/dataset/manifest.tsv",
            "--out",
            "moco",
        ]
    )
    assert code == 0
    assert (tmp_path / "moco" / "checkpoints" / "epoch_0000").is_dir()
