import json
from pathlib import Path

import numpy as np
import pytest

from netsense.cli import main
from netsense.nn import load_network

SYNTH = ["--synthetic"]


@pytest.fixture
def checkpoint(tmp_path):
    out = tmp_path / "net.bin"
    code = main(["train", *SYNTH, "--width", "16", "--depth", "2", "--steps", "200", "--batch-size", "40",
                 "--out", str(out), "--summary", str(tmp_path / "s.json")])
    assert code == 0
    return out


def test_train_writes_checkpoint_and_summary(checkpoint, tmp_path):
    net = load_network(checkpoint)
    assert net.widths == (16, 16, 16, 10)
    summary = json.loads((tmp_path / "s.json").read_text())
    assert summary["generalization_gap"] == summary["train_accuracy"] - summary["test_accuracy"]


def test_train_config_file(tmp_path):
    cfg = tmp_path / "t.yaml"
    cfg.write_text("network:\n  width: 8\n  depth: 1\noptimizer:\n  kind: adam\n  learning_rate: 0.001\n  total_steps: 5\n")
    assert main(["train", *SYNTH, "--config", str(cfg), "--out", str(tmp_path / "n.bin")]) == 0
    assert load_network(tmp_path / "n.bin").widths == (16, 8, 10)


def test_train_config_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "t.yaml"
    cfg.write_text("optimizer:\n  momentum: 0.5\n")
    assert main(["train", *SYNTH, "--config", str(cfg), "--out", str(tmp_path / "n.bin")]) == 2
    assert "optimizer.momentum" in capsys.readouterr().err


@pytest.mark.parametrize(
    "metric, extra, header",
    [
        ("jacobian", ["--count", "5"], "point_id,jacobian_norm"),
        ("transitions", ["--trajectory", "random-ellipse", "--k", "60", "--count", "2"], "trajectory_id,k,transitions"),
        ("curvature", ["--trajectory", "data-ellipse", "--k", "60", "--count", "2"], "trajectory_id,k,curvature"),
        ("profile", ["--trajectory", "translation", "--k", "32", "--window", "8"],
         "index,bucket,jacobian_norm,transitions_to_next"),
        ("boundary", ["--resolution", "6"], "row,col,u,v,label,boundary"),
    ],
)
def test_measure(checkpoint, tmp_path, metric, extra, header):
    out = tmp_path / f"{metric}.csv"
    assert main(["measure", *SYNTH, "--checkpoint", str(checkpoint), "--metric", metric, *extra, "--out", str(out)]) == 0
    lines = [l for l in out.read_text().splitlines() if not l.startswith("#")]
    assert lines[0] == header and len(lines) > 1


def test_bounds(checkpoint, tmp_path):
    out = tmp_path / "b.csv"
    assert main(["bounds", *SYNTH, "--checkpoint", str(checkpoint), "--count", "30", "--out", str(out)]) == 0
    lines = [l for l in out.read_text().splitlines() if not l.startswith("#")]
    assert lines[0].startswith("point_id,loss,jy_actual,full_actual,jy_lower,jy_upper,full_lower,full_approx,M,n")
    assert len(lines) == 31


@pytest.mark.parametrize("kind, k", [("random-ellipse", 12), ("data-ellipse", 12), ("translation", 16)])
def test_trajectory_outputs(tmp_path, kind, k):
    npy = tmp_path / "t.npy"
    assert main(["trajectory", *SYNTH, "--kind", kind, "--k", str(k), "--out", str(npy)]) == 0
    assert np.load(npy).shape == (k, 16)
    txt = tmp_path / "t.csv"
    assert main(["trajectory", *SYNTH, "--kind", kind, "--k", str(k), "--out", str(txt)]) == 0
    np.testing.assert_array_equal(np.loadtxt(txt, delimiter=","), np.load(npy))


def test_study(tmp_path, capsys):
    cfg = tmp_path / "s.yaml"
    cfg.write_text(
        "kind: sweep\ndataset: {source: synthetic, n_per_class: 10}\n"
        "network: {width: [8], depth: [1], activation: [relu]}\noptimizer: {total_steps: 20}\n"
        "measure: {jacobian_points: 5, transition_points: 1, translation_k: 16}\nseeds: [1, 2]\n"
    )
    out = tmp_path / "sweep.csv"
    assert main(["study", "sweep", "--config", str(cfg), "--seed", "3", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 2 and lines[1].split(",")[9] == "3"
    assert main(["study", "paired", "--config", str(cfg)]) == 2
    assert "kind" in capsys.readouterr().err


def test_missing_idx_paths(tmp_path, capsys):
    assert main(["trajectory", "--out", str(tmp_path / "x.csv")]) == 2
    assert "idx source" in capsys.readouterr().err


def test_mnist_idx_flags(mnist_paths, tmp_path):
    flags = ["--train-images", mnist_paths["train_images"], "--train-labels", mnist_paths["train_labels"],
             "--test-images", mnist_paths["test_images"], "--test-labels", mnist_paths["test_labels"],
             "--n-train", "200", "--n-test", "50"]
    out = tmp_path / "t.csv"
    assert main(["trajectory", *flags, "--kind", "translation", "--k", "56", "--out", str(out)]) == 0
    pts = np.loadtxt(out, delimiter=",")
    assert pts.shape == (56, 784)
    np.testing.assert_allclose(np.linalg.norm(pts[::2], axis=1), 28.0, rtol=1e-12)
