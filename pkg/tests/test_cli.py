import csv
import json

import numpy as np
import pytest

from tcn_seg import io
from tcn_seg.cli import main
from tcn_seg.modelfile import load_model

TINY_ED = "model=ed_tcn\nL=2\nd=5\nfilters=8,8\nepochs=3\ndropout=0.0\nseed=1\n"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def tiny_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    assert main(["synth", "--out", str(root), "--num-train", "4", "--num-test", "2", "--seed", "5"]) == 0
    return root


@pytest.fixture()
def tiny_config(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY_ED)
    return path


def test_synth_defaults(tmp_path, capsys):
    code, out, _ = run(capsys, "synth", "--out", tmp_path / "d")
    assert code == 0 and "50 train + 10 test" in out
    manifest = io.read_manifest(tmp_path / "d")
    assert len(manifest.split("train")) == 50 and len(manifest.split("test")) == 10
    assert manifest.feature_dim == 3 and manifest.class_names == ["A1", "A2", "A3", "B", "C"]
    for _, x, y in io.load_split(manifest, "test"):
        assert x.shape == (3, 150) and y.shape == (150,)


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_synth_same_seed_same_files(tmp_path, capsys):
    for name in ("a", "b", "c"):
        seed = 3 if name != "c" else 4
        run(capsys, "synth", "--out", tmp_path / name, "--seed", seed, "--num-train", 5, "--num-test", 2, "--binary")
    assert _tree(tmp_path / "a") == _tree(tmp_path / "b")
    assert _tree(tmp_path / "a") != _tree(tmp_path / "c")


def test_synth_shift(tmp_path, capsys):
    common = ["--seed", 2, "--num-train", 2, "--num-test", 1]
    run(capsys, "synth", "--out", tmp_path / "s0", *common)
    run(capsys, "synth", "--out", tmp_path / "s10", "--spec", "shift", "--shift", 10, *common)
    plain = io.load_split(io.read_manifest(tmp_path / "s0"), "train")
    shifted = io.load_split(io.read_manifest(tmp_path / "s10"), "train")
    for (_, x, y), (_, xs, ys) in zip(plain, shifted):
        np.testing.assert_array_equal(xs[:, 10:], x[:, :-10])
        np.testing.assert_array_equal(ys, y)
    extra = io.read_manifest(tmp_path / "s10").extra
    assert extra["generator"]["shift"] == 10
    assert extra["transitions"]["high_level"]["A"] == {"B": 0.5, "C": 0.5}


def test_synth_errors(tmp_path, capsys):
    code, _, err = run(capsys, "synth", "--out", tmp_path / "x", "--spec", "shift", "--shift", 150)
    assert code == 1 and err.startswith("tcn synth: error:") and err.count("\n") == 1
    code, _, err = run(capsys, "synth", "--out", tmp_path / "x", "--shift", 3)
    assert code == 1 and "--shift" in err


def test_train_writes_loadable_model(tmp_path, tiny_data, tiny_config, capsys):
    out = tmp_path / "m.tcnm"
    code, stdout, _ = run(capsys, "train", "--config", tiny_config, "--data", tiny_data, "--out", out)
    assert code == 0 and "final_loss=" in stdout
    model = load_model(out)
    assert model.spec.filter_duration == 5 and model.metadata["epochs"] == 3
    assert model.metadata["class_names"][0] == "A1"
    log = (tmp_path / "m.tcnm.loss.csv").read_text().splitlines()
    assert log[0] == "epoch,loss" and len(log) == 4


def test_train_is_reproducible(tmp_path, tiny_data, tiny_config, capsys):
    for name in ("a", "b"):
        run(capsys, "train", "--config", tiny_config, "--data", tiny_data, "--out", tmp_path / name)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_train_rejects_zero_epochs(tmp_path, tiny_data, tiny_config, capsys):
    code, _, err = run(capsys, "train", "--config", tiny_config, "--data", tiny_data, "--out", tmp_path / "m", "--epochs", 0)
    assert code != 0 and "epochs" in err
    assert not (tmp_path / "m").exists()


def test_train_bad_config_and_data(tmp_path, tiny_data, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("model=ed_tcn\nlearnig_rate=0.1\n")
    code, _, err = run(capsys, "train", "--config", cfg, "--data", tiny_data, "--out", tmp_path / "m")
    assert code == 1 and "learnig_rate" in err
    cfg.write_text(TINY_ED)
    code, _, err = run(capsys, "train", "--config", cfg, "--data", tmp_path / "nowhere", "--out", tmp_path / "m")
    assert code == 1 and "manifest" in err


def test_predict_then_eval(tmp_path, tiny_data, tiny_config, capsys):
    run(capsys, "train", "--config", tiny_config, "--data", tiny_data, "--out", tmp_path / "m")
    code, _, _ = run(capsys, "predict", "--model", tmp_path / "m", "--data", tiny_data, "--out", tmp_path / "pred")
    assert code == 0
    assert sorted(p.name for p in (tmp_path / "pred").iterdir()) == [
        "test_000.probs.csv", "test_000.txt", "test_001.probs.csv", "test_001.txt",
    ]
    code, out, _ = run(capsys, "eval", "--pred", tmp_path / "pred", "--truth", tiny_data)
    assert code == 0
    assert "map_mid.mean=" in out and "map_mid.max=" in out and "map@50.max=" in out
    report = json.loads((tmp_path / "pred" / "report.json").read_text())
    assert report["num_sequences"] == 2 and set(report["f1"]) == {"10", "25", "50"}


def _write(dirpath, **seqs):
    dirpath.mkdir(parents=True, exist_ok=True)
    for sid, labels in seqs.items():
        io.write_labels(labels, dirpath / f"{sid}.txt")


def test_eval_perfect(tmp_path, capsys):
    labels = [0, 0, 1, 1, 1, 2, 0]
    _write(tmp_path / "t", s1=labels, s2=[1, 1, 2])
    _write(tmp_path / "p", s1=labels, s2=[1, 1, 2])
    code, out, _ = run(capsys, "eval", "--pred", tmp_path / "p", "--truth", tmp_path / "t")
    assert code == 0
    report = json.loads((tmp_path / "p" / "report.json").read_text())
    assert report["accuracy"] == report["edit"] == 100.0
    assert set(report["f1"].values()) == {100.0}
    assert "accuracy=100.0000" in out


def test_eval_hand_case(tmp_path, capsys):
    # one true positive per class plus one spurious segment: TP=2, FP=1, FN=0
    _write(tmp_path / "t", s=[0] * 10 + [1] * 10)
    _write(tmp_path / "p", s=[0] * 5 + [2] * 5 + [1] * 10)
    code, out, _ = run(capsys, "eval", "--pred", tmp_path / "p", "--truth", tmp_path / "t", "--tau", "50")
    assert code == 0 and "f1@50=80.0000" in out


def test_eval_confidence_policies_differ(tmp_path, capsys):
    _write(tmp_path / "t", s=[0] * 10 + [1] * 10)
    _write(tmp_path / "p", s=[0] * 10 + [1] * 5 + [0] * 5)
    p0 = np.array([0.6] * 10 + [0.2] * 5 + [0.3, 0.3, 0.3, 0.3, 0.9])
    io.write_features(np.stack([p0, 1 - p0]), tmp_path / "p" / "s.probs.csv")
    run(capsys, "eval", "--pred", tmp_path / "p", "--truth", tmp_path / "t", "--tau", "50")
    report = json.loads((tmp_path / "p" / "report.json").read_text())
    assert report["map_iou"]["mean"]["50"] != report["map_iou"]["max"]["50"]


def test_eval_mismatches(tmp_path, capsys):
    _write(tmp_path / "t", s=[0, 0, 1])
    _write(tmp_path / "p", s=[0, 0])
    code, _, err = run(capsys, "eval", "--pred", tmp_path / "p", "--truth", tmp_path / "t")
    assert code == 1 and err.startswith("tcn eval: error:")
    _write(tmp_path / "t", other=[1])
    code, _, err = run(capsys, "eval", "--pred", tmp_path / "p", "--truth", tmp_path / "t")
    assert code == 1 and "other" in err


@pytest.mark.parametrize(
    "argv, expected",
    [
        (["--model", "ed", "--d", 1, "--L", 1], 2),
        (["--model", "ed", "--d", 15, "--L", 2], 46),
        (["--model", "ed", "--d", 2, "--L", 3], 15),
        (["--model", "dilated", "--B", 4, "--L", 5], 128),
        (["--model", "dilated", "--B", 3, "--L", 5], 96),
        (["--model", "dilated", "--B", 1, "--L", 1], 2),
    ],
)
def test_rf(capsys, argv, expected):
    code, out, _ = run(capsys, "rf", *argv)
    assert code == 0 and out.strip() == str(expected)


def _sweep(capsys, tmp_path, tiny_data, tiny_config, values, name):
    out = tmp_path / name
    code, _, _ = run(
        capsys, "sweep", "--param", "d", "--values", values, "--config", tiny_config,
        "--data", tiny_data, "--epochs", 2, "--out", out,
    )
    assert code == 0
    return out.read_text()


def test_sweep_rows_and_determinism(tmp_path, tiny_data, tiny_config, capsys, monkeypatch):
    monkeypatch.setenv("TCN_THREADS", "1")
    first = _sweep(capsys, tmp_path, tiny_data, tiny_config, "1,5,10", "a.csv")
    second = _sweep(capsys, tmp_path, tiny_data, tiny_config, "1,5,10", "b.csv")
    assert first == second
    rows = list(csv.DictReader(first.splitlines()))
    assert [r["d"] for r in rows] == ["1", "5", "10"]
    assert all(r["status"] == "ok" for r in rows)
    rfs = [int(r["rf"]) for r in rows]
    assert rfs == sorted(rfs) and len(set(rfs)) == 3
    assert first.splitlines()[0] == "d,rf,f1@25,accuracy,status"


def test_sweep_records_failures(tmp_path, tiny_data, tiny_config, capsys, monkeypatch):
    monkeypatch.setenv("TCN_THREADS", "1")
    rows = list(csv.DictReader(_sweep(capsys, tmp_path, tiny_data, tiny_config, "0,3", "c.csv").splitlines()))
    assert rows[0]["status"].startswith("error:")
    assert rows[1]["status"] == "ok" and rows[1]["f1@25"]


def test_sweep_parallel_matches_serial(tmp_path, tiny_data, tiny_config, capsys, monkeypatch):
    monkeypatch.setenv("TCN_THREADS", "1")
    serial = _sweep(capsys, tmp_path, tiny_data, tiny_config, "2,3", "s.csv")
    monkeypatch.setenv("TCN_THREADS", "2")
    parallel = _sweep(capsys, tmp_path, tiny_data, tiny_config, "2,3", "p.csv")
    assert serial == parallel


def test_timeline_svg_and_text(tmp_path, capsys):
    _write(tmp_path, truth=[0] * 5 + [1] * 5, same=[0] * 5 + [1] * 5, over=[0, 1] * 5)
    svg = tmp_path / "t.svg"
    args = ["timeline", "--truth", tmp_path / "truth.txt", "--pred", tmp_path / "same.txt", tmp_path / "over.txt"]
    assert run(capsys, *args, "--out", svg)[0] == 0
    first = svg.read_bytes()
    run(capsys, *args, "--out", svg)
    assert svg.read_bytes() == first
    text = first.decode()
    assert text.count('class="seg"') == 2 + 2 + 10
    assert run(capsys, *args, "--out", tmp_path / "t.txt")[0] == 0
    assert (tmp_path / "t.txt").read_text().splitlines()[0] == "truth |0000011111|"


def test_timeline_errors(tmp_path, capsys):
    _write(tmp_path, truth=[0] * 5, short=[0] * 4)
    code, _, err = run(capsys, "timeline", "--truth", tmp_path / "truth.txt", "--pred", tmp_path / "short.txt", "--out", tmp_path / "x.svg")
    assert code == 1 and "length" in err
    code, _, err = run(capsys, "timeline", "--truth", tmp_path / "truth.txt", "--pred", tmp_path / "truth.txt", "--out", tmp_path / "x.png")
    assert code == 1 and ".svg" in err
