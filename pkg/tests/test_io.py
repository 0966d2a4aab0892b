import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tcn_seg import io
from tcn_seg.errors import ConfigError, DataError, ParseError
from tcn_seg.models import DilatedTCNSpec, EDTCNSpec


def test_csv_example(tmp_path):
    path = tmp_path / "f.csv"
    path.write_text("1,2\n3,4\n")
    x = io.read_features(path)
    assert x.shape == (2, 2)
    np.testing.assert_array_equal(x.T, [[1, 2], [3, 4]])


def test_csv_round_trip_is_value_exact(tmp_path):
    x = np.random.default_rng(0).normal(size=(4, 9))
    io.write_features(x, tmp_path / "f.csv")
    np.testing.assert_array_equal(io.read_features(tmp_path / "f.csv"), x)


def test_binary_round_trip_is_bit_exact(tmp_path):
    x = np.random.default_rng(1).normal(size=(5, 17)).astype(np.float32)
    path = tmp_path / "f.bin"
    io.write_features(x, path)
    blob = path.read_bytes()
    assert blob[:4] == b"TCNF" and len(blob) == 16 + 4 * 5 * 17
    y = io.read_features(path)
    assert y.dtype == np.float32 and y.tobytes() == x.tobytes()


def test_format_detected_by_magic_not_suffix(tmp_path):
    x = np.arange(6, dtype=np.float32).reshape(2, 3)
    io.write_features(x, tmp_path / "f.csv", binary=True)
    np.testing.assert_array_equal(io.read_features(tmp_path / "f.csv"), x)


def test_wrong_arity_names_the_row(tmp_path):
    path = tmp_path / "f.csv"
    path.write_text("1,2\n3,4\n5\n")
    with pytest.raises(ParseError) as err:
        io.read_features(path)
    assert err.value.location == "line 3"
    assert "line 3" in str(err.value)


def test_non_numeric_cell(tmp_path):
    path = tmp_path / "f.csv"
    path.write_text("1,2\n3,x\n")
    with pytest.raises(ParseError, match="line 2"):
        io.read_features(path)


def test_truncated_blob_reports_byte_offset(tmp_path):
    path = tmp_path / "f.bin"
    io.write_features(np.ones((2, 4), np.float32), path)
    path.write_bytes(path.read_bytes()[:-6])
    with pytest.raises(ParseError) as err:
        io.read_features(path)
    assert err.value.location.startswith("byte ")
    path.write_bytes(b"TCNF\x01")
    with pytest.raises(ParseError, match="byte 5"):
        io.read_features(path)


def test_bad_version(tmp_path):
    path = tmp_path / "f.bin"
    io.write_features(np.ones((1, 1), np.float32), path)
    blob = bytearray(path.read_bytes())
    blob[4] = 9
    path.write_bytes(bytes(blob))
    with pytest.raises(ParseError, match="version"):
        io.read_features(path)


def test_labels_example(tmp_path):
    path = tmp_path / "l.txt"
    path.write_text("0\n0\n2\n")
    assert io.read_labels(path).tolist() == [0, 0, 2]


def test_empty_labels(tmp_path):
    path = tmp_path / "l.txt"
    path.write_text("")
    assert io.read_labels(path).size == 0


def test_non_integer_label(tmp_path):
    path = tmp_path / "l.txt"
    path.write_text("0\n1.5\n")
    with pytest.raises(ParseError, match="line 2"):
        io.read_labels(path)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 40), max_size=60))
def test_labels_round_trip(tmp_path_factory, labels):
    path = tmp_path_factory.mktemp("labels") / "l.txt"
    io.write_labels(labels, path)
    assert io.read_labels(path).tolist() == labels


def test_minimal_config_fills_defaults(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# tiny run\nmodel=ed_tcn\nL=3\nd=15\n")
    cfg = io.read_config(path)
    spec = cfg.model_spec(num_classes=5, input_dim=3)
    assert isinstance(spec, EDTCNSpec)
    assert spec.num_layers == 3 and spec.filter_duration == 15
    assert spec.activation == "normalized_relu" and not spec.causal
    assert cfg.tau == (0.1, 0.25, 0.5)
    assert cfg.epochs == 200 and cfg.learning_rate == 1e-3 and cfg.dropout == 0.3
    assert cfg.ignore_classes == ()


def test_dilated_config_defaults():
    spec = io.parse_config("model=dilated_tcn\n").model_spec(4, 2)
    assert isinstance(spec, DilatedTCNSpec)
    assert (spec.num_blocks, spec.layers_per_block, spec.width) == (4, 5, 128)
    assert spec.activation == "gated"


def test_tau_percentages():
    cfg = io.parse_config('model=ed_tcn\ntau="10,25,50"\n')
    assert cfg.tau == pytest.approx((0.10, 0.25, 0.50))


def test_unknown_key_is_named():
    with pytest.raises(ConfigError, match="learnig_rate"):
        io.parse_config("model=ed_tcn\nlearnig_rate=0.01\n")


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("L=2\n", "model"),
        ("model=ed_tcn\nmodel=ed_tcn\n", "duplicate"),
        ("model=ed_tcn\nepochs=many\n", "epochs"),
        ("model=ed_tcn\ntau=0\n", "tau"),
        ("model=ed_tcn\ntau=150\n", "tau"),
        ("model=ed_tcn\nepochs=0\n", "epochs"),
        ("model=lstm\n", "model"),
        ("model=ed_tcn\nlearning_rate=nan\n", "learning_rate"),
    ],
)
def test_bad_configs(text, fragment):
    with pytest.raises((ConfigError, ParseError), match=fragment):
        io.parse_config(text)


def test_line_without_equals():
    with pytest.raises(ParseError, match="line 2"):
        io.parse_config("model=ed_tcn\nnonsense\n")


def test_config_format_round_trip():
    cfg = io.parse_config("model=dilated_tcn\nB=2\nL=3\nwidth=32\ncausal=true\ntau=10,50\nbackground_id=0\n")
    assert io.parse_config(io.format_config(cfg)) == cfg
    assert cfg.ignore_classes == (0,)


def _small_dataset(root, binary=False):
    rng = np.random.default_rng(2)
    train = [(rng.normal(size=(3, 7)), rng.integers(0, 4, 7)) for _ in range(2)]
    test = [(rng.normal(size=(3, 5)), rng.integers(0, 4, 5))]
    return io.write_dataset(root, train, test, ["a", "b", "c", "d"], binary=binary), train, test


@pytest.mark.parametrize("binary", [False, True])
def test_dataset_round_trip(tmp_path, binary):
    _, train, test = _small_dataset(tmp_path, binary)
    manifest = io.read_manifest(tmp_path)
    assert manifest.feature_dim == 3 and manifest.num_classes == 4
    loaded = io.load_split(manifest, "train")
    assert [sid for sid, _, _ in loaded] == ["train_000", "train_001"]
    for (_, x, y), (x0, y0) in zip(loaded, train):
        np.testing.assert_allclose(x, x0, rtol=1e-6 if binary else 0)
        np.testing.assert_array_equal(y, y0)
    assert len(io.load_split(manifest, "test")) == len(test)


def test_manifest_missing_file(tmp_path):
    _small_dataset(tmp_path)
    (tmp_path / "labels" / "test_000.txt").unlink()
    with pytest.raises(DataError, match="missing"):
        io.read_manifest(tmp_path)


def test_manifest_bad_split(tmp_path):
    _small_dataset(tmp_path)
    doc = json.loads((tmp_path / io.MANIFEST_NAME).read_text())
    doc["sequences"][0]["split"] = "dev"
    (tmp_path / io.MANIFEST_NAME).write_text(json.dumps(doc))
    with pytest.raises(DataError, match="split"):
        io.read_manifest(tmp_path)


def test_manifest_disagreements(tmp_path):
    _small_dataset(tmp_path)
    io.write_labels([0, 1], tmp_path / "labels" / "test_000.txt")
    with pytest.raises(DataError, match="labels for"):
        io.load_split(io.read_manifest(tmp_path), "test")
    io.write_labels([0, 1, 2, 3, 9], tmp_path / "labels" / "test_000.txt")
    with pytest.raises(DataError, match="outside"):
        io.load_split(io.read_manifest(tmp_path), "test")
    io.write_features(np.zeros((2, 5)), tmp_path / "features" / "test_000.csv")
    with pytest.raises(DataError, match="channels"):
        io.load_split(io.read_manifest(tmp_path), "test")


def test_manifest_not_json(tmp_path):
    (tmp_path / io.MANIFEST_NAME).write_text("{\n oops")
    with pytest.raises(ParseError, match="line"):
        io.read_manifest(tmp_path)
