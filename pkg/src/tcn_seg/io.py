"""File formats: features, labels, dataset manifests and run configs.

Byte-level layouts are documented in ``docs/formats.md``.
"""
import json
import math
import struct
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ParseError
from .models import DilatedTCNSpec, EDTCNSpec, TrainConfig

FEATURE_MAGIC = b"TCNF"
FEATURE_VERSION = 1
_FEATURE_HEADER = struct.Struct("<4sIII")
MANIFEST_NAME = "manifest.json"


# --------------------------------------------------------------------------
# features


def _read_feature_csv(path, text):
    rows, width = [], None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        cells = line.split(",")
        if width is None:
            width = len(cells)
        elif len(cells) != width:
            raise ParseError(f"row has {len(cells)} values, expected {width}", f"line {lineno}", path)
        try:
            rows.append([float(c) for c in cells])
        except ValueError:
            raise ParseError(f"non-numeric value in row {line!r}", f"line {lineno}", path) from None
    if not rows:
        raise ParseError("no frames in feature file", "line 1", path)
    return np.asarray(rows, dtype=np.float64).T.copy()


def _read_feature_bin(path, blob):
    if len(blob) < _FEATURE_HEADER.size:
        raise ParseError("truncated header", f"byte {len(blob)}", path)
    _, version, dim, frames = _FEATURE_HEADER.unpack_from(blob)
    if version != FEATURE_VERSION:
        raise ParseError(f"unsupported feature format version {version}", "byte 4", path)
    expected = _FEATURE_HEADER.size + 4 * dim * frames
    if len(blob) != expected:
        raise ParseError(
            f"payload holds {len(blob) - _FEATURE_HEADER.size} bytes, header promises {4 * dim * frames}",
            f"byte {min(len(blob), expected)}",
            path,
        )
    data = np.frombuffer(blob, dtype="<f4", offset=_FEATURE_HEADER.size)
    return data.reshape(frames, dim).T.astype(np.float32)


def read_features(path):
    """Load a ``(F0, T)`` feature array from CSV or the binary ``TCNF`` format.

    The format is chosen by the leading magic bytes, not the file extension.
    """
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] == FEATURE_MAGIC:
        return _read_feature_bin(path, blob)
    try:
        text = blob.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError("neither TCNF binary nor UTF-8 text", f"byte {exc.start}", path) from None
    return _read_feature_csv(path, text)


def write_features(features, path, binary=None):
    """Write ``(F0, T)`` features. ``binary`` defaults to True for a ``.bin`` suffix."""
    path = Path(path)
    features = np.asarray(features)
    if features.ndim != 2:
        raise DataError(f"features must be 2-D (F0, T), got shape {features.shape}")
    if binary is None:
        binary = path.suffix == ".bin"
    dim, frames = features.shape
    if binary:
        payload = np.ascontiguousarray(features.T, dtype="<f4").tobytes()
        path.write_bytes(_FEATURE_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, dim, frames) + payload)
    else:
        lines = (",".join(repr(float(v)) for v in frame) for frame in features.T)
        path.write_text("\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# labels


def read_labels(path):
    """One integer class id per line. Blank lines are skipped."""
    path = Path(path)
    values = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        token = line.strip()
        if not token:
            continue
        try:
            values.append(int(token))
        except ValueError:
            raise ParseError(f"expected an integer class id, got {token!r}", f"line {lineno}", path) from None
    return np.asarray(values, dtype=np.int64)


def write_labels(labels, path):
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    Path(path).write_text("".join(f"{int(v)}\n" for v in labels))


# --------------------------------------------------------------------------
# dataset manifests


@dataclass
class SequenceRecord:
    id: str
    features: str
    labels: str
    split: str


@dataclass
class DatasetManifest:
    feature_dim: int
    class_names: list
    sequences: list = field(default_factory=list)
    root: Path = None
    extra: dict = field(default_factory=dict)

    @property
    def num_classes(self):
        return len(self.class_names)

    def split(self, name):
        return [s for s in self.sequences if s.split == name]

    def to_dict(self):
        out = {
            "format": "tcn-dataset",
            "version": 1,
            "feature_dim": self.feature_dim,
            "class_names": list(self.class_names),
            "sequences": [vars(s) for s in self.sequences],
        }
        out.update(self.extra)
        return out

    def save(self, root=None):
        root = Path(root or self.root)
        root.mkdir(parents=True, exist_ok=True)
        (root / MANIFEST_NAME).write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        self.root = root
        return root / MANIFEST_NAME


def read_manifest(root):
    """Load and check ``root/manifest.json``; every referenced file must exist."""
    root = Path(root)
    path = root / MANIFEST_NAME
    if not path.exists():
        raise DataError(f"{root} has no {MANIFEST_NAME}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, f"line {exc.lineno}", path) from None
    try:
        seqs = [SequenceRecord(**rec) for rec in doc["sequences"]]
        manifest = DatasetManifest(int(doc["feature_dim"]), list(doc["class_names"]), seqs, root)
    except (KeyError, TypeError) as exc:
        raise DataError(f"{path}: malformed manifest ({exc})") from None
    manifest.extra = {
        k: v for k, v in doc.items()
        if k not in ("format", "version", "feature_dim", "class_names", "sequences")
    }
    if manifest.feature_dim < 1 or not manifest.class_names:
        raise DataError(f"{path}: feature_dim and class_names must be non-empty")
    for rec in seqs:
        if rec.split not in ("train", "val", "test"):
            raise DataError(f"{path}: sequence {rec.id} has unknown split {rec.split!r}")
        for name in (rec.features, rec.labels):
            if not (root / name).exists():
                raise DataError(f"{path}: sequence {rec.id} references missing file {name}")
    return manifest


def load_split(manifest, split):
    """``[(id, features, labels)]`` for one split, checked against the manifest."""
    out = []
    for rec in manifest.split(split):
        features = read_features(manifest.root / rec.features)
        labels = read_labels(manifest.root / rec.labels)
        if features.shape[0] != manifest.feature_dim:
            raise DataError(
                f"sequence {rec.id}: {features.shape[0]} feature channels, manifest says {manifest.feature_dim}"
            )
        if labels.size != features.shape[1]:
            raise DataError(f"sequence {rec.id}: {labels.size} labels for {features.shape[1]} frames")
        if labels.size and (labels.min() < 0 or labels.max() >= manifest.num_classes):
            raise DataError(f"sequence {rec.id}: labels outside [0, {manifest.num_classes})")
        out.append((rec.id, features, labels))
    return out


def write_dataset(root, train, test, class_names, binary=False, extra=None):
    """Write feature/label files plus a manifest for lists of ``(features, labels)``."""
    root = Path(root)
    (root / "features").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    suffix = ".bin" if binary else ".csv"
    records, dim = [], None
    for split, items in (("train", train), ("test", test)):
        for i, (features, labels) in enumerate(items):
            sid = f"{split}_{i:03d}"
            write_features(features, root / "features" / f"{sid}{suffix}", binary=binary)
            write_labels(labels, root / "labels" / f"{sid}.txt")
            records.append(SequenceRecord(sid, f"features/{sid}{suffix}", f"labels/{sid}.txt", split))
            dim = np.asarray(features).shape[0]
    manifest = DatasetManifest(dim or 0, list(class_names), records, root, dict(extra or {}))
    manifest.save()
    return manifest


# --------------------------------------------------------------------------
# run configuration


def _parse_bool(text):
    lowered = text.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_list(text):
    return tuple(int(v) for v in text.split(",") if v.strip())


def parse_taus(text):
    """``"10,25,50"`` -> ``(0.1, 0.25, 0.5)``; values are percentages."""
    taus = tuple(float(v) / 100.0 for v in str(text).split(",") if v.strip())
    if not taus or any(not 0.0 < t <= 1.0 for t in taus):
        raise ValueError(f"overlap percentages must lie in (0, 100], got {text!r}")
    return taus


def _parse_background(text):
    return None if text.lower() in ("", "none") else int(text)


_MODELS = ("ed_tcn", "dilated_tcn")


@dataclass(frozen=True)
class RunConfig:
    """Model, training and metric settings read from a ``key=value`` file.

    Keys (defaults in brackets): model (required: ed_tcn | dilated_tcn),
    L [2 for ed_tcn, 5 for dilated_tcn], d [15], B [4], filters [96+32*l],
    width [128], activation [normalized_relu for ed_tcn, gated for
    dilated_tcn], causal [false], epochs [200], learning_rate [0.001],
    beta1 [0.9], beta2 [0.999], epsilon [1e-8], dropout [0.3], seed [0],
    shuffle [true], tau [10,25,50], background_id [none].
    """

    model: str
    L: int = None
    d: int = 15
    B: int = 4
    filters: tuple = None
    width: int = 128
    activation: str = None
    causal: bool = False
    epochs: int = 200
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    dropout: float = 0.3
    seed: int = 0
    shuffle: bool = True
    tau: tuple = (0.1, 0.25, 0.5)
    background_id: int = None

    def __post_init__(self):
        if self.model not in _MODELS:
            raise ConfigError(f"model must be one of {', '.join(_MODELS)}, got {self.model!r}")
        if any(not 0.0 < t <= 1.0 for t in self.tau):
            raise ConfigError(f"tau values must lie in (0, 1], got {self.tau}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")

    @property
    def ignore_classes(self):
        return () if self.background_id is None else (self.background_id,)

    def model_spec(self, num_classes, input_dim):
        if self.model == "ed_tcn":
            return EDTCNSpec(
                num_classes=num_classes,
                input_dim=input_dim,
                num_layers=self.L if self.L is not None else 2,
                filter_duration=self.d,
                activation=self.activation or "normalized_relu",
                causal=self.causal,
                filters=self.filters,
            )
        return DilatedTCNSpec(
            num_classes=num_classes,
            input_dim=input_dim,
            num_blocks=self.B,
            layers_per_block=self.L if self.L is not None else 5,
            width=self.width,
            activation=self.activation or "gated",
            causal=self.causal,
        )

    def train_config(self):
        return TrainConfig(
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            beta1=self.beta1,
            beta2=self.beta2,
            epsilon=self.epsilon,
            dropout=self.dropout,
            seed=self.seed,
            shuffle=self.shuffle,
        )


_PARSERS = {
    "model": str,
    "L": int,
    "d": int,
    "B": int,
    "filters": _parse_int_list,
    "width": int,
    "activation": str,
    "causal": _parse_bool,
    "epochs": int,
    "learning_rate": float,
    "beta1": float,
    "beta2": float,
    "epsilon": float,
    "dropout": float,
    "seed": int,
    "shuffle": _parse_bool,
    "tau": parse_taus,
    "background_id": _parse_background,
}
CONFIG_KEYS = tuple(f.name for f in fields(RunConfig))


def parse_config(text, path=None):
    """Parse ``key=value`` lines (``#`` starts a comment) into a :class:`RunConfig`."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected key=value, got {line!r}", f"line {lineno}", path)
        key, value = (part.strip() for part in line.split("=", 1))
        value = value.strip("\"'")
        if key not in _PARSERS:
            raise ConfigError(f"{path or 'config'}: line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{path or 'config'}: line {lineno}: duplicate key {key!r}")
        try:
            parsed = _PARSERS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{path or 'config'}: line {lineno}: bad value for {key!r}: {exc}") from None
        if isinstance(parsed, float) and not math.isfinite(parsed):
            raise ConfigError(f"{path or 'config'}: line {lineno}: {key} must be finite")
        values[key] = parsed
    if "model" not in values:
        raise ConfigError(f"{path or 'config'}: missing required key 'model'")
    return RunConfig(**values)


def read_config(path):
    return parse_config(Path(path).read_text(), path)


def format_config(config):
    """Inverse of :func:`parse_config` for non-default values."""
    lines = []
    for f in fields(RunConfig):
        value = getattr(config, f.name)
        if value is None:
            continue
        if f.name == "tau":
            value = ",".join(f"{t * 100:g}" for t in value)
        elif f.name == "filters":
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = str(value).lower()
        lines.append(f"{f.name}={value}")
    return "\n".join(lines) + "\n"
