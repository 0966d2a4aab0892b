"""Toy datasets: Markov action compositions and phase-delayed features.

Five frame labels ``A1 A2 A3 B C`` come from three high-level actions. Entering
``A`` always emits ``A1 -> A2 -> A3``. Each class has a fixed duration. The
3-dim features are a +-1 one-hot of the *high-level* action only, so the
three ``A`` subactions look identical frame by frame.
"""
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .errors import ConfigError

CLASS_NAMES = ("A1", "A2", "A3", "B", "C")
HIGH_LEVEL = ("A", "B", "C")
SUBACTIONS = {"A": ("A1", "A2", "A3"), "B": ("B",), "C": ("C",)}
DEFAULT_DURATIONS = {"A1": 8, "A2": 8, "A3": 8, "B": 12, "C": 16}
# next high-level action; no self transitions
TRANSITIONS = {
    "A": {"B": 0.5, "C": 0.5},
    "B": {"A": 0.5, "C": 0.5},
    "C": {"A": 0.5, "B": 0.5},
}
INITIAL = {"A": 1 / 3, "B": 1 / 3, "C": 1 / 3}
FEATURE_DIM = 3


def _feature_code(high):
    code = -np.ones(FEATURE_DIM, dtype=np.float32)
    code[HIGH_LEVEL.index(high)] = 1.0
    return code


@dataclass(frozen=True)
class CompositionSpec:
    num_train: int = 50
    num_test: int = 10
    seq_len: int = 150
    durations: dict = field(default_factory=lambda: dict(DEFAULT_DURATIONS))
    seed: int = 0

    def __post_init__(self):
        if set(self.durations) != set(CLASS_NAMES):
            raise ConfigError(f"durations must cover exactly {', '.join(CLASS_NAMES)}")
        if self.seq_len < 1 or self.num_train < 0 or self.num_test < 0:
            raise ConfigError("seq_len must be >= 1 and sequence counts >= 0")
        for name, frames in self.durations.items():
            if frames < 1:
                raise ConfigError(f"duration of {name} must be >= 1, got {frames}")
            if frames > self.seq_len:
                raise ConfigError(f"duration of {name} ({frames}) exceeds seq_len {self.seq_len}")


@dataclass(frozen=True)
class ShiftSpec:
    base: CompositionSpec = field(default_factory=CompositionSpec)
    shift: int = 0

    def __post_init__(self):
        if not 0 <= self.shift < self.base.seq_len:
            raise ConfigError(f"shift must lie in [0, {self.base.seq_len}), got {self.shift}")


@dataclass
class SyntheticDataset:
    """Train/test lists of ``(features (3, T), labels (T,))`` pairs."""

    train: list
    test: list
    class_names: tuple = CLASS_NAMES
    transitions: dict = field(default_factory=lambda: transition_table())
    shift: int = 0


def transition_table():
    """The generator's Markov parameters, for audit files."""
    return {
        "initial": dict(INITIAL),
        "high_level": {k: dict(v) for k, v in TRANSITIONS.items()},
        "subactions": {k: list(v) for k, v in SUBACTIONS.items()},
    }


def _sample_sequence(rng, spec):
    labels = []
    high = rng.choice(HIGH_LEVEL, p=[INITIAL[h] for h in HIGH_LEVEL])
    while len(labels) < spec.seq_len:
        for sub in SUBACTIONS[high]:
            labels.extend([CLASS_NAMES.index(sub)] * spec.durations[sub])
        nxt = TRANSITIONS[high]
        names = sorted(nxt)
        high = rng.choice(names, p=[nxt[n] for n in names])
    labels = np.asarray(labels[: spec.seq_len], dtype=np.int64)
    return features_for_labels(labels), labels


def features_for_labels(labels):
    """+-1 high-level encoding for a label sequence of :data:`CLASS_NAMES` ids."""
    codes = np.stack([_feature_code(CLASS_NAMES[c][0]) for c in range(len(CLASS_NAMES))], axis=1)
    return codes[:, np.asarray(labels, dtype=np.int64)]


def _split(seed_seq, count, spec):
    return [_sample_sequence(np.random.default_rng(s), spec) for s in seed_seq.spawn(count)]


def gen_composition(spec=None):
    """Draw the composition dataset. Train and test use disjoint seed streams."""
    spec = spec or CompositionSpec()
    train_ss, test_ss = np.random.SeedSequence(spec.seed).spawn(2)
    return SyntheticDataset(_split(train_ss, spec.num_train, spec), _split(test_ss, spec.num_test, spec))


def shift_features(features, shift):
    """Delay features by ``shift`` frames; the first frames repeat frame 0."""
    frames = features.shape[1]
    if not 0 <= shift < frames:
        raise ConfigError(f"shift must lie in [0, {frames}), got {shift}")
    src = np.maximum(np.arange(frames) - shift, 0)
    return features[:, src]


def gen_shift(spec=None):
    """Composition data with features delayed by ``spec.shift`` in both splits."""
    spec = spec or ShiftSpec()
    data = gen_composition(spec.base)
    data.train = [(shift_features(x, spec.shift), y) for x, y in data.train]
    data.test = [(shift_features(x, spec.shift), y) for x, y in data.test]
    data.shift = spec.shift
    return data


def best_frame_map(sequences, num_classes=len(CLASS_NAMES)):
    """Exhaustive search for the best constant map from feature vector to label.

    Returns ``(accuracy_percent, mapping)``. Every assignment of a label to
    each distinct feature vector is scored, so this is the ceiling of any
    frame-wise classifier evaluated on ``sequences``.
    """
    keys, counts = [], []
    for features, labels in sequences:
        for t in range(len(labels)):
            key = tuple(np.asarray(features[:, t]).tolist())
            if key not in keys:
                keys.append(key)
                counts.append(np.zeros(num_classes, dtype=np.int64))
            counts[keys.index(key)][labels[t]] += 1
    total = sum(int(c.sum()) for c in counts)
    if total == 0:
        return 0.0, {}
    best, best_map = -1, None
    for choice in product(range(num_classes), repeat=len(keys)):
        correct = sum(int(counts[i][c]) for i, c in enumerate(choice))
        if correct > best:
            best, best_map = correct, dict(zip(keys, choice))
    return 100.0 * best / total, best_map
