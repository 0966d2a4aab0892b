import numpy as np
import pytest

from tcn_seg import synth
from tcn_seg.errors import ConfigError
from tcn_seg.metrics import labels_to_segments
from tcn_seg.synth import CLASS_NAMES, CompositionSpec, ShiftSpec

A_IDS = {CLASS_NAMES.index(n) for n in ("A1", "A2", "A3")}


@pytest.fixture(scope="module")
def data():
    return synth.gen_composition(CompositionSpec(seed=3))


def test_default_split_sizes(data):
    assert len(data.train) == 50 and len(data.test) == 10
    for x, y in data.train + data.test:
        assert x.shape == (3, 150) and y.shape == (150,)
        assert set(np.unique(x)) <= {-1.0, 1.0}
        assert y.min() >= 0 and y.max() < 5


def test_subactions_share_features(data):
    for x, y in data.train:
        for t in np.flatnonzero(np.isin(y, list(A_IDS))):
            np.testing.assert_array_equal(x[:, t], [1, -1, -1])
        for name, code in (("B", [-1, 1, -1]), ("C", [-1, -1, 1])):
            for t in np.flatnonzero(y == CLASS_NAMES.index(name)):
                np.testing.assert_array_equal(x[:, t], code)


def test_run_lengths_match_durations(data):
    for _, y in data.train:
        segs = labels_to_segments(y)
        for seg in segs[:-1]:
            assert seg.length == synth.DEFAULT_DURATIONS[CLASS_NAMES[seg.class_id]]
        assert segs[-1].length <= synth.DEFAULT_DURATIONS[CLASS_NAMES[segs[-1].class_id]]


def test_grammar(data):
    a1, a2, a3 = (CLASS_NAMES.index(n) for n in ("A1", "A2", "A3"))
    for _, y in data.train:
        classes = [s.class_id for s in labels_to_segments(y)]
        # starts at the beginning of a high-level action
        assert classes[0] in (a1, CLASS_NAMES.index("B"), CLASS_NAMES.index("C"))
        for prev, nxt in zip(classes, classes[1:]):
            if prev == a1:
                assert nxt == a2
            elif prev == a2:
                assert nxt == a3
            elif prev == a3:
                assert nxt in (3, 4)
            else:
                assert nxt in {a1, 3, 4} - {prev}


def test_deterministic_and_disjoint_streams():
    a = synth.gen_composition(CompositionSpec(num_train=5, num_test=5, seed=11))
    b = synth.gen_composition(CompositionSpec(num_train=5, num_test=5, seed=11))
    for (xa, ya), (xb, yb) in zip(a.train + a.test, b.train + b.test):
        assert xa.tobytes() == xb.tobytes() and ya.tobytes() == yb.tobytes()
    # the test split does not depend on how many training sequences are drawn
    c = synth.gen_composition(CompositionSpec(num_train=9, num_test=5, seed=11))
    for (_, ya), (_, yc) in zip(a.test, c.test):
        assert ya.tobytes() == yc.tobytes()


def test_transition_frequencies():
    spec = CompositionSpec(num_train=400, num_test=0, seed=1)
    counts = {}
    for _, y in synth.gen_composition(spec).train:
        classes = [s.class_id for s in labels_to_segments(y)]
        for prev, nxt in zip(classes, classes[1:]):
            if prev in (2, 3, 4):
                counts.setdefault(prev, []).append(nxt)
    for prev, seen in counts.items():
        values, freq = np.unique(seen, return_counts=True)
        assert len(values) == 2
        assert abs(freq[0] / freq.sum() - 0.5) < 0.06


def test_bad_specs():
    with pytest.raises(ConfigError):
        CompositionSpec(seq_len=10)
    with pytest.raises(ConfigError):
        CompositionSpec(durations={"A1": 0, "A2": 8, "A3": 8, "B": 12, "C": 16})
    with pytest.raises(ConfigError):
        CompositionSpec(durations={"A1": 8})
    with pytest.raises(ConfigError):
        ShiftSpec(CompositionSpec(), shift=150)
    with pytest.raises(ConfigError):
        ShiftSpec(CompositionSpec(), shift=-1)


def test_shift_zero_is_identity():
    base = CompositionSpec(num_train=3, num_test=2, seed=4)
    plain, shifted = synth.gen_composition(base), synth.gen_shift(ShiftSpec(base, 0))
    for (xa, ya), (xb, yb) in zip(plain.train + plain.test, shifted.train + shifted.test):
        np.testing.assert_array_equal(xa, xb)
        np.testing.assert_array_equal(ya, yb)


def test_shift_definition_and_boundary():
    base = CompositionSpec(num_train=3, num_test=2, seed=4)
    plain = synth.gen_composition(base)
    five = synth.gen_shift(ShiftSpec(base, 5))
    twenty = synth.gen_shift(ShiftSpec(base, 20))
    for (x, y), (x5, y5), (x20, _) in zip(plain.train + plain.test, five.train + five.test, twenty.train + twenty.test):
        np.testing.assert_array_equal(x5[:, 10], x[:, 5])
        np.testing.assert_array_equal(y5, y)
        np.testing.assert_array_equal(x20[:, :21], np.repeat(x[:, :1], 21, axis=1))
        np.testing.assert_array_equal(x20[:, 20:], x[:, :130])


def test_shifts_compose():
    base = CompositionSpec(num_train=4, num_test=0, seed=9)
    s1, s2 = 4, 11
    first = synth.gen_shift(ShiftSpec(base, s1))
    direct = synth.gen_shift(ShiftSpec(base, s2))
    for (x1, _), (x2, _) in zip(first.train, direct.train):
        composed = synth.shift_features(x1, s2 - s1)
        np.testing.assert_array_equal(composed[:, s2:], x2[:, s2:])


def test_frame_oracle_ceiling(data):
    acc, mapping = synth.best_frame_map(data.test)
    labels = np.concatenate([y for _, y in data.test])
    a23 = np.isin(labels, [1, 2]).mean()
    assert acc <= 100 * (1 - a23) + 1e-9
    assert mapping[(1.0, -1.0, -1.0)] in A_IDS
    assert acc < 90


def test_frame_oracle_brute_force_small():
    x = np.array([[1.0, 1.0, -1.0, -1.0, 1.0]])
    y = np.array([0, 1, 2, 2, 1])
    acc, mapping = synth.best_frame_map([(x, y)], num_classes=3)
    assert acc == pytest.approx(80.0)
    assert mapping == {(1.0,): 1, (-1.0,): 2}


def test_transition_table_is_documented():
    table = synth.transition_table()
    assert table["high_level"]["A"] == {"B": 0.5, "C": 0.5}
    assert sum(table["initial"].values()) == pytest.approx(1.0)
