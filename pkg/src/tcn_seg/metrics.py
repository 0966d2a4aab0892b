"""Segments and the action segmentation / detection metric suite.

All scores are percentages in [0, 100]. Segment-level functions accept either
lists of :class:`Segment` or per-frame label arrays, which are converted with
:func:`labels_to_segments`.
"""
import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, DataError

POLICIES = ("mean", "max")


@dataclass(frozen=True)
class Segment:
    """Half-open frame interval ``[start, end)`` carrying one class."""

    class_id: int
    start: int
    end: int
    confidence: float = None

    def __post_init__(self):
        if self.end <= self.start:
            raise DataError(f"segment needs start < end, got [{self.start}, {self.end})")

    @property
    def length(self):
        return self.end - self.start

    @property
    def midpoint(self):
        """Mean time of the segment's frames."""
        return (self.start + self.end - 1) / 2.0


def labels_to_segments(labels, probs=None, policy="max"):
    """Maximal runs of equal labels.

    With ``probs`` (shape ``(C, T)``) each segment gets a confidence from
    :func:`segment_confidence` under ``policy``.
    """
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size == 0:
        return []
    cuts = np.flatnonzero(np.diff(labels)) + 1
    starts = np.concatenate([[0], cuts])
    ends = np.concatenate([cuts, [labels.size]])
    segs = [Segment(int(labels[s]), int(s), int(e)) for s, e in zip(starts, ends)]
    if probs is not None:
        segs = [
            Segment(s.class_id, s.start, s.end, segment_confidence(probs, s, policy)) for s in segs
        ]
    return segs


def segments_to_labels(segments):
    if not segments:
        return np.zeros(0, dtype=np.int64)
    labels = np.empty(segments[-1].end, dtype=np.int64)
    for seg in segments:
        labels[seg.start : seg.end] = seg.class_id
    return labels


def _as_segments(x):
    if isinstance(x, np.ndarray):
        return labels_to_segments(x)
    x = list(x)
    if x and not isinstance(x[0], Segment):
        return labels_to_segments(x)
    return x


def frame_accuracy(pred, truth):
    pred = np.asarray(pred).reshape(-1)
    truth = np.asarray(truth).reshape(-1)
    if pred.shape != truth.shape:
        raise DataError(f"prediction has {pred.size} frames, ground truth {truth.size}")
    if truth.size == 0:
        return 100.0
    return 100.0 * float(np.mean(pred == truth))


def iou(a, b):
    inter = min(a.end, b.end) - max(a.start, b.start)
    if inter <= 0:
        return 0.0
    return inter / (max(a.end, b.end) - min(a.start, b.start))


def _check_tau(tau):
    if not 0.0 < tau <= 1.0:
        raise ConfigError(f"overlap threshold must lie in (0, 1], got {tau}")


def _f1_from_counts(tp, fp, fn):
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0:
        return 0.0
    return 100.0 * 2 * precision * recall / (precision + recall)


def match_segments(pred, truth, tau, ignore_classes=()):
    """True-positive matching for the segmental F1 score.

    Predictions are visited in temporal order. Each one takes the earliest
    still-unmatched truth of its class whose IoU reaches ``tau``. If there is
    none it is a false positive. For segmentations (same-class segments never
    overlap) no two matches can cross in time, which makes this greedy pass a
    maximum matching.

    Returns ``(matches, fp_indices, fn_indices)`` with ``matches`` a list of
    ``(pred_index, truth_index)``.
    """
    _check_tau(tau)
    ignore = set(ignore_classes)
    matched = [False] * len(truth)
    matches, false_pos = [], []
    order = sorted(range(len(pred)), key=lambda i: (pred[i].start, pred[i].end))
    for i in order:
        p = pred[i]
        if p.class_id in ignore:
            continue
        hit = None
        for j, t in enumerate(truth):
            if matched[j] or t.class_id != p.class_id:
                continue
            if iou(p, t) >= tau and (hit is None or (t.start, t.end) < (truth[hit].start, truth[hit].end)):
                hit = j
        if hit is None:
            false_pos.append(i)
        else:
            matched[hit] = True
            matches.append((i, hit))
    false_neg = [j for j, t in enumerate(truth) if not matched[j] and t.class_id not in ignore]
    return matches, false_pos, false_neg


def f1_counts(pred, truth, tau, ignore_classes=()):
    """``(tp, fp, fn)`` summed over classes."""
    matches, fps, fns = match_segments(_as_segments(pred), _as_segments(truth), tau, ignore_classes)
    return len(matches), len(fps), len(fns)


def f1_at_k(pred, truth, tau, ignore_classes=()):
    """Segmental F1 at IoU threshold ``tau`` (F1@k uses ``tau = k / 100``)."""
    return _f1_from_counts(*f1_counts(pred, truth, tau, ignore_classes))


def edit_score(pred, truth, ignore_classes=()):
    """Levenshtein similarity of the two segment class strings."""
    ignore = set(ignore_classes)
    p = [s.class_id for s in _as_segments(pred) if s.class_id not in ignore]
    t = [s.class_id for s in _as_segments(truth) if s.class_id not in ignore]
    longest = max(len(p), len(t))
    if longest == 0:
        return 100.0
    return 100.0 * (1.0 - kernels.levenshtein(p, t) / longest)


def segment_confidence(probs, seg, policy="max"):
    """Mean or max probability of ``seg``'s class over its frames."""
    if policy not in POLICIES:
        raise ConfigError(f"confidence policy must be 'mean' or 'max', got {policy!r}")
    probs = np.asarray(probs)
    if seg.start < 0 or seg.end > probs.shape[1]:
        raise DataError(f"segment [{seg.start}, {seg.end}) outside {probs.shape[1]} frames")
    values = probs[seg.class_id, seg.start : seg.end]
    return float(values.mean() if policy == "mean" else values.max())


def _criterion(criterion, tau):
    if criterion == "midpoint":
        return lambda p, t: t.start <= p.midpoint <= t.end - 1
    if criterion == "iou":
        _check_tau(tau)
        return lambda p, t: iou(p, t) >= tau
    raise ConfigError(f"criterion must be 'midpoint' or 'iou', got {criterion!r}")


def average_precision(tp_flags, num_truth):
    """All-points interpolated AP for detections already sorted by confidence."""
    if num_truth == 0:
        return 0.0
    tp_flags = np.asarray(tp_flags, dtype=float)
    if tp_flags.size == 0:
        return 0.0
    tp = np.cumsum(tp_flags)
    fp = np.cumsum(1.0 - tp_flags)
    recall = np.concatenate([[0.0], tp / num_truth, [1.0]])
    precision = np.concatenate([[0.0], tp / (tp + fp), [0.0]])
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.flatnonzero(recall[1:] != recall[:-1])
    return float(np.sum((recall[steps + 1] - recall[steps]) * precision[steps + 1]))


def map_per_class(preds, truths, criterion="iou", tau=0.5, ignore_classes=()):
    """Per-class AP (percent) pooled over sequences.

    ``preds`` and ``truths`` are parallel lists with one segment list per
    sequence. Detections of a class are ranked by confidence across all
    sequences; each is matched to the best-overlapping unmatched truth that
    satisfies the criterion.
    """
    hit = _criterion(criterion, tau)
    ignore = set(ignore_classes)
    if len(preds) != len(truths):
        raise DataError(f"{len(preds)} prediction lists for {len(truths)} ground-truth lists")
    classes = sorted({t.class_id for seq in truths for t in seq} - ignore)
    result = {}
    for c in classes:
        dets = []
        for k, seq in enumerate(preds):
            for s in seq:
                if s.class_id != c:
                    continue
                if s.confidence is None:
                    raise DataError(f"predicted segment {s} has no confidence")
                dets.append((-s.confidence, k, s.start, s))
        dets.sort(key=lambda d: d[:3])
        gts = [[t for t in seq if t.class_id == c] for seq in truths]
        used = [[False] * len(g) for g in gts]
        flags = []
        for _, k, _, s in dets:
            best, best_iou = None, -1.0
            for j, t in enumerate(gts[k]):
                if used[k][j] or not hit(s, t):
                    continue
                ov = iou(s, t)
                if ov > best_iou:
                    best, best_iou = j, ov
            if best is None:
                flags.append(0)
            else:
                used[k][best] = True
                flags.append(1)
        result[c] = 100.0 * average_precision(flags, sum(len(g) for g in gts))
    return result


def map_detection(pred, truth, criterion="iou", tau=0.5, ignore_classes=()):
    """Mean AP over classes present in ``truth`` for one sequence.

    Pass lists of segment lists (one per sequence) to pool several sequences.
    """
    if pred and isinstance(pred[0], Segment) or truth and isinstance(truth[0], Segment):
        pred, truth = [pred], [truth]
    elif not pred and not truth:
        return 0.0
    per_class = map_per_class(pred, truth, criterion, tau, ignore_classes)
    return float(np.mean(list(per_class.values()))) if per_class else 0.0


# --------------------------------------------------------------------------
# reports


def _key(tau):
    return f"{round(tau * 100):d}" if abs(tau * 100 - round(tau * 100)) < 1e-9 else f"{tau * 100:g}"


@dataclass
class EvalReport:
    """Aggregate scores over a set of sequences."""

    accuracy: float
    edit: float
    f1: dict
    map_iou: dict = None
    map_mid: dict = None
    per_class: dict = field(default_factory=dict)
    num_sequences: int = 0

    def to_dict(self):
        out = {
            "num_sequences": self.num_sequences,
            "accuracy": self.accuracy,
            "edit": self.edit,
            "f1": {_key(t): v for t, v in self.f1.items()},
        }
        if self.map_iou is not None:
            out["map_iou"] = {p: {_key(t): v for t, v in d.items()} for p, d in self.map_iou.items()}
        if self.map_mid is not None:
            out["map_mid"] = dict(self.map_mid)
        out["per_class"] = self.per_class
        return out

    def to_json(self, **kwargs):
        kwargs.setdefault("indent", 2)
        kwargs.setdefault("sort_keys", True)
        return json.dumps(self.to_dict(), **kwargs)

    def to_text(self):
        """Flat ``key=value`` lines, summary scores first."""
        lines = [
            f"sequences={self.num_sequences}",
            f"accuracy={self.accuracy:.4f}",
            f"edit={self.edit:.4f}",
        ]
        lines += [f"f1@{_key(t)}={v:.4f}" for t, v in self.f1.items()]
        if self.map_mid is not None:
            lines += [f"map_mid.{p}={v:.4f}" for p, v in self.map_mid.items()]
        if self.map_iou is not None:
            for p, scores in self.map_iou.items():
                lines += [f"map@{_key(t)}.{p}={v:.4f}" for t, v in scores.items()]
        for group, values in sorted(self.per_class.items()):
            for sub, classes in sorted(values.items()):
                for c, v in sorted(classes.items(), key=lambda kv: int(kv[0])):
                    lines.append(f"class.{group}.{sub}.{c}={v:.4f}")
        return "\n".join(lines) + "\n"


def evaluate(preds, truths, probs=None, taus=(0.1, 0.25, 0.5), ignore_classes=()):
    """Score parallel lists of predicted and true label sequences.

    Frame accuracy is pooled over all frames, the edit score is averaged over
    sequences, and F1 counts are summed over sequences. When ``probs`` (one
    ``(C, T)`` array per sequence) is given, mAP@mid and mAP@k are reported for
    both confidence policies.
    """
    if len(preds) != len(truths):
        raise DataError(f"{len(preds)} predictions for {len(truths)} ground-truth sequences")
    for tau in taus:
        _check_tau(tau)
    correct = total = 0
    edits = []
    counts = {t: np.zeros(3, dtype=np.int64) for t in taus}
    class_counts = {t: {} for t in taus}
    pred_segs, true_segs = [], []
    for k, (p, y) in enumerate(zip(preds, truths)):
        p = np.asarray(p, dtype=np.int64)
        y = np.asarray(y, dtype=np.int64)
        if p.shape != y.shape:
            raise DataError(f"sequence {k}: prediction has {p.size} frames, truth {y.size}")
        correct += int((p == y).sum())
        total += y.size
        ps, ts = labels_to_segments(p), labels_to_segments(y)
        pred_segs.append(ps)
        true_segs.append(ts)
        edits.append(edit_score(ps, ts, ignore_classes))
        for tau in taus:
            matches, fps, fns = match_segments(ps, ts, tau, ignore_classes)
            counts[tau] += (len(matches), len(fps), len(fns))
            per = class_counts[tau]
            for i, _ in matches:
                per.setdefault(ps[i].class_id, np.zeros(3, dtype=np.int64))[0] += 1
            for i in fps:
                per.setdefault(ps[i].class_id, np.zeros(3, dtype=np.int64))[1] += 1
            for j in fns:
                per.setdefault(ts[j].class_id, np.zeros(3, dtype=np.int64))[2] += 1
    report = EvalReport(
        accuracy=100.0 * correct / total if total else 100.0,
        edit=float(np.mean(edits)) if edits else 100.0,
        f1={t: _f1_from_counts(*counts[t]) for t in taus},
        num_sequences=len(preds),
    )
    report.per_class["f1"] = {
        _key(t): {str(c): _f1_from_counts(*v) for c, v in sorted(class_counts[t].items())}
        for t in taus
    }
    if probs is not None:
        if len(probs) != len(preds):
            raise DataError(f"{len(probs)} probability arrays for {len(preds)} sequences")
        report.map_iou, report.map_mid = {}, {}
        report.per_class["ap_mid"] = {}
        for policy in POLICIES:
            scored = []
            for segs, pr in zip(pred_segs, probs):
                pr = np.asarray(pr)
                if pr.shape[1] != (segs[-1].end if segs else 0):
                    raise DataError("probability array length does not match its prediction")
                scored.append(
                    [Segment(s.class_id, s.start, s.end, segment_confidence(pr, s, policy)) for s in segs]
                )
            mid = map_per_class(scored, true_segs, "midpoint", ignore_classes=ignore_classes)
            report.map_mid[policy] = float(np.mean(list(mid.values()))) if mid else 0.0
            report.per_class["ap_mid"][policy] = {str(c): v for c, v in mid.items()}
            report.map_iou[policy] = {}
            for tau in taus:
                per = map_per_class(scored, true_segs, "iou", tau, ignore_classes)
                report.map_iou[policy][tau] = float(np.mean(list(per.values()))) if per else 0.0
    return report
