"""Segment-based and event-based F1 / error rate for sound event detection.

Conventions: N_ref counts reference (ground-truth) items and N_sys counts
system output.  The error rates are

    ER_SB = (max(N_ref, N_sys) - TP) / N_ref
    ER_EB = (FN + FP) / N_ref

and F1 = 2 TP / (2 TP + FP + FN).  Overall scores pool counts over classes and
clips before taking ratios (micro-averaging).
"""

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MatchCounts:
    tp: int = 0
    n_ref: int = 0
    n_sys: int = 0

    def __post_init__(self):
        if self.tp < 0 or self.tp > min(self.n_ref, self.n_sys):
            raise ValueError(f"inconsistent counts: TP={self.tp}, N_ref={self.n_ref}, N_sys={self.n_sys}")

    @property
    def fp(self):
        return self.n_sys - self.tp

    @property
    def fn(self):
        return self.n_ref - self.tp

    def __add__(self, other):
        return MatchCounts(self.tp + other.tp, self.n_ref + other.n_ref, self.n_sys + other.n_sys)


@dataclass(frozen=True)
class EventMatchConfig:
    collar: float = 0.2
    offset_ratio: float = 0.5

    def __post_init__(self):
        if not self.collar > 0:
            raise ValueError("onset collar must be positive")

    def offset_tolerance(self, ref_duration):
        return max(self.collar, self.offset_ratio * ref_duration)


def er_sb(c):
    if c.n_ref == 0:
        raise ValueError("no reference activity: ER is undefined for N_ref = 0")
    return (max(c.n_ref, c.n_sys) - c.tp) / c.n_ref


def er_eb(c):
    if c.n_ref == 0:
        raise ValueError("no reference activity: ER is undefined for N_ref = 0")
    return (c.fn + c.fp) / c.n_ref


def f1(c):
    denom = 2 * c.tp + c.fp + c.fn
    if denom == 0:
        raise ValueError("F1 is undefined with no reference and no system items")
    return 2 * c.tp / denom


# ---------------------------------------------------------------------------
# segment-based
# ---------------------------------------------------------------------------


def segment_grid(events, classes, duration, seg_len=1.0):
    """Boolean activity [n_segments, n_classes]; active iff an event overlaps the segment."""
    n_seg = max(1, math.ceil(duration / seg_len - 1e-9))
    grid = np.zeros((n_seg, len(classes)), dtype=bool)
    col = {c: i for i, c in enumerate(classes)}
    for e in events:
        if e.class_label not in col:
            continue
        first = max(0, math.floor(e.onset / seg_len))
        last = min(n_seg - 1, math.ceil(e.offset / seg_len) - 1)
        if last >= first:
            grid[first : last + 1, col[e.class_label]] = True
    return grid


def _classes(ref, sys):
    return sorted({e.class_label for e in ref} | {e.class_label for e in sys})


def segment_counts_by_class(ref, sys, duration, seg_len=1.0, classes=None):
    classes = _classes(ref, sys) if classes is None else classes
    r = segment_grid(ref, classes, duration, seg_len)
    s = segment_grid(sys, classes, duration, seg_len)
    tp = (r & s).sum(axis=0)
    return {
        c: MatchCounts(int(tp[i]), int(r[:, i].sum()), int(s[:, i].sum())) for i, c in enumerate(classes)
    }


def segment_counts(ref, sys, seg_len=1.0, duration=10.0):
    """Pooled segment-level counts over all classes of one clip."""
    total = MatchCounts()
    for c in segment_counts_by_class(ref, sys, duration, seg_len).values():
        total = total + c
    return total


# ---------------------------------------------------------------------------
# event-based
# ---------------------------------------------------------------------------


def match_events(ref, sys, cfg=EventMatchConfig()):
    """Greedy one-to-one matching; returns a list of (sys index, ref index) pairs.

    System events are visited by onset (then index).  A reference is a candidate
    if unmatched, same class, onset within the collar, and offset within
    max(collar, offset_ratio * ref duration).  The nearest-onset candidate wins,
    earlier reference first on ties.
    """
    taken = [False] * len(ref)
    pairs = []
    for si in sorted(range(len(sys)), key=lambda i: (sys[i].onset, i)):
        s = sys[si]
        best = None
        for ri, r in enumerate(ref):
            if taken[ri] or r.class_label != s.class_label:
                continue
            d_on = abs(s.onset - r.onset)
            if d_on > cfg.collar or abs(s.offset - r.offset) > cfg.offset_tolerance(r.duration):
                continue
            key = (d_on, r.onset, ri)
            if best is None or key < best[0]:
                best = (key, ri)
        if best is not None:
            taken[best[1]] = True
            pairs.append((si, best[1]))
    return pairs


def event_counts_by_class(ref, sys, cfg=EventMatchConfig(), classes=None):
    classes = _classes(ref, sys) if classes is None else classes
    pairs = match_events(ref, sys, cfg)
    out = {}
    for c in classes:
        tp = sum(1 for _, ri in pairs if ref[ri].class_label == c)
        out[c] = MatchCounts(
            tp,
            sum(1 for e in ref if e.class_label == c),
            sum(1 for e in sys if e.class_label == c),
        )
    return out


def event_counts(ref, sys, cfg=EventMatchConfig()):
    return MatchCounts(len(match_events(ref, sys, cfg)), len(ref), len(sys))


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class ScoreReport:
    """Per-class and overall counts for segment- and event-based scoring."""

    segment: dict
    event: dict

    @property
    def classes(self):
        return sorted(set(self.segment) | set(self.event))

    def overall(self, kind):
        counts = getattr(self, kind)
        total = MatchCounts()
        for c in counts.values():
            total = total + c
        return total

    def rows(self):
        out = [(c, self.segment.get(c, MatchCounts()), self.event.get(c, MatchCounts())) for c in self.classes]
        out.append(("Overall", self.overall("segment"), self.overall("event")))
        return out

    def to_dict(self):
        def cell(c, er):
            return {
                "er": _safe(er, c),
                "f1": _safe(f1, c),
                "tp": c.tp,
                "fp": c.fp,
                "fn": c.fn,
                "n_ref": c.n_ref,
                "n_sys": c.n_sys,
            }

        return {
            name: {"segment_based": cell(seg, er_sb), "event_based": cell(ev, er_eb)}
            for name, seg, ev in self.rows()
        }

    def format(self):
        """Aligned text table; each cell reads "ER (F1)"."""
        header = ("Event class", "Segment-based", "Event-based")
        lines = [(name, _cell(seg, er_sb), _cell(ev, er_eb)) for name, seg, ev in self.rows()]
        width0 = max(len(header[0]), *(len(r[0]) for r in lines))
        width = max(len(header[1]), len(header[2]), *(len(r[1]) for r in lines), *(len(r[2]) for r in lines))
        fmt = f"{{:<{width0}}}  {{:>{width}}}  {{:>{width}}}"
        rule = "-" * (width0 + 2 * width + 4)
        out = [fmt.format(*header), rule]
        out += [fmt.format(*r) for r in lines[:-1]]
        out += [rule, fmt.format(*lines[-1])]
        return "\n".join(out)


def _safe(fn, c):
    try:
        return fn(c)
    except ValueError:
        return None


def _cell(c, er_fn):
    er, f = _safe(er_fn, c), _safe(f1, c)
    er_s = "-" if er is None else f"{er:.2f}"
    f_s = "-" if f is None else f"{f:.2f}"
    return f"{er_s} ({f_s})"


def score_report(clips, seg_len=1.0, cfg=EventMatchConfig(), classes=None):
    """Pool per-class counts over clips.

    ``clips`` is an iterable of (ref events, sys events, clip duration).
    """
    clips = list(clips)
    if classes is None:
        classes = sorted({e.class_label for ref, sys, _ in clips for e in list(ref) + list(sys)})
    seg = {c: MatchCounts() for c in classes}
    ev = {c: MatchCounts() for c in classes}
    for ref, sys, duration in clips:
        for c, counts in segment_counts_by_class(ref, sys, duration, seg_len, classes).items():
            seg[c] = seg[c] + counts
        for c, counts in event_counts_by_class(ref, sys, cfg, classes).items():
            ev[c] = ev[c] + counts
    return ScoreReport(seg, ev)
