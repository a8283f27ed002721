"""Time-frequency box geometry: IoU, delta encoding, clipping, NMS.

Box arrays are [N, 4] with columns (t0, f0, t1, f1) in spectrogram pixels:
t along frames (x), f along mel bands (y).  Boxes are half-open continuous
rectangles, so area = (t1 - t0) * (f1 - f0).
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels

# exp() guard for decoded log-size deltas
MAX_LOG_SCALE = float(np.log(1000.0 / 16.0))


@dataclass(frozen=True)
class Box:
    t0: float
    t1: float
    f0: float
    f1: float

    def __post_init__(self):
        if not (self.t0 < self.t1 and self.f0 < self.f1):
            raise ValueError(f"degenerate box {self}")

    @property
    def area(self):
        return (self.t1 - self.t0) * (self.f1 - self.f0)

    def as_array(self):
        return np.array([self.t0, self.f0, self.t1, self.f1], dtype=np.float64)

    @classmethod
    def from_array(cls, a):
        t0, f0, t1, f1 = (float(v) for v in a)
        return cls(t0, t1, f0, f1)


def iou(a, b):
    """IoU of two :class:`Box` objects."""
    iw = min(a.t1, b.t1) - max(a.t0, b.t0)
    ih = min(a.f1, b.f1) - max(a.f0, b.f0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def iou_matrix(a, b):
    """Pairwise IoU between box arrays a [N, 4] and b [M, 4] -> [N, M]."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)


def _centers(boxes):
    w = boxes[:, 2] - boxes[:, 0]
    h = boxes[:, 3] - boxes[:, 1]
    return boxes[:, 0] + 0.5 * w, boxes[:, 1] + 0.5 * h, w, h


def encode(targets, anchors):
    """Deltas (tx, ty, tw, th) taking each anchor onto its target box."""
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 4)
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 4)
    ax, ay, aw, ah = _centers(anchors)
    gx, gy, gw, gh = _centers(targets)
    return np.stack([(gx - ax) / aw, (gy - ay) / ah, np.log(gw / aw), np.log(gh / ah)], axis=1)


def decode(anchors, deltas, bounds=None):
    """Apply deltas to anchors; clip to ``bounds = (n_frames, n_mels)`` when given."""
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 4)
    deltas = np.asarray(deltas, dtype=np.float64).reshape(-1, 4)
    if anchors.shape != deltas.shape:
        raise ValueError("decode needs exactly one delta per anchor")
    if not np.all(np.isfinite(deltas)):
        raise ValueError("non-finite box deltas")
    ax, ay, aw, ah = _centers(anchors)
    cx = ax + deltas[:, 0] * aw
    cy = ay + deltas[:, 1] * ah
    w = aw * np.exp(np.minimum(deltas[:, 2], MAX_LOG_SCALE))
    h = ah * np.exp(np.minimum(deltas[:, 3], MAX_LOG_SCALE))
    out = np.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=1)
    return out if bounds is None else clip(out, bounds)


def clip(boxes, bounds):
    n_frames, n_mels = bounds
    out = np.array(boxes, dtype=np.float64).reshape(-1, 4)
    out[:, [0, 2]] = np.clip(out[:, [0, 2]], 0.0, n_frames)
    out[:, [1, 3]] = np.clip(out[:, [1, 3]], 0.0, n_mels)
    return out


def score_order(scores):
    """Indices by descending score; equal scores keep ascending index."""
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def nms(boxes, scores, iou_threshold):
    """Greedy non-maximum suppression; kept indices sorted by descending score."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    if len(boxes) != len(scores):
        raise ValueError("nms: boxes and scores differ in length")
    if len(boxes) == 0:
        return np.zeros(0, dtype=np.int64)
    return _kernels.nms(boxes, score_order(scores), iou_threshold)
