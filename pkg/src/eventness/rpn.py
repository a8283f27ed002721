"""Region proposal network: anchors, target assignment, eventness head, proposals."""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import boxes as bx
from .autodiff import Parameter

POSITIVE, NEGATIVE, IGNORE = 1, 0, -1


@dataclass(frozen=True)
class RPNConfig:
    scales: tuple = (1.0, 2.0, 4.0)  # multiples of the feature stride
    ratios: tuple = (0.5, 1.0, 2.0)  # height:width (bands:frames)
    hidden: int = 64
    iou_pos: float = 0.7
    iou_neg: float = 0.3
    batch: int = 256
    pos_fraction: float = 0.5
    pre_nms_top: int = 2000
    nms_thresh: float = 0.7
    post_nms_top: int = 300
    min_size: float = 2.0

    @property
    def num_anchors(self):
        return len(self.scales) * len(self.ratios)


@dataclass
class Anchors:
    boxes: np.ndarray  # [N, 4] (t0, f0, t1, f1)
    cell: np.ndarray  # [N, 2] (row i, col j) feature cell
    scale_index: np.ndarray
    ratio_index: np.ndarray
    inside: np.ndarray | None = None  # [N] bool, fully within the image

    def __len__(self):
        return len(self.boxes)


@dataclass(frozen=True)
class Proposal:
    box: bx.Box
    eventness_score: float


def anchor_shapes(stride, scales, ratios):
    """(width, height) per anchor type, scale-major: k = s * len(ratios) + r."""
    out = []
    for s in scales:
        for r in ratios:
            side = s * stride
            out.append((side / np.sqrt(r), side * np.sqrt(r)))
    return np.asarray(out)


def generate_anchors(h_f, w_f, stride, scales=(1.0, 2.0, 4.0), ratios=(0.5, 1.0, 2.0), image_shape=None):
    """Tile every feature cell with len(scales)*len(ratios) anchors.

    Ordering is (row i, col j, anchor type k), matching :func:`rpn_head`.
    Anchors are not clipped; ``inside`` flags the ones within ``image_shape =
    (n_mels, n_frames)`` when it is given.
    """
    shapes = anchor_shapes(stride, scales, ratios)
    k = len(shapes)
    ii, jj = np.meshgrid(np.arange(h_f), np.arange(w_f), indexing="ij")
    cy = ((ii + 0.5) * stride).reshape(-1, 1)
    cx = ((jj + 0.5) * stride).reshape(-1, 1)
    w, h = shapes[None, :, 0], shapes[None, :, 1]
    boxes = np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=-1).reshape(-1, 4)
    cells = np.repeat(np.stack([ii.ravel(), jj.ravel()], axis=1), k, axis=0)
    types = np.tile(np.arange(k), h_f * w_f)
    inside = None
    if image_shape is not None:
        n_mels, n_frames = image_shape
        inside = (
            (boxes[:, 0] >= 0) & (boxes[:, 1] >= 0) & (boxes[:, 2] <= n_frames) & (boxes[:, 3] <= n_mels)
        )
    return Anchors(boxes, cells, types // len(ratios), types % len(ratios), inside)


def label_anchors(ious, iou_pos=0.7, iou_neg=0.3):
    """Per-anchor labels from an [anchors x gt] IoU matrix, before sampling.

    Positive: IoU >= iou_pos with some gt, or the best anchor for some gt
    (ties included).  Negative: best IoU <= iou_neg.  Otherwise ignored.
    """
    n = ious.shape[0]
    labels = np.full(n, IGNORE, dtype=np.int64)
    if ious.shape[1] == 0:
        labels[:] = NEGATIVE
        return labels, np.zeros(n, dtype=np.int64)
    best_gt = ious.argmax(axis=1)
    best = ious[np.arange(n), best_gt]
    labels[best <= iou_neg] = NEGATIVE
    labels[best >= iou_pos] = POSITIVE
    col_max = ious.max(axis=0)
    for g in np.flatnonzero(col_max > 0):
        hits = np.flatnonzero(ious[:, g] == col_max[g])
        labels[hits] = POSITIVE
        best_gt[hits] = g
    return labels, best_gt


def subsample(labels, batch, pos_fraction, rng):
    """Keep at most ``batch`` labelled anchors, at most pos_fraction of them positive."""
    labels = labels.copy()
    pos = np.flatnonzero(labels == POSITIVE)
    n_pos = min(len(pos), int(batch * pos_fraction))
    if len(pos) > n_pos:
        labels[rng.choice(pos, len(pos) - n_pos, replace=False)] = IGNORE
    neg = np.flatnonzero(labels == NEGATIVE)
    n_neg = batch - n_pos
    if len(neg) > n_neg:
        labels[rng.choice(neg, len(neg) - n_neg, replace=False)] = IGNORE
    return labels


def assign_targets(anchors, gt_boxes, rng, iou_pos=0.7, iou_neg=0.3, batch=256, pos_fraction=0.5):
    """Sampled anchor labels {1, 0, -1} and box-delta targets (valid for positives)."""
    anchor_boxes = anchors.boxes if isinstance(anchors, Anchors) else np.asarray(anchors)
    if len(anchor_boxes) == 0:
        raise ValueError("assign_targets needs at least one anchor")
    gt = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    ious = bx.iou_matrix(anchor_boxes, gt)
    labels, match = label_anchors(ious, iou_pos, iou_neg)
    labels = subsample(labels, batch, pos_fraction, rng)
    targets = np.zeros((len(anchor_boxes), 4))
    pos = labels == POSITIVE
    if pos.any():
        targets[pos] = bx.encode(gt[match[pos]], anchor_boxes[pos])
    return labels, targets


def init_params(cfg, in_channels, rng):
    a = cfg.num_anchors
    h = cfg.hidden
    specs = {
        "rpn.conv.weight": ((h, in_channels, 3, 3), in_channels * 9),
        "rpn.cls.weight": ((2 * a, h, 1, 1), h),
        "rpn.box.weight": ((4 * a, h, 1, 1), h),
    }
    params = {}
    for name, (shape, fan_in) in specs.items():
        params[name] = Parameter(ad.he_uniform(shape, fan_in, rng), name)
        bias = name.replace("weight", "bias")
        params[bias] = Parameter(np.zeros(shape[0]), bias)
    return params


def rpn_head(features, params, num_anchors):
    """Eventness logits [N, 2] (background, event) and box deltas [N, 4].

    Rows follow the anchor ordering (row i, col j, anchor type k).
    """
    x = features.values if hasattr(features, "values") else features
    _, h, w = x.shape
    t = ad.relu(ad.conv2d(x, params["rpn.conv.weight"], params["rpn.conv.bias"], padding=1))
    cls = ad.conv2d(t, params["rpn.cls.weight"], params["rpn.cls.bias"])
    box = ad.conv2d(t, params["rpn.box.weight"], params["rpn.box.bias"])
    if cls.shape[0] != 2 * num_anchors:
        raise ValueError("rpn head output does not match the anchor grid")
    n = h * w * num_anchors
    logits = ad.reshape(ad.transpose(ad.reshape(cls, (num_anchors, 2, h, w)), (2, 3, 0, 1)), (n, 2))
    deltas = ad.reshape(ad.transpose(ad.reshape(box, (num_anchors, 4, h, w)), (2, 3, 0, 1)), (n, 4))
    return logits, deltas


def eventness(logits):
    """Probability of the event class from [N, 2] logits (numpy)."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e[:, 1] / e.sum(axis=1)


def rpn_forward(features, params, num_anchors=9):
    """Scores [H_f, W_f, A] in [0, 1] and deltas [H_f, W_f, A, 4] as numpy arrays."""
    logits, deltas = rpn_head(features, params, num_anchors)
    _, h, w = (features.values if hasattr(features, "values") else features).shape
    return (
        eventness(logits.data).reshape(h, w, num_anchors),
        deltas.data.reshape(h, w, num_anchors, 4),
    )


def rpn_losses(logits, deltas, labels, targets):
    """Classification loss (mean over sampled anchors) and box loss (per positive)."""
    sampled = np.flatnonzero(labels != IGNORE)
    pos = labels == POSITIVE
    cls_loss = ad.cross_entropy(ad.take_rows(logits, sampled), labels[sampled])
    weight = np.repeat(pos[:, None], 4, axis=1).astype(np.float64) / max(1, int(pos.sum()))
    box_loss = ad.smooth_l1(deltas, targets, weight)
    return cls_loss, box_loss


def select_proposals(scores, deltas, anchor_boxes, image_shape, cfg):
    """Decode, clip, drop tiny boxes, keep top-k, NMS, truncate.  Returns (boxes, scores)."""
    n_mels, n_frames = image_shape
    decoded = bx.decode(anchor_boxes, deltas.reshape(-1, 4), bounds=(n_frames, n_mels))
    scores = scores.reshape(-1)
    size_ok = ((decoded[:, 2] - decoded[:, 0]) >= cfg.min_size) & (
        (decoded[:, 3] - decoded[:, 1]) >= cfg.min_size
    )
    idx = np.flatnonzero(size_ok)
    idx = idx[bx.score_order(scores[idx])][: cfg.pre_nms_top]
    keep = bx.nms(decoded[idx], scores[idx], cfg.nms_thresh)[: cfg.post_nms_top]
    idx = idx[keep]
    return decoded[idx], scores[idx]


def propose(features, anchors, params, image_shape, cfg=RPNConfig()):
    """Proposals for one feature map, sorted by descending eventness."""
    scores, deltas = rpn_forward(features, params, cfg.num_anchors)
    anchor_boxes = anchors.boxes if isinstance(anchors, Anchors) else anchors
    if scores.size != len(anchor_boxes):
        raise ValueError("rpn output does not match the anchor grid")
    boxes, kept = select_proposals(scores, deltas, anchor_boxes, image_shape, cfg)
    return [Proposal(bx.Box.from_array(b), float(s)) for b, s in zip(boxes, kept)]
