"""RoI max pooling, event classification, and class-specific box refinement."""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import boxes as bx
from .autodiff import Parameter

BACKGROUND = 0


@dataclass(frozen=True)
class RoIConfig:
    pooled: int = 7
    hidden: int = 256
    score_thresh: float = 0.5
    class_nms: float = 0.3
    batch: int = 64
    fg_fraction: float = 0.25
    fg_iou: float = 0.5


@dataclass
class PooledRegion:
    values: ad.Tensor  # [C, P, P]
    proposal: bx.Box


@dataclass(frozen=True)
class Detection:
    box: bx.Box
    class_label: str
    score: float


def feature_regions(boxes, stride, feature_shape):
    """Map pixel boxes [R, 4] to integer cell ranges (row0, row1, col0, col1).

    Start coordinates are floored and end coordinates ceiled after dividing by
    the stride, so every region that touches the map is non-empty.
    """
    h, w = feature_shape
    b = np.asarray(boxes, dtype=np.float64).reshape(-1, 4) / stride
    c0 = np.floor(b[:, 0]).astype(np.int64)
    r0 = np.floor(b[:, 1]).astype(np.int64)
    c1 = np.ceil(b[:, 2]).astype(np.int64)
    r1 = np.ceil(b[:, 3]).astype(np.int64)
    # a box in the partial strip past the last full cell is pooled from that cell
    outside = (c0 > w) | (r0 > h) | (c1 <= 0) | (r1 <= 0)
    if outside.any():
        raise ValueError(f"proposal {np.flatnonzero(outside)[0]} lies fully outside the feature map")
    c0, r0 = np.clip(c0, 0, w - 1), np.clip(r0, 0, h - 1)
    c1 = np.maximum(np.clip(c1, 1, w), c0 + 1)
    r1 = np.maximum(np.clip(r1, 1, h), r0 + 1)
    return np.stack([r0, r1, c0, c1], axis=1)


def roi_pool_batch(features, boxes, pooled=7):
    """Pool every box of [R, 4] from the feature map -> Tensor [R, C, P, P]."""
    fmap = features.values
    regions = feature_regions(boxes, features.stride, fmap.shape[1:])
    return ad.roi_max_pool(fmap, regions, pooled)


def roi_pool(features, proposal, pooled=7):
    """Pool a single proposal :class:`Box` into a fixed [C, P, P] grid."""
    out = roi_pool_batch(features, proposal.as_array()[None], pooled)
    return PooledRegion(ad.reshape(out, out.shape[1:]), proposal)


def init_params(cfg, in_channels, num_classes, rng):
    d = in_channels * cfg.pooled * cfg.pooled
    h = cfg.hidden
    specs = {
        "roi.fc1.weight": (h, d),
        "roi.fc2.weight": (h, h),
        "roi.cls.weight": (num_classes + 1, h),
        "roi.box.weight": (4 * num_classes, h),
    }
    params = {}
    for name, shape in specs.items():
        params[name] = Parameter(ad.he_uniform(shape, shape[1], rng), name)
        bias = name.replace("weight", "bias")
        params[bias] = Parameter(np.zeros(shape[0]), bias)
    return params


def head_forward(pooled, params):
    """Two FC layers then sibling class logits [R, K+1] and deltas [R, 4K]."""
    x = pooled.values if isinstance(pooled, PooledRegion) else pooled
    x = ad.reshape(x, (x.shape[0], -1)) if len(x.shape) == 4 else ad.reshape(x, (-1,))
    x = ad.relu(ad.linear(x, params["roi.fc1.weight"], params["roi.fc1.bias"]))
    x = ad.relu(ad.linear(x, params["roi.fc2.weight"], params["roi.fc2.bias"]))
    logits = ad.linear(x, params["roi.cls.weight"], params["roi.cls.bias"])
    deltas = ad.linear(x, params["roi.box.weight"], params["roi.box.bias"])
    return logits, deltas


def classify_and_refine(pooled, params, num_classes):
    """Class posteriors [K+1] (index 0 = background) and per-class deltas [K, 4]."""
    logits, deltas = head_forward(pooled, params)
    probs = ad.softmax(logits).data
    if probs.shape[-1] != num_classes + 1:
        raise ValueError("head parameters do not match the class count")
    return probs, deltas.data.reshape(probs.shape[:-1] + (num_classes, 4))


def sample_rois(rois, gt_boxes, gt_classes, cfg, rng):
    """Pick a training minibatch of RoIs.

    Returns (indices, class targets with 0 = background, box-delta targets).
    """
    gt = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    n = len(rois)
    if len(gt):
        ious = bx.iou_matrix(rois, gt)
        match = ious.argmax(axis=1)
        best = ious[np.arange(n), match]
    else:
        match = np.zeros(n, dtype=np.int64)
        best = np.zeros(n)
    fg = np.flatnonzero(best >= cfg.fg_iou)
    bg = np.flatnonzero(best < cfg.fg_iou)
    n_fg = min(len(fg), int(round(cfg.batch * cfg.fg_fraction)))
    if len(fg) > n_fg:
        fg = np.sort(rng.choice(fg, n_fg, replace=False))
    n_bg = min(len(bg), cfg.batch - len(fg))
    if len(bg) > n_bg:
        bg = np.sort(rng.choice(bg, n_bg, replace=False))
    idx = np.concatenate([fg, bg]).astype(np.int64)
    labels = np.zeros(len(idx), dtype=np.int64)
    targets = np.zeros((len(idx), 4))
    if len(fg):
        labels[: len(fg)] = np.asarray(gt_classes, dtype=np.int64)[match[fg]] + 1
        targets[: len(fg)] = bx.encode(gt[match[fg]], rois[fg])
    return idx, labels, targets


def roi_losses(logits, deltas, labels, targets, num_classes):
    """Cross-entropy over sampled RoIs and smooth-L1 on the true class's deltas."""
    cls_loss = ad.cross_entropy(logits, labels)
    r = len(labels)
    full = np.zeros((r, 4 * num_classes))
    weight = np.zeros((r, 4 * num_classes))
    fg = np.flatnonzero(labels > 0)
    for i in fg:
        cols = slice(4 * (labels[i] - 1), 4 * labels[i])
        full[i, cols] = targets[i]
        weight[i, cols] = 1.0
    weight /= max(1, len(fg))
    return cls_loss, ad.smooth_l1(deltas, full, weight)


def finalize_detections(proposals, posteriors, deltas, class_names, image_shape, score_thresh=0.5, class_nms=0.3):
    """Per-class thresholding, box refinement, clipping, and NMS.

    proposals: [R, 4] boxes; posteriors: [R, K+1]; deltas: [R, 4K] or [R, K, 4].
    Returns detections sorted by descending score.
    """
    proposals = np.asarray(proposals, dtype=np.float64).reshape(-1, 4)
    posteriors = np.asarray(posteriors).reshape(len(proposals), -1)
    k = posteriors.shape[1] - 1
    deltas = np.asarray(deltas).reshape(len(proposals), k, 4)
    n_mels, n_frames = image_shape
    found = []
    for c in range(k):
        scores = posteriors[:, c + 1]
        idx = np.flatnonzero(scores >= score_thresh)
        if not idx.size:
            continue
        refined = bx.decode(proposals[idx], deltas[idx, c], bounds=(n_frames, n_mels))
        ok = (refined[:, 2] > refined[:, 0]) & (refined[:, 3] > refined[:, 1])
        refined, idx = refined[ok], idx[ok]
        for j in bx.nms(refined, scores[idx], class_nms):
            found.append(Detection(bx.Box.from_array(refined[j]), class_names[c], float(scores[idx[j]])))
    found.sort(key=lambda d: -d.score)
    return found
