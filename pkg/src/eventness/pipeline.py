"""End-to-end detector: model container, joint training, inference, box <-> event."""

import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import backbone as bb
from . import boxes as bx
from . import dsp
from . import roi_head as rh
from . import rpn as rp
from .events import EventDetection
from .fileio import atomic_write

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Raised when a training loss becomes non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.005
    momentum: float = 0.9
    iterations: int = 5000
    seed: int = 0
    rpn_cls_weight: float = 1.0
    rpn_box_weight: float = 1.0
    roi_cls_weight: float = 1.0
    roi_box_weight: float = 1.0
    roi_batch: int = 64
    rpn_batch: int = 256
    grad_clip: float = 10.0  # global L2 norm; 0 disables
    lr_decay: float = 0.1  # step decay factor applied once ...
    lr_decay_at: float = 0.7  # ... after this fraction of the iterations

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError("learning rate must be non-negative")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


def _config_dict(obj):
    d = asdict(obj)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


@dataclass
class DetectionModel:
    classes: list
    sample_rate: int = dsp.DEFAULT_SAMPLE_RATE
    spectrogram: dsp.SpectrogramParams = field(default_factory=dsp.SpectrogramParams)
    backbone: bb.BackboneConfig = field(default_factory=bb.BackboneConfig)
    rpn: rp.RPNConfig = field(default_factory=rp.RPNConfig)
    roi: rh.RoIConfig = field(default_factory=rh.RoIConfig)
    params: dict = field(default_factory=dict)

    @classmethod
    def create(cls, classes, seed=0, **kwargs):
        model = cls(list(classes), **kwargs)
        rng = np.random.default_rng(seed)
        model.params.update(bb.init_params(model.backbone, rng))
        c = model.backbone.out_channels
        model.params.update(rp.init_params(model.rpn, c, rng))
        model.params.update(rh.init_params(model.roi, c, len(model.classes), rng))
        return model

    def parameters(self):
        return list(self.params.values())

    @property
    def num_classes(self):
        return len(self.classes)

    def config(self):
        return {
            "classes": list(self.classes),
            "sample_rate": self.sample_rate,
            "spectrogram": _config_dict(self.spectrogram),
            "backbone": _config_dict(self.backbone),
            "rpn": _config_dict(self.rpn),
            "roi": _config_dict(self.roi),
        }

    def fingerprint(self):
        blob = json.dumps(self.config(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    # -- persistence -------------------------------------------------------

    def dumps(self):
        meta = {"config": self.config(), "fingerprint": self.fingerprint()}
        return ad.dumps_parameters(self.parameters(), meta)

    def save(self, path):
        with atomic_write(path) as fh:
            fh.write(self.dumps())

    @classmethod
    def loads(cls, text):
        arrays, meta = ad.loads_parameters(text)
        cfg = meta["config"]
        spec = dict(cfg["spectrogram"])
        bbc = dict(cfg["backbone"])
        model = cls.create(
            cfg["classes"],
            sample_rate=cfg["sample_rate"],
            spectrogram=dsp.SpectrogramParams(**spec),
            backbone=bb.BackboneConfig(
                tuple(bbc["channels"]), None if bbc["pools"] is None else tuple(bbc["pools"])
            ),
            rpn=rp.RPNConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in cfg["rpn"].items()}),
            roi=rh.RoIConfig(**cfg["roi"]),
        )
        if meta.get("fingerprint") not in (None, model.fingerprint()):
            raise ValueError("checkpoint fingerprint does not match its configuration")
        if set(arrays) != set(model.params):
            raise ValueError("checkpoint parameters do not match the model layout")
        for name, arr in arrays.items():
            if arr.shape != model.params[name].shape:
                raise ValueError(f"parameter {name}: shape {arr.shape} != {model.params[name].shape}")
            model.params[name].data = arr.copy()
            model.params[name].grad = np.zeros_like(arr)
        return model

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.loads(fh.read())

    # -- inference helpers -------------------------------------------------

    def image(self, w):
        if w.sample_rate != self.sample_rate:
            raise ValueError(
                f"sample-rate mismatch: got {w.sample_rate} Hz, model expects {self.sample_rate} Hz"
            )
        return dsp.spectrogram_image(w, self.spectrogram)

    def anchors(self, image_shape):
        h, w = bb.output_shape(self.backbone, *image_shape)
        return rp.generate_anchors(
            h, w, self.backbone.stride, self.rpn.scales, self.rpn.ratios, image_shape=image_shape
        )


# ---------------------------------------------------------------------------
# box <-> event conversion
# ---------------------------------------------------------------------------


def ground_truth_boxes(annotations, mel, class_names=None):
    """Reference boxes in spectrogram pixels, with class labels.

    Time spans onset/offset divided by the frame period, clipped to the frame
    range; frequency spans the annotation's band interval (all bands if absent).
    Annotations that start after the last analysed frame cannot be drawn and are
    dropped.
    """
    delta = mel.seconds_per_frame
    duration = mel.duration if mel.n_samples else mel.n_frames * delta
    n_mels, n_frames = mel.values.shape
    out = []
    for a in annotations:
        if not a.offset > a.onset:
            raise ValueError(f"zero-length annotation {a}")
        if a.onset < 0 or a.offset > duration + 1e-9:
            raise ValueError(f"annotation {a} lies outside the {duration:.3f} s clip")
        t0 = min(a.onset / delta, n_frames)
        t1 = min(a.offset / delta, n_frames)
        if not t1 > t0:
            continue
        if a.band_lo is None:
            f0, f1 = 0.0, float(n_mels)
        else:
            f0, f1 = float(max(0, a.band_lo)), float(min(n_mels, a.band_hi + 1))
        label = a.class_label if class_names is None else class_names.index(a.class_label)
        out.append((bx.Box(t0, t1, f0, f1), label))
    return out


def box_to_event(d, seconds_per_frame):
    """Detection box -> timed event: onset = t0 * delta, offset = t1 * delta."""
    return EventDetection(
        d.class_label,
        d.box.t0 * seconds_per_frame,
        d.box.t1 * seconds_per_frame,
        int(math.floor(d.box.f0)),
        int(math.ceil(d.box.f1)) - 1,
        float(d.score),
    )


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainingClip:
    image: np.ndarray  # [3, n_mels, n_frames]
    gt_boxes: np.ndarray  # [G, 4]
    gt_classes: np.ndarray  # [G]


def prepare_clip(model, waveform, annotations):
    mel = dsp.log_mel(waveform, model.spectrogram)
    if waveform.sample_rate != model.sample_rate:
        raise ValueError("sample-rate mismatch between clip and model")
    image = dsp.tri_channel_map(dsp.normalize_unit(mel)).values
    gts = ground_truth_boxes(annotations, mel, model.classes)
    boxes = np.array([b.as_array() for b, _ in gts]).reshape(-1, 4)
    classes = np.array([c for _, c in gts], dtype=np.int64)
    return TrainingClip(image, boxes, classes)


def clip_gradients(params, max_norm):
    if max_norm <= 0:
        return
    norm = math.sqrt(sum(float((p.grad * p.grad).sum()) for p in params))
    if norm > max_norm:
        for p in params:
            p.grad *= max_norm / norm


def train_step(model, clip, cfg, rng):
    """One joint forward/backward pass on a clip; returns loss components."""
    image_shape = clip.image.shape[1:]
    anchors = model.anchors(image_shape)
    feats = bb.extract_features(clip.image, model.params, model.backbone)

    logits, deltas = rp.rpn_head(feats, model.params, model.rpn.num_anchors)
    labels, targets = rp.assign_targets(
        anchors,
        clip.gt_boxes,
        rng,
        model.rpn.iou_pos,
        model.rpn.iou_neg,
        cfg.rpn_batch,
        model.rpn.pos_fraction,
    )
    rpn_cls, rpn_box = rp.rpn_losses(logits, deltas, labels, targets)

    scores = rp.eventness(logits.data)
    proposals, _ = rp.select_proposals(scores, deltas.data, anchors.boxes, image_shape, model.rpn)
    rois = np.concatenate([proposals, clip.gt_boxes]) if len(clip.gt_boxes) else proposals
    roi_cfg = rh.RoIConfig(**{**asdict(model.roi), "batch": cfg.roi_batch})
    idx, roi_labels, roi_targets = rh.sample_rois(rois, clip.gt_boxes, clip.gt_classes, roi_cfg, rng)
    pooled = rh.roi_pool_batch(feats, rois[idx], model.roi.pooled)
    cls_logits, box_deltas = rh.head_forward(pooled, model.params)
    roi_cls, roi_box = rh.roi_losses(cls_logits, box_deltas, roi_labels, roi_targets, model.num_classes)

    loss = (
        cfg.rpn_cls_weight * rpn_cls
        + cfg.rpn_box_weight * rpn_box
        + cfg.roi_cls_weight * roi_cls
        + cfg.roi_box_weight * roi_box
    )
    parts = {
        "loss": loss.item(),
        "rpn_cls": rpn_cls.item(),
        "rpn_box": rpn_box.item(),
        "roi_cls": roi_cls.item(),
        "roi_box": roi_box.item(),
    }
    if not all(math.isfinite(v) for v in parts.values()):
        raise TrainingDiverged(f"non-finite loss: {parts}")
    loss.backward()
    return parts


def train(dataset, cfg=TrainConfig(), model=None, classes=None, progress=None):
    """Jointly train backbone, RPN, and RoI head with SGD, one clip per step.

    ``dataset`` is a sequence of (Waveform, annotations).  Returns (model, loss
    history) where each history entry holds the loss components of one step.
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    if model is None:
        if classes is None:
            classes = sorted({a.class_label for _, anns in dataset for a in anns})
        model = DetectionModel.create(classes, seed=cfg.seed)
    clips = [prepare_clip(model, w, anns) for w, anns in dataset]
    params = model.parameters()
    opt = ad.SGD(params, cfg.lr, cfg.momentum)
    rng = np.random.default_rng(cfg.seed)
    history = []
    order = []
    start = time.perf_counter()
    for it in range(cfg.iterations):
        if it == int(cfg.lr_decay_at * cfg.iterations):
            opt.lr = cfg.lr * cfg.lr_decay
        if not order:
            order = list(rng.permutation(len(clips)))
        clip = clips[order.pop()]
        opt.zero_grad()
        parts = train_step(model, clip, cfg, rng)
        clip_gradients(params, cfg.grad_clip)
        opt.step()
        history.append(parts)
        if progress is not None:
            progress(it, parts)
        if it % 100 == 0 or it == cfg.iterations - 1:
            log.info("iter %d loss %.4f (%.1fs)", it, parts["loss"], time.perf_counter() - start)
    return model, history


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------


def detect_image(model, image, seconds_per_frame):
    """Detections (as timed events) for a precomputed [3, n_mels, n_frames] image."""
    image_shape = image.shape[1:]
    anchors = model.anchors(image_shape)
    feats = bb.extract_features(image, model.params, model.backbone)
    props = rp.propose(feats, anchors, model.params, image_shape, model.rpn)
    if not props:
        return []
    boxes = np.array([p.box.as_array() for p in props])
    pooled = rh.roi_pool_batch(feats, boxes, model.roi.pooled)
    logits, deltas = rh.head_forward(pooled, model.params)
    posteriors = ad.softmax(logits).data
    dets = rh.finalize_detections(
        boxes,
        posteriors,
        deltas.data,
        model.classes,
        image_shape,
        model.roi.score_thresh,
        model.roi.class_nms,
    )
    return [box_to_event(d, seconds_per_frame) for d in dets]


def detect(model, waveform):
    """Waveform -> events sorted by descending confidence."""
    image = model.image(waveform)
    return detect_image(model, image.values, image.frame_to_seconds)
