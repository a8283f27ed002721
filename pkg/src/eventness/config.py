"""Plain-text ``key = value`` run configuration."""

from dataclasses import dataclass, fields

from . import backbone as bb
from . import dsp
from . import roi_head as rh
from . import rpn as rp
from .metrics import EventMatchConfig
from .pipeline import DetectionModel, TrainConfig
from .synth import ClassSpec, SceneSpec


@dataclass
class RunConfig:
    # audio / spectrogram
    sample_rate: int = dsp.DEFAULT_SAMPLE_RATE
    n_fft: int = 2048
    hop: int = 1024
    n_mels: int = 128
    f_min: float = 0.0
    f_max: float = 0.0  # 0 -> sample_rate / 2
    # synthesis
    n_scenes: int = 10
    scene_duration: float = 10.0
    polyphonic_prob: float = 0.30
    event_gain_db: tuple = (0.0, 0.0)
    background_gain_db: tuple = (-6.0, -6.0)
    # name:center_hz:bandwidth_hz:min_s:max_s[:harmonics], comma separated
    event_classes: str = "tone:800:0:0.5:2.0:3,noise:5000:3000:0.5:2.0"
    events_per_class: int = 4
    background_count: int = 3
    background_seconds: float = 20.0
    background_color: str = "pink"
    event_dir: str = ""  # <dir>/<class>/*.wav replaces the synthetic bank
    background_dir: str = ""  # <dir>/*.wav replaces the synthetic noise beds
    # model
    backbone_channels: tuple = (16, 32, 64, 64)
    anchor_scales: tuple = (1.0, 2.0, 4.0)
    anchor_ratios: tuple = (0.5, 1.0, 2.0)
    rpn_hidden: int = 64
    rpn_pre_nms_top: int = 2000
    rpn_nms: float = 0.7
    rpn_post_nms_top: int = 300
    roi_pool_size: int = 7
    roi_hidden: int = 256
    score_thresh: float = 0.5
    class_nms: float = 0.3
    # training
    lr: float = TrainConfig.lr
    momentum: float = TrainConfig.momentum
    iterations: int = TrainConfig.iterations
    grad_clip: float = TrainConfig.grad_clip
    lr_decay: float = TrainConfig.lr_decay
    lr_decay_at: float = TrainConfig.lr_decay_at
    rpn_cls_weight: float = 1.0
    rpn_box_weight: float = 1.0
    roi_cls_weight: float = 1.0
    roi_box_weight: float = 1.0
    rpn_batch: int = 256
    roi_batch: int = 64
    # evaluation
    collar: float = 0.2
    offset_ratio: float = 0.5
    segment_length: float = 1.0
    seed: int = 0

    # -- derived configs -------------------------------------------------

    def spectrogram(self):
        return dsp.SpectrogramParams(
            self.n_fft, self.hop, self.n_mels, "hann", self.f_min, self.f_max or None
        )

    def scene_spec(self):
        return SceneSpec(
            self.scene_duration,
            self.polyphonic_prob,
            tuple(self.event_gain_db),
            tuple(self.background_gain_db),
            self.sample_rate,
            self.seed,
        )

    def class_specs(self):
        return parse_class_specs(self.event_classes)

    def train_config(self):
        return TrainConfig(
            lr=self.lr,
            momentum=self.momentum,
            iterations=self.iterations,
            seed=self.seed,
            rpn_cls_weight=self.rpn_cls_weight,
            rpn_box_weight=self.rpn_box_weight,
            roi_cls_weight=self.roi_cls_weight,
            roi_box_weight=self.roi_box_weight,
            roi_batch=self.roi_batch,
            rpn_batch=self.rpn_batch,
            grad_clip=self.grad_clip,
            lr_decay=self.lr_decay,
            lr_decay_at=self.lr_decay_at,
        )

    def match_config(self):
        return EventMatchConfig(self.collar, self.offset_ratio)

    def new_model(self, classes):
        return DetectionModel.create(
            classes,
            seed=self.seed,
            sample_rate=self.sample_rate,
            spectrogram=self.spectrogram(),
            backbone=bb.BackboneConfig(tuple(int(c) for c in self.backbone_channels)),
            rpn=rp.RPNConfig(
                scales=tuple(self.anchor_scales),
                ratios=tuple(self.anchor_ratios),
                hidden=self.rpn_hidden,
                batch=self.rpn_batch,
                pre_nms_top=self.rpn_pre_nms_top,
                nms_thresh=self.rpn_nms,
                post_nms_top=self.rpn_post_nms_top,
            ),
            roi=rh.RoIConfig(
                pooled=self.roi_pool_size,
                hidden=self.roi_hidden,
                score_thresh=self.score_thresh,
                class_nms=self.class_nms,
                batch=self.roi_batch,
            ),
        )

    def dumps(self):
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            out.append(f"{f.name} = {', '.join(str(x) for x in v) if isinstance(v, tuple) else v}")
        return "\n".join(out) + "\n"


class ConfigError(ValueError):
    pass


def parse_class_specs(text):
    specs = []
    for item in (s.strip() for s in text.split(",")):
        if not item:
            continue
        parts = item.split(":")
        if len(parts) not in (5, 6):
            raise ConfigError(
                f"bad event class {item!r}: expected name:center_hz:bandwidth_hz:min_s:max_s[:harmonics]"
            )
        try:
            name = parts[0]
            center, bw, lo, hi = (float(p) for p in parts[1:5])
            harmonics = int(parts[5]) if len(parts) == 6 else 1
        except ValueError as exc:
            raise ConfigError(f"bad event class {item!r}: {exc}") from exc
        specs.append(ClassSpec(name, center, bw, (lo, hi), harmonics))
    if not specs:
        raise ConfigError("event_classes is empty")
    return specs


def _convert(name, default, raw):
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            kind = type(default[0]) if default else float
            return tuple(kind(s) for s in items)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {type(default).__name__}") from exc


def parse_config(text, base=None):
    """Parse ``key = value`` lines ('#' starts a comment); unknown keys are rejected."""
    cfg = base or RunConfig()
    known = {f.name: f for f in fields(RunConfig)}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        setattr(cfg, key, _convert(key, getattr(RunConfig, key), raw))
    return cfg


def load_config(path=None, **overrides):
    cfg = RunConfig()
    if path:
        with open(path) as fh:
            cfg = parse_config(fh.read(), cfg)
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    return cfg
