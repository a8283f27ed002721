"""Synthetic labeled scenes: one or two bank events embedded in background noise."""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dsp
from .dsp import SpectrogramParams, Waveform
from .events import Annotation

EVENT_PEAK = 0.5
BACKGROUND_RMS = 0.1
FADE_SECONDS = 0.01
BAND_COVERAGE = 0.95


@dataclass(frozen=True)
class EventClip:
    class_label: str
    waveform: Waveform
    band_lo: int | None = None
    band_hi: int | None = None

    @property
    def duration(self):
        return self.waveform.duration


@dataclass(frozen=True)
class ClassSpec:
    """Stand-in event class: a (harmonic) tone burst or a band-limited noise burst.

    ``bandwidth_hz == 0`` gives a tone with ``harmonics`` equal-amplitude partials
    at multiples of ``center_hz``; otherwise white noise band-passed to
    ``center_hz +/- bandwidth_hz/2``.
    """

    name: str
    center_hz: float
    bandwidth_hz: float = 0.0
    duration: tuple = (0.5, 2.0)
    harmonics: int = 1

    def top_frequency(self):
        if self.bandwidth_hz > 0:
            return self.center_hz + self.bandwidth_hz / 2.0
        return self.center_hz * self.harmonics


@dataclass(frozen=True)
class SceneSpec:
    duration: float = 10.0
    polyphonic_prob: float = 0.30
    event_gain_db: tuple = (0.0, 0.0)
    background_gain_db: tuple = (-6.0, -6.0)
    sample_rate: int = dsp.DEFAULT_SAMPLE_RATE
    seed: int = 0

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("scene duration must be positive")
        if not 0.0 <= self.polyphonic_prob <= 1.0:
            raise ValueError("polyphonic_prob must lie in [0, 1]")
        for lo, hi in (self.event_gain_db, self.background_gain_db):
            if lo > hi:
                raise ValueError(f"gain range ({lo}, {hi}) is inverted")

    @property
    def n_samples(self):
        return int(round(self.duration * self.sample_rate))


@dataclass
class SyntheticScene:
    waveform: Waveform
    annotations: list
    provenance: dict = field(default_factory=dict)

    @property
    def polyphonic(self):
        return len(self.annotations) > 1


def db_to_gain(db):
    return 10.0 ** (db / 20.0)


def band_extent(w, params=SpectrogramParams(), coverage=BAND_COVERAGE):
    """Smallest inclusive mel-band interval holding ``coverage`` of the band energy.

    Ties between equally narrow intervals go to the one with more energy, then
    to the lower band.  Silent clips span every band.
    """
    samples = w.samples
    if samples.size < params.n_fft:
        samples = np.pad(samples, (0, params.n_fft - samples.size))
    energy = dsp.mel_power(Waveform(samples, w.sample_rate), params).sum(axis=1)
    n = energy.size
    total = energy.sum()
    if total <= 0:
        return 0, n - 1
    csum = np.concatenate([[0.0], np.cumsum(energy)])
    need = coverage * total
    for width in range(1, n + 1):
        sums = csum[width:] - csum[:-width]
        ok = np.flatnonzero(sums >= need * (1 - 1e-12))
        if ok.size:
            lo = int(ok[np.argmax(sums[ok])])
            return lo, lo + width - 1
    return 0, n - 1


def _fade(x, sample_rate):
    n = min(int(FADE_SECONDS * sample_rate), x.size // 2)
    if n > 0:
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(n) / n)
        x[:n] *= ramp
        x[-n:] *= ramp[::-1]
    return x


def _burst(spec, n, sample_rate, rng):
    if spec.bandwidth_hz > 0:
        noise = rng.standard_normal(n)
        spectrum = np.fft.rfft(noise)
        freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
        lo = spec.center_hz - spec.bandwidth_hz / 2.0
        hi = spec.center_hz + spec.bandwidth_hz / 2.0
        spectrum[(freqs < lo) | (freqs > hi)] = 0.0
        x = np.fft.irfft(spectrum, n)
    else:
        t = np.arange(n) / sample_rate
        x = np.zeros(n)
        for k in range(1, spec.harmonics + 1):
            x += np.sin(2 * np.pi * k * spec.center_hz * t + rng.uniform(0, 2 * np.pi))
    x = _fade(x, sample_rate)
    peak = np.abs(x).max()
    return x * (EVENT_PEAK / peak) if peak > 0 else x


def tone_burst_bank(
    classes, rng, sample_rate=dsp.DEFAULT_SAMPLE_RATE, per_class=4, params=SpectrogramParams()
):
    """Build ``per_class`` clips for each :class:`ClassSpec`, labelled by class name."""
    nyquist = sample_rate / 2.0
    bank = []
    for spec in classes:
        if spec.top_frequency() >= nyquist:
            raise ValueError(
                f"class {spec.name!r}: frequency {spec.top_frequency():g} Hz is above Nyquist "
                f"({nyquist:g} Hz)"
            )
        if spec.bandwidth_hz > 0 and spec.center_hz - spec.bandwidth_hz / 2.0 < 0:
            raise ValueError(f"class {spec.name!r}: band extends below 0 Hz")
        if spec.center_hz <= 0 or spec.harmonics < 1:
            raise ValueError(f"class {spec.name!r}: center frequency and harmonics must be positive")
        d_lo, d_hi = spec.duration
        if not 0 < d_lo <= d_hi:
            raise ValueError(f"class {spec.name!r}: invalid duration range {spec.duration}")
        for _ in range(per_class):
            n = max(1, int(round(rng.uniform(d_lo, d_hi) * sample_rate)))
            w = Waveform(_burst(spec, n, sample_rate, rng), sample_rate)
            lo, hi = band_extent(w, params)
            bank.append(EventClip(spec.name, w, lo, hi))
    return bank


def noise_background_bank(count, duration, rng, sample_rate=dsp.DEFAULT_SAMPLE_RATE, color="pink"):
    """Stationary noise beds scaled to a fixed RMS."""
    n = int(round(duration * sample_rate))
    bank = []
    for _ in range(count):
        x = rng.standard_normal(n)
        if color == "pink":
            spectrum = np.fft.rfft(x)
            f = np.fft.rfftfreq(n, 1.0 / sample_rate)
            f[0] = f[1]
            x = np.fft.irfft(spectrum / np.sqrt(f), n)
        elif color != "white":
            raise ValueError(f"unknown noise color {color!r}")
        x *= BACKGROUND_RMS / np.sqrt(np.mean(x * x))
        bank.append(Waveform(x, sample_rate))
    return bank


def load_event_bank(directory, params=SpectrogramParams()):
    """Events from ``directory/<class>/*.wav``."""
    from .fileio import read_wav

    bank = []
    for class_dir in sorted(p for p in Path(directory).iterdir() if p.is_dir()):
        for path in sorted(class_dir.glob("*.wav")):
            w = read_wav(path)
            lo, hi = band_extent(w, params)
            bank.append(EventClip(class_dir.name, w, lo, hi))
    if not bank:
        raise ValueError(f"no event WAVs found under {directory}/<class>/")
    return bank


def load_background_bank(directory):
    from .fileio import read_wav

    bank = [read_wav(p) for p in sorted(Path(directory).glob("*.wav"))]
    if not bank:
        raise ValueError(f"no background WAVs found in {directory}")
    return bank


def _check_banks(spec, events, backgrounds):
    if not events:
        raise ValueError("event bank is empty")
    if not backgrounds:
        raise ValueError("background bank is empty")
    for clip in events:
        if clip.waveform.sample_rate != spec.sample_rate:
            raise ValueError(
                f"sample-rate mismatch: event at {clip.waveform.sample_rate} Hz, "
                f"scene at {spec.sample_rate} Hz"
            )
        if clip.waveform.samples.size > spec.n_samples:
            raise ValueError(
                f"event of {clip.duration:.3f} s ({clip.class_label}) is longer than the "
                f"{spec.duration:g} s scene"
            )
    for bg in backgrounds:
        if bg.sample_rate != spec.sample_rate:
            raise ValueError(
                f"sample-rate mismatch: background at {bg.sample_rate} Hz, "
                f"scene at {spec.sample_rate} Hz"
            )


def _background_segment(bg, start, n):
    x = bg.samples
    if x.size < n:
        x = np.tile(x, -(-n // x.size) + 1)
    return x[start : start + n]


def remix(provenance, events, backgrounds, n_samples):
    """Re-sum background and events from a scene's provenance, before clipping."""
    bg = backgrounds[provenance["background"]]
    mix = db_to_gain(provenance["background_gain_db"]) * _background_segment(
        bg, provenance["background_start"], n_samples
    )
    for placed in provenance["events"]:
        x = events[placed["event"]].waveform.samples
        start = placed["start"]
        mix[start : start + x.size] += db_to_gain(placed["gain_db"]) * x
    return mix


def synthesize_scene(spec, events, backgrounds, rng):
    """Mix one or two randomly placed bank events into a background segment."""
    _check_banks(spec, events, backgrounds)
    n = spec.n_samples
    sr = spec.sample_rate
    n_events = 2 if rng.random() < spec.polyphonic_prob else 1

    b = int(rng.integers(len(backgrounds)))
    bg_len = backgrounds[b].samples.size
    bg_start = int(rng.integers(0, bg_len - n + 1)) if bg_len >= n else 0
    bg_gain = float(rng.uniform(*spec.background_gain_db))

    placed = []
    for _ in range(n_events):
        e = int(rng.integers(len(events)))
        length = events[e].waveform.samples.size
        start = int(rng.integers(0, n - length + 1))
        gain = float(rng.uniform(*spec.event_gain_db))
        placed.append({"event": e, "start": start, "gain_db": gain})

    provenance = {
        "background": b,
        "background_start": bg_start,
        "background_gain_db": bg_gain,
        "events": placed,
    }
    mix = remix(provenance, events, backgrounds, n)
    clipped = int(np.count_nonzero(np.abs(mix) > 1.0))
    provenance["clipped_samples"] = clipped

    annotations = []
    for p in placed:
        clip = events[p["event"]]
        annotations.append(
            Annotation(
                clip.class_label,
                p["start"] / sr,
                (p["start"] + clip.waveform.samples.size) / sr,
                clip.band_lo,
                clip.band_hi,
            )
        )
    return SyntheticScene(Waveform(np.clip(mix, -1.0, 1.0), sr), annotations, provenance)


def scene_filename(index):
    return f"scene_{index:05d}.wav"


def worker_count():
    try:
        return max(1, int(os.environ.get("EVENTNESS_THREADS", "1")))
    except ValueError:
        return 1


def synthesize_dataset(n_scenes, spec, events, backgrounds, seed=None, workers=None):
    """Generate ``n_scenes`` scenes with per-scene seeds derived from one master seed.

    Returns (scenes, manifest rows).  Output is identical for any worker count.
    """
    _check_banks(spec, events, backgrounds)
    seed = spec.seed if seed is None else seed
    children = np.random.SeedSequence(seed).spawn(n_scenes)

    def one(i):
        scene = synthesize_scene(spec, events, backgrounds, np.random.default_rng(children[i]))
        scene.provenance["seed"] = [int(seed), i]
        return scene

    workers = workers or worker_count()
    if workers > 1 and n_scenes > 1:
        with ThreadPoolExecutor(workers) as pool:
            scenes = list(pool.map(one, range(n_scenes)))
    else:
        scenes = [one(i) for i in range(n_scenes)]

    manifest = []
    for i, scene in enumerate(scenes):
        manifest.extend(a.to_row(scene_filename(i)) for a in scene.annotations)
    return scenes, manifest


def polyphonic_fraction(scenes):
    return sum(s.polyphonic for s in scenes) / max(1, len(scenes))
