"""Audio front-end: STFT, HTK mel filterbank, log-mel, [0,1] scaling, tri-channel map."""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LOG_EPS = 1e-10
DEFAULT_SAMPLE_RATE = 22050

# tent centers and half-width of the three intensity channels
CHANNEL_CENTERS = (1.0 / 6.0, 0.5, 5.0 / 6.0)
CHANNEL_HALF_WIDTH = 1.0 / 3.0


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1 or s.size == 0:
            raise ValueError("waveform must be a non-empty 1-D signal")
        if not np.all(np.isfinite(s)):
            raise ValueError("waveform contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def duration(self):
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class SpectrogramParams:
    n_fft: int = 2048
    hop: int = 1024
    n_mels: int = 128
    window_fn: str = "hann"
    f_min: float = 0.0
    f_max: float | None = None  # None -> Nyquist

    def resolved_f_max(self, sample_rate):
        return sample_rate / 2.0 if self.f_max is None else float(self.f_max)

    def validate(self, sample_rate):
        if not 0 < self.hop <= self.n_fft:
            raise ValueError(f"need 0 < hop <= n_fft, got hop={self.hop}, n_fft={self.n_fft}")
        if self.n_mels < 1:
            raise ValueError("n_mels must be >= 1")
        f_max = self.resolved_f_max(sample_rate)
        if not self.f_min < f_max <= sample_rate / 2.0:
            raise ValueError(f"need f_min < f_max <= sample_rate/2, got {self.f_min}, {f_max}")
        if self.window_fn not in WINDOWS:
            raise ValueError(f"unknown window {self.window_fn!r}")

    def seconds_per_frame(self, sample_rate):
        return self.hop / sample_rate


WINDOWS = {
    "hann": lambda n: np.hanning(n + 1)[:-1],  # periodic
    "hamming": lambda n: np.hamming(n + 1)[:-1],
    "rect": np.ones,
}


@dataclass
class MelSpectrogram:
    values: np.ndarray  # [n_mels, n_frames]
    params: SpectrogramParams
    sample_rate: int
    n_samples: int = 0

    @property
    def n_frames(self):
        return self.values.shape[1]

    @property
    def seconds_per_frame(self):
        return self.params.hop / self.sample_rate

    @property
    def duration(self):
        return self.n_samples / self.sample_rate


@dataclass
class TriChannelSpectrogram:
    values: np.ndarray  # [3, n_mels, n_frames]
    frame_to_seconds: float
    band_edges_hz: np.ndarray = field(default=None, repr=False)

    @property
    def n_mels(self):
        return self.values.shape[1]

    @property
    def n_frames(self):
        return self.values.shape[2]


def n_frames(n_samples, n_fft, hop):
    return 1 + (n_samples - n_fft) // hop


def frame_signal(samples, n_fft, hop):
    if samples.size < n_fft:
        raise ValueError(f"signal too short: {samples.size} samples < n_fft={n_fft}")
    return sliding_window_view(samples, n_fft)[::hop]


def stft_magnitude(w, p=SpectrogramParams()):
    """Magnitude STFT, shape [n_fft//2 + 1, n_frames]; frame t starts at t*hop."""
    p.validate(w.sample_rate)
    frames = frame_signal(w.samples, p.n_fft, p.hop)
    spec = np.fft.rfft(frames * WINDOWS[p.window_fn](p.n_fft), axis=1)
    return np.abs(spec).T


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(p, sample_rate):
    """Frequencies (Hz) of the n_mels + 2 triangle corner points."""
    f_max = p.resolved_f_max(sample_rate)
    return mel_to_hz(np.linspace(hz_to_mel(p.f_min), hz_to_mel(f_max), p.n_mels + 2))


def mel_filterbank(p=SpectrogramParams(), sample_rate=DEFAULT_SAMPLE_RATE):
    """Peak-normalized triangular HTK mel filters, shape [n_mels, n_fft//2 + 1]."""
    p.validate(sample_rate)
    edges = mel_band_edges(p, sample_rate)
    freqs = np.arange(p.n_fft // 2 + 1) * sample_rate / p.n_fft
    lo, center, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (center - lo)
    falling = (hi - freqs) / (hi - center)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(fb.max(axis=1) <= 0.0)
    if empty.size:
        raise ValueError(
            f"degenerate filterbank: {empty.size} of {p.n_mels} mel bands cover no FFT bin "
            f"(first empty band {empty[0]}); lower n_mels or raise n_fft"
        )
    return fb


def band_of_frequency(freq, p=SpectrogramParams(), sample_rate=DEFAULT_SAMPLE_RATE):
    """Mel band whose triangle responds most strongly at ``freq`` Hz."""
    edges = mel_band_edges(p, sample_rate)
    lo, center, hi = edges[:-2], edges[1:-1], edges[2:]
    resp = np.maximum(0.0, np.minimum((freq - lo) / (center - lo), (hi - freq) / (hi - center)))
    return int(np.argmax(resp))


def mel_power(w, p=SpectrogramParams(), fb=None):
    """Mel-band power (before the log), shape [n_mels, n_frames]."""
    mag = stft_magnitude(w, p)
    if fb is None:
        fb = mel_filterbank(p, w.sample_rate)
    return fb @ (mag * mag)


def log_mel(w, p=SpectrogramParams(), fb=None):
    """Natural-log mel power spectrogram: log(filterbank @ |STFT|^2 + 1e-10)."""
    values = np.log(mel_power(w, p, fb) + LOG_EPS)
    return MelSpectrogram(values, p, w.sample_rate, w.samples.size)


def normalize_unit(m):
    """Affine rescale to [0,1]; a constant input maps to all zeros."""
    v = m.values
    lo, hi = v.min(), v.max()
    out = np.zeros_like(v) if hi <= lo else (v - lo) / (hi - lo)
    return MelSpectrogram(out, m.params, m.sample_rate, m.n_samples)


def tri_channel_values(x):
    """Tent responses of intensities ``x`` in [0,1]; returns [3, *x.shape]."""
    x = np.asarray(x, dtype=np.float64)
    if x.size and (x.min() < 0.0 or x.max() > 1.0 or not np.all(np.isfinite(x))):
        raise ValueError("unnormalized input: intensities must lie in [0, 1]")
    centers = np.asarray(CHANNEL_CENTERS).reshape((3,) + (1,) * x.ndim)
    return np.maximum(0.0, 1.0 - np.abs(x[None] - centers) / CHANNEL_HALF_WIDTH)


def tri_channel_map(m):
    """Split a normalized mel spectrogram into weak / mid / strong intensity channels."""
    return TriChannelSpectrogram(
        tri_channel_values(m.values),
        m.params.hop / m.sample_rate,
        mel_band_edges(m.params, m.sample_rate),
    )


def spectrogram_image(w, p=SpectrogramParams(), fb=None):
    """Waveform -> TriChannelSpectrogram (log-mel, unit-normalized, tri-channel)."""
    return tri_channel_map(normalize_unit(log_mel(w, p, fb)))
