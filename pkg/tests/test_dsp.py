import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eventness import dsp
from eventness.dsp import MelSpectrogram, SpectrogramParams, Waveform

SR = 22050
P = SpectrogramParams()


def mel(values):
    return MelSpectrogram(np.asarray(values, dtype=float), P, SR)


def test_stft_of_silence():
    mag = dsp.stft_magnitude(Waveform(np.zeros(SR), SR))
    assert mag.shape == (1025, 20)
    assert not mag.any()


def test_stft_bin_frequency_matches_direct_dft():
    k = 93
    t = np.arange(4096) / SR
    x = np.sin(2 * np.pi * k * SR / 2048 * t)
    mag = dsp.stft_magnitude(Waveform(x, SR))
    assert np.all(mag.argmax(axis=0) == k)
    # one frame against an explicit DFT sum
    n = np.arange(2048)
    frame = x[1024:3072] * (0.5 - 0.5 * np.cos(2 * np.pi * n / 2048))
    direct = abs(np.sum(frame * np.exp(-2j * np.pi * k * n / 2048)))
    assert mag[k, 1] == pytest.approx(direct, rel=1e-10)


def test_frame_count_15s():
    # 1 + (330750 - 2048) // 1024
    assert dsp.n_frames(330750, 2048, 1024) == 321
    assert dsp.stft_magnitude(Waveform(np.zeros(330750), SR)).shape[1] == 321


@given(st.integers(2048, 200_000), st.sampled_from([(2048, 1024), (1024, 256), (512, 512)]))
@settings(max_examples=60, deadline=None)
def test_frame_count_formula(length, fft_hop):
    n_fft, hop = fft_hop
    frames = dsp.frame_signal(np.zeros(length), n_fft, hop)
    assert len(frames) == dsp.n_frames(length, n_fft, hop) == 1 + (length - n_fft) // hop
    assert (len(frames) - 1) * hop + n_fft <= length < len(frames) * hop + n_fft


def test_signal_too_short():
    with pytest.raises(ValueError, match="signal too short"):
        dsp.stft_magnitude(Waveform(np.zeros(100), SR))


def test_hz_mel_inverse():
    f = np.linspace(0, 11025, 57)
    np.testing.assert_allclose(dsp.mel_to_hz(dsp.hz_to_mel(f)), f, atol=1e-9)
    assert dsp.hz_to_mel(700.0) == pytest.approx(2595 * np.log10(2))


def test_filterbank_rows():
    fb = dsp.mel_filterbank(P, SR)
    assert fb.shape == (128, 1025)
    assert np.all(fb >= 0) and np.all(fb.max(axis=1) > 0)
    assert np.all(fb <= 1.0)


def test_single_band_filterbank():
    fb = dsp.mel_filterbank(SpectrogramParams(n_mels=1), SR)
    assert fb.shape == (1, 1025) and fb.max() > 0
    freqs = np.arange(1025) * SR / 2048
    assert fb[0, 0] == 0.0 and fb[0, -1] == 0.0
    assert fb[0, np.argmax(fb[0])] == fb.max()
    assert 0 < freqs[np.argmax(fb[0])] < SR / 2


def test_degenerate_filterbank():
    with pytest.raises(ValueError, match="degenerate filterbank"):
        dsp.mel_filterbank(SpectrogramParams(n_fft=256, hop=128, n_mels=128), SR)


def test_band_center_tone_localizes():
    edges = dsp.mel_band_edges(P, SR)
    t = np.arange(2 * SR) / SR
    for j in np.random.default_rng(0).choice(128, 10, replace=False):
        w = Waveform(0.5 * np.sin(2 * np.pi * edges[j + 1] * t), SR)
        assert int(np.argmax(dsp.log_mel(w).values.mean(axis=1))) == j
        assert dsp.band_of_frequency(edges[j + 1]) == j


def test_log_mel_of_silence():
    m = dsp.log_mel(Waveform(np.zeros(SR), SR))
    np.testing.assert_array_equal(m.values, np.log(1e-10))


def test_log_mel_scaling_shifts_by_log4():
    x = np.random.default_rng(3).standard_normal(SR) * 0.2
    a = dsp.log_mel(Waveform(x, SR)).values
    b = dsp.log_mel(Waveform(2 * x, SR)).values
    np.testing.assert_allclose(b - a, np.log(4.0), atol=1e-6)


def test_log_mel_shape_10s():
    m = dsp.log_mel(Waveform(np.zeros(10 * SR), SR))
    assert m.values.shape == (128, 214)
    assert m.seconds_per_frame == 1024 / 22050


def test_normalize_example():
    out = dsp.normalize_unit(mel([[0, 1], [2, 3]])).values
    np.testing.assert_allclose(out, [[0, 1 / 3], [2 / 3, 1]], atol=1e-15)


def test_normalize_constant():
    assert not dsp.normalize_unit(mel(np.full((3, 4), 7.5))).values.any()


@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=40))
@settings(max_examples=200, deadline=None)
def test_normalize_range_and_idempotence(xs):
    once = dsp.normalize_unit(mel([xs]))
    v = once.values
    assert v.min() >= 0.0 and v.max() <= 1.0
    if np.ptp(xs) > 0:
        assert v.min() == 0.0 and v.max() == 1.0
    np.testing.assert_allclose(dsp.normalize_unit(once).values, v, atol=1e-12)


@pytest.mark.parametrize(
    "x,expected", [(1 / 6, (1, 0, 0)), (0.5, (0, 1, 0)), (1 / 3, (0.5, 0.5, 0)), (5 / 6, (0, 0, 1))]
)
def test_tri_channel_examples(x, expected):
    np.testing.assert_allclose(dsp.tri_channel_values(x), expected, atol=1e-12)


def test_tri_channel_rejects_unnormalized():
    with pytest.raises(ValueError, match="unnormalized input"):
        dsp.tri_channel_values([0.2, 1.2])


def tent_oracle(x):
    return [max(0.0, 1 - abs(x - c) * 3) for c in (1 / 6, 1 / 2, 5 / 6)]


def test_tri_channel_matches_tent_formula():
    xs = np.random.default_rng(1).uniform(0, 1, 1000)
    got = dsp.tri_channel_values(xs)
    ref = np.array([tent_oracle(x) for x in xs]).T
    np.testing.assert_allclose(got, ref, atol=1e-12)


@given(st.floats(0.0, 1.0))
def test_tri_channel_one_or_two_active(x):
    c = dsp.tri_channel_values(x)
    assert 1 <= np.count_nonzero(c > 0) <= 2 or x in (0.0, 1.0)


def test_tri_channel_argmax_is_monotone():
    xs = np.linspace(0, 1, 2001)
    arg = dsp.tri_channel_values(xs).argmax(axis=0)
    assert np.all(np.diff(arg) >= 0)
    assert arg[0] == 0 and arg[-1] == 2


def test_spectrogram_image_contract():
    rng = np.random.default_rng(2)
    img = dsp.spectrogram_image(Waveform(rng.standard_normal(3 * SR) * 0.1, SR))
    assert img.values.shape == (3, 128, 63)
    assert img.values.min() >= 0 and img.values.max() <= 1
    assert img.frame_to_seconds == pytest.approx(1024 / 22050)


def test_waveform_validation():
    with pytest.raises(ValueError):
        Waveform(np.array([0.0, np.nan]), SR)
    with pytest.raises(ValueError):
        Waveform(np.zeros(10), 0)
    with pytest.raises(ValueError):
        SpectrogramParams(hop=4096).validate(SR)
