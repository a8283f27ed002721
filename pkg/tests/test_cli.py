import json

import numpy as np
import pytest

from eventness import cli, render
from eventness.config import ConfigError, RunConfig, parse_class_specs, parse_config
from eventness.dsp import Waveform
from eventness.events import Annotation, EventDetection
from eventness.fileio import DataError, pcm16_from_float, read_jsonl, read_wav, write_jsonl, write_wav

SR = 22050


# -- config ------------------------------------------------------------------


def test_parse_config_types_and_comments():
    cfg = parse_config("lr = 0.01  # faster\n\niterations=20\nanchor_scales = 1, 2\nseed = 9\n")
    assert (cfg.lr, cfg.iterations, cfg.seed) == (0.01, 20, 9)
    assert cfg.anchor_scales == (1.0, 2.0)
    assert cfg.n_mels == RunConfig.n_mels


def test_parse_config_errors_name_the_line():
    with pytest.raises(ConfigError, match="line 2: unknown key 'learning_rate'"):
        parse_config("lr = 0.1\nlearning_rate = 0.1\n")
    with pytest.raises(ConfigError, match="line 1: expected key = value"):
        parse_config("lr 0.1\n")
    with pytest.raises(ConfigError, match="iterations"):
        parse_config("iterations = many\n")


def test_config_dump_round_trips():
    cfg = RunConfig(lr=0.02, anchor_ratios=(0.5, 1.0), background_color="white")
    assert parse_config(cfg.dumps()) == cfg


def test_class_specs():
    a, b = parse_class_specs("tone:800:0:0.5:2.0:3, noise:5000:3000:0.5:2")
    assert (a.name, a.harmonics, b.harmonics) == ("tone", 3, 1)
    assert b.duration == (0.5, 2.0)
    for bad in ("", "tone:800", "tone:x:0:1:2"):
        with pytest.raises(ConfigError):
            parse_class_specs(bad)


# -- file IO -----------------------------------------------------------------


def test_wav_round_trip(tmp_path):
    x = np.sin(np.linspace(0, 100, 5000)) * 0.5
    write_wav(tmp_path / "a.wav", Waveform(x, SR))
    w = read_wav(tmp_path / "a.wav")
    assert w.sample_rate == SR and w.samples.size == 5000
    assert np.max(np.abs(w.samples - x)) <= 0.5 / 32768 + 1e-15


def test_pcm16_saturates():
    assert pcm16_from_float([1.0, -1.0, 2.0, 0.0]).tolist() == [32767, -32768, 32767, 0]


def test_bad_wav_is_a_data_error(tmp_path):
    p = tmp_path / "bad.wav"
    p.write_bytes(b"not a wav file at all")
    with pytest.raises(DataError):
        read_wav(p)


def test_jsonl_errors(tmp_path):
    p = tmp_path / "x.jsonl"
    p.write_text('{"file": "a", "class": "x", "onset": 0, "offset": 1}\n\n{oops\n')
    with pytest.raises(DataError, match=r"x\.jsonl:3: malformed JSON"):
        read_jsonl(p)
    p.write_text('{"file": "a"}\n')
    with pytest.raises(DataError, match="missing field"):
        read_jsonl(p, ("file", "class"))
    p.write_text("[1, 2]\n")
    with pytest.raises(DataError, match="JSON object"):
        read_jsonl(p)


def test_event_rows_round_trip(tmp_path):
    ann = Annotation("dog", 0.25, 1.5, 3, 40)
    det = EventDetection("dog", 0.3, 1.4, 2, 38, 0.75)
    write_jsonl(tmp_path / "e.jsonl", [ann.to_row("a.wav"), det.to_row("a.wav")])
    r0, r1 = read_jsonl(tmp_path / "e.jsonl")
    assert Annotation.from_row(r0) == ann
    assert EventDetection.from_row(r1) == det


# -- render ------------------------------------------------------------------


def test_render_plain_dimensions():
    values = np.random.default_rng(0).uniform(size=(3, 16, 40))
    rgb = render.render(values, 0.05)
    assert rgb.shape == (16, 40, 3) and rgb.dtype == np.uint8
    # band 0 is drawn on the bottom row
    np.testing.assert_array_equal(rgb[-1, :, 0], np.round(values[0, 0] * 255))
    back = render.read_ppm(render.ppm_bytes(rgb))
    np.testing.assert_array_equal(back, rgb)


def test_render_outline_colors():
    values = np.zeros((3, 16, 40))
    rgb = render.render(
        values,
        0.1,
        references=[Annotation("x", 0.5, 1.5, 2, 6)],
        detections=[EventDetection("x", 2.0, 3.0, 8, 12, 1.0), EventDetection("x", 1.0, 1.2, 1, 1, 0.5)],
    )
    assert tuple(rgb[16 - 1 - 2, 5]) == (0, 255, 0)
    assert tuple(rgb[16 - 1 - 12, 20]) == (255, 0, 0)
    assert tuple(rgb[16 - 1 - 1, 10]) == (128, 0, 0)


# -- command line ------------------------------------------------------------


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert cli.main(["synth", "--out", str(out), "--n", "10", "--seed", "7"]) == 0
    return out


def test_synth_writes_clips_and_manifest(synth_dir):
    assert len(list(synth_dir.glob("*.wav"))) == 10
    rows = read_jsonl(synth_dir / "manifest.jsonl")
    assert 10 <= len(rows) <= 20
    for row in rows:
        assert (synth_dir / row["file"]).exists()
        assert 0 <= row["onset"] < row["offset"] <= 10.0


def test_synth_is_byte_identical(synth_dir, tmp_path):
    assert cli.main(["synth", "--out", str(tmp_path), "--n", "10", "--seed", "7"]) == 0
    for p in sorted(synth_dir.iterdir()):
        assert (tmp_path / p.name).read_bytes() == p.read_bytes(), p.name


def test_eval_self_match(synth_dir, capsys):
    m = str(synth_dir / "manifest.jsonl")
    assert cli.main(["eval", m, m, "--json", str(synth_dir / "report.json")]) == 0
    overall = json.loads((synth_dir / "report.json").read_text())["Overall"]
    assert overall["segment_based"]["er"] == 0.0 and overall["event_based"]["f1"] == 1.0
    assert "Overall" in capsys.readouterr().out


def test_eval_malformed_input_exit_code(tmp_path, capsys):
    good = tmp_path / "ref.jsonl"
    good.write_text('{"file": "a.wav", "class": "x", "onset": 0, "offset": 1}\n')
    bad = tmp_path / "sys.jsonl"
    bad.write_text('{"file": "a.wav", "class": "x", "onset": 0, "offset": 1}\n{"file": \n')
    assert cli.main(["eval", str(good), str(bad), "--duration", "5"]) == 2
    assert "sys.jsonl:2" in capsys.readouterr().err


def test_usage_errors_exit_1(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["synth"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code == 1
    assert cli.main(["synth", "--out", str(tmp_path), "--n", "0"]) == 1
    cfg = tmp_path / "c.cfg"
    cfg.write_text("no_such_key = 1\n")
    assert cli.main(["synth", "--out", str(tmp_path), "--config", str(cfg)]) == 1
    capsys.readouterr()


def test_missing_file_exit_2(tmp_path):
    assert cli.main(["eval", str(tmp_path / "nope.jsonl"), str(tmp_path / "nope.jsonl")]) == 2


def test_train_detect_render_round(synth_dir, tmp_path, capsys):
    ckpt = tmp_path / "m.json"
    cfg = tmp_path / "small.cfg"
    cfg.write_text("backbone_channels = 4, 4, 4, 4\nrpn_hidden = 8\nroi_hidden = 16\n")
    args = ["train", str(synth_dir / "manifest.jsonl"), "--out", str(ckpt), "--iterations", "2"]
    assert cli.main(args + ["--config", str(cfg), "--loss-log", str(tmp_path / "loss.jsonl")]) == 0
    assert len(read_jsonl(tmp_path / "loss.jsonl")) == 2

    silence = tmp_path / "silence.wav"
    write_wav(silence, Waveform(np.zeros(SR * 4), SR))
    out = tmp_path / "det.jsonl"
    assert cli.main(["detect", str(ckpt), str(silence), "--out", str(out), "--score-thresh", "0.99"]) == 0
    assert all(r["score"] >= 0.99 for r in read_jsonl(out))

    wav = sorted(synth_dir.glob("*.wav"))[0]
    img = tmp_path / "r.ppm"
    m = str(synth_dir / "manifest.jsonl")
    assert cli.main(["render", str(wav), "--annotations", m, "--out", str(img)]) == 0
    rgb = render.read_ppm(img.read_bytes())
    assert rgb.shape == (128, 214, 3)
    capsys.readouterr()
