import time

import numpy as np
import pytest

from eventness import pipeline, synth
from eventness.cli import build_banks
from eventness.config import RunConfig

_ACCEPTANCE = []


def record_acceptance(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    _ACCEPTANCE.append((number, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)


def numerical_gradient(f, x, h=1e-5):
    """Central differences of scalar f() w.r.t. every entry of array x (in place)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        grad[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


def default_corpus(n_scenes, seed=0):
    """Scenes from the default configuration: 2 classes, 10 s clips."""
    cfg = RunConfig(seed=seed)
    events, backgrounds = build_banks(cfg)
    scenes, manifest = synth.synthesize_dataset(n_scenes, cfg.scene_spec(), events, backgrounds, seed=seed)
    return cfg, scenes, manifest


def _train_and_detect(train_scenes, eval_scenes, cfg):
    start = time.perf_counter()
    data = [(s.waveform, s.annotations) for s in train_scenes]
    model, history = pipeline.train(data, cfg.train_config(), model=cfg.new_model(sorted({"tone", "noise"})))
    detections = [pipeline.detect(model, s.waveform) for s in eval_scenes]
    elapsed = time.perf_counter() - start
    clips = [(s.annotations, d, s.waveform.duration) for s, d in zip(eval_scenes, detections)]
    return model, history, clips, elapsed


@pytest.fixture(scope="session")
def overfit_run():
    """Default-config training on 10 clips, scored on the same clips."""
    cfg, scenes, _ = default_corpus(10)
    return (cfg,) + _train_and_detect(scenes, scenes, cfg)


@pytest.fixture(scope="session")
def heldout_run():
    """Default-config training on 40 clips, scored on 10 unseen clips."""
    cfg, scenes, _ = default_corpus(50)
    return (cfg,) + _train_and_detect(scenes[:40], scenes[40:], cfg)


@pytest.fixture(scope="session")
def small_bank():
    rng = np.random.default_rng(5)
    classes = [
        synth.ClassSpec("tone", 800.0, 0.0, (0.5, 2.0), harmonics=3),
        synth.ClassSpec("noise", 5000.0, 3000.0, (0.5, 2.0)),
    ]
    bank = synth.tone_burst_bank(classes, rng, per_class=2)
    backgrounds = synth.noise_background_bank(2, 12.0, rng)
    return bank, backgrounds
