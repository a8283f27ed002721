"""WAV (16-bit PCM mono) and JSON Lines reading/writing, with atomic file writes."""

import contextlib
import json
import os
import tempfile
import wave
from pathlib import Path

import numpy as np

from .dsp import Waveform


class DataError(ValueError):
    """Malformed input data (bad WAV, bad JSONL line, missing fields)."""


@contextlib.contextmanager
def atomic_write(path, mode="w"):
    """Write to a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, mode) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def pcm16_from_float(samples):
    """Quantize [-1, 1] floats to int16 (x * 32768, rounded, saturated)."""
    q = np.round(np.asarray(samples, dtype=np.float64) * 32768.0)
    return np.clip(q, -32768, 32767).astype("<i2")


def write_wav(path, w):
    data = pcm16_from_float(w.samples).tobytes()
    with atomic_write(path, "wb") as fh:
        with wave.open(fh, "wb") as out:
            out.setnchannels(1)
            out.setsampwidth(2)
            out.setframerate(w.sample_rate)
            out.writeframes(data)


def read_wav(path):
    """Read a 16-bit PCM mono WAV as samples / 32768."""
    try:
        with wave.open(str(path), "rb") as fh:
            if fh.getnchannels() != 1:
                raise DataError(f"{path}: expected mono, found {fh.getnchannels()} channels")
            if fh.getsampwidth() != 2:
                raise DataError(f"{path}: expected 16-bit PCM, found {8 * fh.getsampwidth()}-bit")
            rate = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except wave.Error as exc:
        raise DataError(f"{path}: {exc}") from exc
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if samples.size == 0:
        raise DataError(f"{path}: no audio samples")
    return Waveform(samples, rate)


def wav_duration(path):
    with wave.open(str(path), "rb") as fh:
        return fh.getnframes() / fh.getframerate()


def read_jsonl(path, required=()):
    """Parse a JSON Lines file; blank lines are skipped.  Errors name the line."""
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            if not isinstance(row, dict):
                raise DataError(f"{path}:{lineno}: expected a JSON object")
            missing = [k for k in required if k not in row]
            if missing:
                raise DataError(f"{path}:{lineno}: missing field(s) {', '.join(missing)}")
            rows.append(row)
    return rows


def write_jsonl(path, rows):
    with atomic_write(path) as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
