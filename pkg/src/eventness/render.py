"""Binary PPM (P6) renders of tri-channel spectrograms with box overlays.

Time runs along x (one pixel per frame) and mel bands along y with band 0 on
the bottom row.  Reference events are outlined in green; detections in red
with intensity round(255 * confidence).
"""

import numpy as np

REFERENCE_COLOR = (0, 255, 0)


def event_pixel_rect(event, seconds_per_frame, n_frames, n_mels):
    """Inclusive pixel rectangle (x0, y0, x1, y1) for an event, image row 0 on top."""
    x0 = int(round(event.onset / seconds_per_frame))
    x1 = int(round(event.offset / seconds_per_frame)) - 1
    x0 = min(max(x0, 0), n_frames - 1)
    x1 = min(max(x1, x0), n_frames - 1)
    lo = 0 if event.band_lo is None else max(0, int(event.band_lo))
    hi = n_mels - 1 if event.band_hi is None else min(n_mels - 1, int(event.band_hi))
    hi = max(hi, lo)
    return x0, n_mels - 1 - hi, x1, n_mels - 1 - lo


def _outline(rgb, rect, color):
    x0, y0, x1, y1 = rect
    rgb[y0, x0 : x1 + 1] = color
    rgb[y1, x0 : x1 + 1] = color
    rgb[y0 : y1 + 1, x0] = color
    rgb[y0 : y1 + 1, x1] = color


def spectrogram_rgb(values):
    """[3, n_mels, n_frames] intensities in [0,1] -> uint8 [n_mels, n_frames, 3], low bands at the bottom."""
    rgb = np.round(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)
    return np.ascontiguousarray(rgb.transpose(1, 2, 0)[::-1])


def render(values, seconds_per_frame, references=(), detections=()):
    """Compose the overlay image as a uint8 [height, width, 3] array."""
    rgb = spectrogram_rgb(values)
    n_mels, n_frames = rgb.shape[:2]
    for ref in references:
        _outline(rgb, event_pixel_rect(ref, seconds_per_frame, n_frames, n_mels), REFERENCE_COLOR)
    for det in sorted(detections, key=lambda d: d.confidence):
        red = int(round(255 * min(max(det.confidence, 0.0), 1.0)))
        _outline(rgb, event_pixel_rect(det, seconds_per_frame, n_frames, n_mels), (red, 0, 0))
    return rgb


def ppm_bytes(rgb):
    h, w = rgb.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(rgb, dtype=np.uint8).tobytes()


def read_ppm(data):
    """Parse P6 bytes written by :func:`ppm_bytes` -> uint8 [h, w, 3]."""
    parts = data.split(b"\n", 3)
    if parts[0] != b"P6" or parts[2] != b"255":
        raise ValueError("not a binary 8-bit PPM")
    w, h = (int(v) for v in parts[1].split())
    body = parts[3]
    if len(body) != w * h * 3:
        raise ValueError(f"PPM body has {len(body)} bytes, expected {w * h * 3}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)

