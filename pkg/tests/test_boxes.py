import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from eventness import boxes as bx
from eventness.boxes import Box


def iou_by_pixels(a, b):
    """Exact IoU for integer boxes by counting covered unit cells."""
    grid = np.zeros((2, 64, 64), dtype=bool)
    for k, (t0, f0, t1, f1) in enumerate((a, b)):
        grid[k, t0:t1, f0:f1] = True
    inter = np.count_nonzero(grid[0] & grid[1])
    return inter / np.count_nonzero(grid[0] | grid[1])


def greedy_oracle(boxes, scores, thr):
    order = sorted(range(len(boxes)), key=lambda i: (-scores[i], i))
    kept = []
    for i in order:
        a = Box.from_array(boxes[i])
        if all(bx.iou(a, Box.from_array(boxes[j])) <= thr for j in kept):
            kept.append(i)
    return kept


def random_boxes(rng, n, size=50.0):
    t0, f0 = rng.uniform(0, size, n), rng.uniform(0, size, n)
    return np.stack([t0, f0, t0 + rng.uniform(0.5, 25, n), f0 + rng.uniform(0.5, 25, n)], axis=1)


def test_iou_examples():
    a = Box(0, 2, 0, 2)
    assert bx.iou(a, a) == 1.0
    assert bx.iou(a, Box(5, 6, 5, 6)) == 0.0
    assert bx.iou(a, Box(1, 3, 1, 3)) == pytest.approx(1 / 7, abs=1e-15)
    # edge-touching half-open boxes do not overlap
    assert bx.iou(a, Box(2, 4, 0, 2)) == 0.0


def test_iou_matches_area_arithmetic_1000_pairs():
    rng = np.random.default_rng(0)
    pts = rng.integers(0, 60, size=(1000, 2, 2, 2))
    for p in pts:
        # two corners per box -> (t0, f0, t1, f1), at least one cell wide
        a = (*np.minimum(p[0, 0], p[0, 1]), *np.maximum(p[0, 0], p[0, 1]) + 1)
        b = (*np.minimum(p[1, 0], p[1, 1]), *np.maximum(p[1, 0], p[1, 1]) + 1)
        ref = iou_by_pixels(a, b)
        got = bx.iou(Box.from_array(a), Box.from_array(b))
        assert got == pytest.approx(ref, abs=1e-12)
        assert bx.iou_matrix([a], [b])[0, 0] == pytest.approx(ref, abs=1e-12)


@given(
    st.tuples(*[st.floats(0, 100)] * 2, *[st.floats(0.1, 50)] * 2),
    st.tuples(*[st.floats(0, 100)] * 2, *[st.floats(0.1, 50)] * 2),
)
def test_iou_symmetric_and_bounded(p, q):
    a = Box(p[0], p[0] + p[2], p[1], p[1] + p[3])
    b = Box(q[0], q[0] + q[2], q[1], q[1] + q[3])
    v = bx.iou(a, b)
    assert 0.0 <= v <= 1.0
    assert v == bx.iou(b, a)


def test_degenerate_box_rejected():
    with pytest.raises(ValueError):
        Box(1.0, 1.0, 0.0, 2.0)


def test_decode_identity_and_width_doubling():
    anchors = np.array([[10.0, 4.0, 26.0, 20.0]])
    np.testing.assert_allclose(bx.decode(anchors, np.zeros((1, 4))), anchors)
    out = bx.decode(anchors, [[0, 0, math.log(2), 0]])[0]
    assert out[2] - out[0] == pytest.approx(32.0)
    assert (out[0] + out[2]) / 2 == pytest.approx(18.0)


def test_decode_clips_to_bounds():
    out = bx.decode([[-10.0, -10.0, 30.0, 30.0]], np.zeros((1, 4)), bounds=(20, 16))[0]
    assert out.tolist() == [0.0, 0.0, 20.0, 16.0]


def test_decode_rejects_non_finite():
    with pytest.raises(ValueError, match="non-finite"):
        bx.decode([[0.0, 0.0, 1.0, 1.0]], [[np.nan, 0, 0, 0]])


def test_encode_decode_round_trip():
    rng = np.random.default_rng(1)
    gt, anchors = random_boxes(rng, 500), random_boxes(rng, 500)
    back = bx.decode(anchors, bx.encode(gt, anchors))
    assert np.max(np.abs(back - gt)) <= 1e-9


def test_nms_examples():
    one = np.array([[0.0, 0.0, 4.0, 4.0]])
    assert bx.nms(one, [0.3], 0.5).tolist() == [0]
    two = np.repeat(one, 2, axis=0)
    assert bx.nms(two, [0.9, 0.8], 0.5).tolist() == [0]
    assert bx.nms(two, [0.8, 0.9], 0.5).tolist() == [1]
    # equal scores: lower index wins
    assert bx.nms(two, [0.5, 0.5], 0.5).tolist() == [0]


def test_nms_matches_greedy_oracle():
    rng = np.random.default_rng(2)
    for n in list(range(1, 51)) * 4:
        boxes = random_boxes(rng, n, size=30.0)
        scores = np.round(rng.uniform(size=n), 1)  # ties included
        thr = float(rng.choice([0.3, 0.5, 0.7]))
        assert bx.nms(boxes, scores, thr).tolist() == greedy_oracle(boxes, scores, thr)


def test_nms_output_pairwise_iou():
    rng = np.random.default_rng(3)
    boxes = random_boxes(rng, 60)
    keep = bx.nms(boxes, rng.uniform(size=60), 0.4)
    ious = bx.iou_matrix(boxes[keep], boxes[keep])
    assert np.all(ious[~np.eye(len(keep), dtype=bool)] <= 0.4)
