import numpy as np
import pytest

from eventness import autodiff as ad
from eventness import boxes as bx
from eventness import rpn
from eventness.rpn import IGNORE, NEGATIVE, POSITIVE, RPNConfig


def test_anchor_count_8x20():
    assert len(rpn.generate_anchors(8, 20, 16)) == 1440


def test_anchor_count_random_shapes():
    rng = np.random.default_rng(0)
    for _ in range(20):
        h, w = (int(v) for v in rng.integers(1, 40, 2))
        a = rpn.generate_anchors(h, w, 16)
        assert len(a) == h * w * 9
        assert a.boxes.shape == (h * w * 9, 4)


def test_anchor_shapes_and_order():
    a = rpn.generate_anchors(2, 3, 16)
    w = a.boxes[:, 2] - a.boxes[:, 0]
    h = a.boxes[:, 3] - a.boxes[:, 1]
    square = a.ratio_index == 1
    np.testing.assert_allclose(w[square], h[square])
    np.testing.assert_allclose(np.unique(w[square]), [16, 32, 64])
    # ratio is height:width; area is preserved
    np.testing.assert_allclose(h / w, np.tile([0.5, 1, 2], 18))
    np.testing.assert_allclose(w * h, (16 * 2.0 ** a.scale_index) ** 2)
    # (row, col, type) ordering, centered on cell centers
    k = 9
    assert a.cell[k * 4].tolist() == [1, 1]
    cx = (a.boxes[:, 0] + a.boxes[:, 2]) / 2
    cy = (a.boxes[:, 1] + a.boxes[:, 3]) / 2
    np.testing.assert_allclose(cx, (a.cell[:, 1] + 0.5) * 16)
    np.testing.assert_allclose(cy, (a.cell[:, 0] + 0.5) * 16)


def test_inside_flags():
    a = rpn.generate_anchors(8, 20, 16, image_shape=(128, 322))
    b = a.boxes
    expect = (b[:, 0] >= 0) & (b[:, 1] >= 0) & (b[:, 2] <= 322) & (b[:, 3] <= 128)
    np.testing.assert_array_equal(a.inside, expect)
    assert 0 < a.inside.sum() < len(a)


def test_label_thresholds_example():
    ious = np.array([[0.8], [0.5], [0.2], [0.71], [0.1]])
    labels, _ = rpn.label_anchors(ious)
    assert labels.tolist() == [POSITIVE, IGNORE, NEGATIVE, POSITIVE, NEGATIVE]


def test_best_anchor_is_positive_even_below_threshold():
    ious = np.array([[0.4, 0.0], [0.2, 0.1], [0.4, 0.05]])
    labels, match = rpn.label_anchors(ious)
    # gt0 best at rows 0 and 2 (tie), gt1 best at row 1
    assert labels.tolist() == [POSITIVE, POSITIVE, POSITIVE]
    assert match.tolist() == [0, 1, 0]


def test_exact_anchor_match_gets_zero_deltas():
    a = rpn.generate_anchors(4, 6, 16)
    gt = a.boxes[30:31]
    labels, targets = rpn.assign_targets(a, gt, np.random.default_rng(0))
    assert labels[30] == POSITIVE
    np.testing.assert_allclose(targets[30], 0.0, atol=1e-15)


def test_no_gt_gives_no_positives():
    a = rpn.generate_anchors(4, 6, 16)
    labels, _ = rpn.assign_targets(a, np.zeros((0, 4)), np.random.default_rng(0))
    assert not np.any(labels == POSITIVE)
    assert np.count_nonzero(labels == NEGATIVE) == min(256, len(a))


def test_subsample_caps():
    rng = np.random.default_rng(1)
    labels = np.array([POSITIVE] * 300 + [NEGATIVE] * 500)
    out = rpn.subsample(labels, 256, 0.5, rng)
    assert np.count_nonzero(out == POSITIVE) == 128
    assert np.count_nonzero(out == NEGATIVE) == 128
    few = np.array([POSITIVE] * 10 + [NEGATIVE] * 500)
    out = rpn.subsample(few, 256, 0.5, rng)
    assert np.count_nonzero(out == POSITIVE) == 10
    assert np.count_nonzero(out == NEGATIVE) == 246


def head_setup(h=3, w=4, c=5, hidden=6, seed=0):
    rng = np.random.default_rng(seed)
    cfg = RPNConfig(hidden=hidden)
    params = rpn.init_params(cfg, c, rng)
    feats = ad.Tensor(rng.standard_normal((c, h, w)))
    return cfg, params, feats


def test_head_shapes_and_ordering():
    cfg, params, feats = head_setup()
    logits, deltas = rpn.rpn_head(feats, params, 9)
    assert logits.shape == (3 * 4 * 9, 2) and deltas.shape == (3 * 4 * 9, 4)
    # row (i, j, k) of logits is channel (k*2 + c) of the 1x1 conv output at (i, j)
    t = ad.relu(ad.conv2d(feats, params["rpn.conv.weight"], params["rpn.conv.bias"], padding=1))
    cls = ad.conv2d(t, params["rpn.cls.weight"], params["rpn.cls.bias"]).data
    i, j, k = 2, 1, 7
    row = (i * 4 + j) * 9 + k
    np.testing.assert_allclose(logits.data[row], cls[2 * k : 2 * k + 2, i, j])
    scores, d = rpn.rpn_forward(feats, params)
    assert scores.shape == (3, 4, 9) and d.shape == (3, 4, 9, 4)
    assert np.all((scores >= 0) & (scores <= 1))


def test_proposals_within_bounds_and_separated():
    cfg, params, feats = head_setup(h=4, w=8)
    anchors = rpn.generate_anchors(4, 8, 16)
    props = rpn.propose(feats, anchors, params, (64, 128), RPNConfig(hidden=6, post_nms_top=50))
    assert 0 < len(props) <= 50
    b = np.array([p.box.as_array() for p in props])
    assert b[:, [0, 2]].min() >= 0 and b[:, 2].max() <= 128
    assert b[:, [1, 3]].min() >= 0 and b[:, 3].max() <= 64
    ious = bx.iou_matrix(b, b)
    assert np.all(ious[~np.eye(len(b), dtype=bool)] <= 0.7)
    s = [p.eventness_score for p in props]
    assert s == sorted(s, reverse=True)


def test_propose_rejects_grid_mismatch():
    cfg, params, feats = head_setup()
    with pytest.raises(ValueError):
        rpn.propose(feats, rpn.generate_anchors(5, 5, 16), params, (64, 64), RPNConfig(hidden=6))
