"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba versions are used when numba imports cleanly and the environment
variable ``EVENTNESS_DISABLE_JIT`` is unset (or ``0``).  Both variants of every
kernel are importable under explicit names (``*_nb`` / ``*_np``) so they can be
compared against each other in tests and benchmarks.
"""

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

try:
    import numba
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

JIT_DISABLED = os.environ.get("EVENTNESS_DISABLE_JIT", "0").lower() not in ("", "0", "false", "no")
USE_NUMBA = HAVE_NUMBA and not JIT_DISABLED


def backend():
    """Name of the active kernel backend: ``"numba"`` or ``"numpy"``."""
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# im2col / col2im
# ---------------------------------------------------------------------------


def im2col_np(xp, kh, kw, stride):
    """Unfold a padded [C, H, W] array into [C*kh*kw, H'*W'] columns."""
    c = xp.shape[0]
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    oh, ow = win.shape[1], win.shape[2]
    # (C, oh, ow, kh, kw) -> (C, kh, kw, oh, ow)
    return np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(c * kh * kw, oh * ow)


def col2im_np(cols, shape, kh, kw, stride):
    """Adjoint of :func:`im2col_np`: scatter-add columns back to [C, H, W]."""
    c, h, w = shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    out = np.zeros(shape, dtype=cols.dtype)
    cols = cols.reshape(c, kh, kw, oh, ow)
    for i in range(kh):
        for j in range(kw):
            out[:, i : i + stride * oh : stride, j : j + stride * ow : stride] += cols[:, i, j]
    return out


# ---------------------------------------------------------------------------
# max pooling
# ---------------------------------------------------------------------------


def maxpool_np(x, window, stride):
    """Max-pool [C, H, W]; returns (output, flat argmax index into H*W).

    Ties resolve to the lowest linear input index.
    """
    c, h, w = x.shape
    win = sliding_window_view(x, (window, window), axis=(1, 2))[:, ::stride, ::stride]
    oh, ow = win.shape[1], win.shape[2]
    flat = win.reshape(c, oh, ow, window * window)
    k = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, k[..., None], axis=-1)[..., 0]
    di, dj = np.divmod(k, window)
    rows = np.arange(oh)[None, :, None] * stride + di
    cols = np.arange(ow)[None, None, :] * stride + dj
    return out, rows * w + cols


def scatter_max_grad_np(grad_out, argmax, shape):
    """Route gradients of a max-type reduction back to its argmax positions.

    ``grad_out`` and ``argmax`` share a shape whose leading axis is the channel;
    ``argmax`` holds flat indices into the trailing two axes of ``shape``.
    """
    c = shape[0]
    plane = shape[1] * shape[2]
    g = grad_out.reshape(c, -1)
    idx = argmax.reshape(c, -1) + (np.arange(c) * plane)[:, None]
    out = np.bincount(idx.ravel(), weights=g.ravel(), minlength=c * plane)
    return out.reshape(shape)


# ---------------------------------------------------------------------------
# RoI max pooling
# ---------------------------------------------------------------------------


def roi_bins(start, end, pooled):
    """Integer bin edges for splitting [start, end) into ``pooled`` bins.

    Bin p covers [start + floor(p*n/P), start + ceil((p+1)*n/P)); every bin is
    non-empty even when the region has fewer than ``pooled`` cells.
    """
    n = end - start
    p = np.arange(pooled)
    lo = start + (p * n) // pooled
    hi = start + -((-(p + 1) * n) // pooled)
    return lo, hi


def roi_pool_np(feat, rois, pooled):
    """RoI max pooling.

    feat: [C, H, W]; rois: int [R, 4] as (row0, row1, col0, col1) half-open
    cell ranges.  Returns (out [R, C, P, P], argmax [R, C, P, P]) with argmax
    flat into H*W.
    """
    c, h, w = feat.shape
    r = rois.shape[0]
    out = np.empty((r, c, pooled, pooled), dtype=feat.dtype)
    arg = np.empty((r, c, pooled, pooled), dtype=np.int64)
    for n in range(r):
        r0, r1, c0, c1 = (int(v) for v in rois[n])
        ylo, yhi = roi_bins(r0, r1, pooled)
        xlo, xhi = roi_bins(c0, c1, pooled)
        for py in range(pooled):
            for px in range(pooled):
                y0, y1, x0, x1 = ylo[py], yhi[py], xlo[px], xhi[px]
                block = feat[:, y0:y1, x0:x1].reshape(c, -1)
                k = block.argmax(axis=1)
                out[n, :, py, px] = block[np.arange(c), k]
                bw = x1 - x0
                arg[n, :, py, px] = (y0 + k // bw) * w + x0 + k % bw
    return out, arg


def roi_pool_grad_np(grad_out, argmax, shape):
    c, h, w = shape
    # [R, C, P, P] -> [C, R*P*P]
    g = grad_out.transpose(1, 0, 2, 3).reshape(c, -1)
    a = argmax.transpose(1, 0, 2, 3).reshape(c, -1)
    return scatter_max_grad_np(g, a, shape)


# ---------------------------------------------------------------------------
# greedy NMS
# ---------------------------------------------------------------------------


def nms_np(boxes, order, threshold):
    """Greedy NMS over boxes [N, 4] as (t0, f0, t1, f1), visiting ``order``."""
    t0, f0, t1, f1 = boxes[:, 0], boxes[:, 1], boxes[:, 2], boxes[:, 3]
    area = (t1 - t0) * (f1 - f0)
    keep = []
    order = np.asarray(order)
    while order.size:
        i = order[0]
        keep.append(int(i))
        rest = order[1:]
        iw = np.clip(np.minimum(t1[i], t1[rest]) - np.maximum(t0[i], t0[rest]), 0.0, None)
        ih = np.clip(np.minimum(f1[i], f1[rest]) - np.maximum(f0[i], f0[rest]), 0.0, None)
        inter = iw * ih
        union = area[i] + area[rest] - inter
        ovr = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
        order = rest[ovr <= threshold]
    return np.asarray(keep, dtype=np.int64)


# ---------------------------------------------------------------------------
# numba variants
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _im2col_nb(xp, kh, kw, stride):
        c, h, w = xp.shape
        oh = (h - kh) // stride + 1
        ow = (w - kw) // stride + 1
        cols = np.empty((c * kh * kw, oh * ow), dtype=xp.dtype)
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ch * kh + i) * kw + j
                    for y in range(oh):
                        base = y * ow
                        yy = y * stride + i
                        for x in range(ow):
                            cols[row, base + x] = xp[ch, yy, x * stride + j]
        return cols

    def im2col_nb(xp, kh, kw, stride):
        return _im2col_nb(np.ascontiguousarray(xp), int(kh), int(kw), int(stride))

    @njit(cache=True)
    def _col2im_nb(cols, c, h, w, kh, kw, stride):
        oh = (h - kh) // stride + 1
        ow = (w - kw) // stride + 1
        out = np.zeros((c, h, w), dtype=cols.dtype)
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ch * kh + i) * kw + j
                    for y in range(oh):
                        yy = y * stride + i
                        base = y * ow
                        for x in range(ow):
                            out[ch, yy, x * stride + j] += cols[row, base + x]
        return out

    def col2im_nb(cols, shape, kh, kw, stride):
        c, h, w = shape
        return _col2im_nb(np.ascontiguousarray(cols), c, h, w, kh, kw, stride)

    @njit(cache=True)
    def _maxpool_nb(x, window, stride):
        c, h, w = x.shape
        oh = (h - window) // stride + 1
        ow = (w - window) // stride + 1
        out = np.empty((c, oh, ow), dtype=x.dtype)
        arg = np.empty((c, oh, ow), dtype=np.int64)
        for ch in range(c):
            for y in range(oh):
                for xx in range(ow):
                    y0 = y * stride
                    x0 = xx * stride
                    best = x[ch, y0, x0]
                    bi = y0 * w + x0
                    for i in range(window):
                        for j in range(window):
                            v = x[ch, y0 + i, x0 + j]
                            if v > best:
                                best = v
                                bi = (y0 + i) * w + x0 + j
                    out[ch, y, xx] = best
                    arg[ch, y, xx] = bi
        return out, arg

    def maxpool_nb(x, window, stride):
        return _maxpool_nb(np.ascontiguousarray(x), int(window), int(stride))

    @njit(cache=True)
    def _scatter_nb(g, a, c, plane):
        out = np.zeros(c * plane, dtype=g.dtype)
        n = g.shape[1]
        for ch in range(c):
            off = ch * plane
            for k in range(n):
                out[off + a[ch, k]] += g[ch, k]
        return out

    def scatter_max_grad_nb(grad_out, argmax, shape):
        c = shape[0]
        plane = shape[1] * shape[2]
        g = np.ascontiguousarray(grad_out.reshape(c, -1))
        a = np.ascontiguousarray(argmax.reshape(c, -1))
        return _scatter_nb(g, a, c, plane).reshape(shape)

    @njit(cache=True)
    def _roi_pool_nb(feat, rois, pooled):
        c, h, w = feat.shape
        r = rois.shape[0]
        out = np.empty((r, c, pooled, pooled), dtype=feat.dtype)
        arg = np.empty((r, c, pooled, pooled), dtype=np.int64)
        for n in range(r):
            r0, r1, c0, c1 = rois[n, 0], rois[n, 1], rois[n, 2], rois[n, 3]
            nh = r1 - r0
            nw = c1 - c0
            for py in range(pooled):
                y0 = r0 + (py * nh) // pooled
                y1 = r0 + -((-(py + 1) * nh) // pooled)
                for px in range(pooled):
                    x0 = c0 + (px * nw) // pooled
                    x1 = c0 + -((-(px + 1) * nw) // pooled)
                    for ch in range(c):
                        best = feat[ch, y0, x0]
                        bi = y0 * w + x0
                        for y in range(y0, y1):
                            for x in range(x0, x1):
                                v = feat[ch, y, x]
                                if v > best:
                                    best = v
                                    bi = y * w + x
                        out[n, ch, py, px] = best
                        arg[n, ch, py, px] = bi
        return out, arg

    def roi_pool_nb(feat, rois, pooled):
        return _roi_pool_nb(
            np.ascontiguousarray(feat), np.ascontiguousarray(rois, dtype=np.int64), int(pooled)
        )

    @njit(cache=True)
    def _roi_grad_nb(g, a, c, plane):
        out = np.zeros(c * plane, dtype=g.dtype)
        r, _, p, q = g.shape
        for n in range(r):
            for ch in range(c):
                off = ch * plane
                for i in range(p):
                    for j in range(q):
                        out[off + a[n, ch, i, j]] += g[n, ch, i, j]
        return out

    def roi_pool_grad_nb(grad_out, argmax, shape):
        c = shape[0]
        plane = shape[1] * shape[2]
        g = np.ascontiguousarray(grad_out)
        return _roi_grad_nb(g, np.ascontiguousarray(argmax), c, plane).reshape(shape)

    @njit(cache=True)
    def _nms_nb(boxes, order, threshold):
        n = order.shape[0]
        removed = np.zeros(n, dtype=np.bool_)
        keep = np.empty(n, dtype=np.int64)
        nk = 0
        for a in range(n):
            if removed[a]:
                continue
            i = order[a]
            keep[nk] = i
            nk += 1
            ai = (boxes[i, 2] - boxes[i, 0]) * (boxes[i, 3] - boxes[i, 1])
            for b in range(a + 1, n):
                if removed[b]:
                    continue
                j = order[b]
                iw = min(boxes[i, 2], boxes[j, 2]) - max(boxes[i, 0], boxes[j, 0])
                ih = min(boxes[i, 3], boxes[j, 3]) - max(boxes[i, 1], boxes[j, 1])
                if iw <= 0.0 or ih <= 0.0:
                    continue
                inter = iw * ih
                aj = (boxes[j, 2] - boxes[j, 0]) * (boxes[j, 3] - boxes[j, 1])
                union = ai + aj - inter
                if union > 0.0 and inter / union > threshold:
                    removed[b] = True
        return keep[:nk]

    def nms_nb(boxes, order, threshold):
        return _nms_nb(
            np.ascontiguousarray(boxes, dtype=np.float64),
            np.ascontiguousarray(order, dtype=np.int64),
            float(threshold),
        )


if USE_NUMBA:
    im2col = im2col_nb
    col2im = col2im_nb
    maxpool = maxpool_nb
    scatter_max_grad = scatter_max_grad_nb
    roi_pool = roi_pool_nb
    roi_pool_grad = roi_pool_grad_nb
    nms = nms_nb
else:
    im2col = im2col_np
    col2im = col2im_np
    maxpool = maxpool_np
    scatter_max_grad = scatter_max_grad_np
    roi_pool = roi_pool_np
    roi_pool_grad = roi_pool_grad_np
    nms = nms_np
