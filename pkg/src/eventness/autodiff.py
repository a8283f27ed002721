"""Minimal reverse-mode autodiff over numpy arrays.

Only the operators the detector needs are provided.  A graph node keeps its
parents and a closure mapping the output gradient to one gradient per parent.
Leaf tensors created with ``requires_grad=True`` (normally :class:`Parameter`)
accumulate into ``.grad``; intermediate gradients live only for the duration of
one :meth:`Tensor.backward` call.
"""

import base64
import json

import numpy as np

from . import _kernels

DTYPE = np.float64


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad and not _parents else None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, k):
        return scale(self, k)

    __rmul__ = __mul__

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def backward(self):
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``.grad``."""
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar, got shape {self.shape}")
        if not self.requires_grad:
            return
        order = _topological(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node.grad += g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


class Parameter(Tensor):
    """A named trainable leaf tensor."""

    __slots__ = ("name",)

    def __init__(self, data, name):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _node(data, parents, backward):
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)
    return Tensor(data)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# elementwise / structural
# ---------------------------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return _node(a.data + b.data, (a, b), lambda g: (g, g))


def scale(a, k):
    k = float(k)
    return _node(a.data * k, (a,), lambda g: (g * k,))


def total(a):
    """Sum of all entries, as a scalar tensor."""
    shape = a.shape
    return _node(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def reshape(a, shape):
    old = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes):
    inv = np.argsort(axes)
    return _node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def take_rows(a, index):
    """Select rows of a 2-D tensor (repeats allowed)."""
    index = np.asarray(index, dtype=np.int64)
    shape = a.shape

    def backward(g):
        out = np.zeros(shape, dtype=DTYPE)
        np.add.at(out, index, g)
        return (out,)

    return _node(a.data[index], (a,), backward)


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return _node(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


def linear(x, weight, bias=None):
    """y = x @ W.T + b for x of shape [N] or [B, N]."""
    x = as_tensor(x)
    m, n = weight.shape
    if x.shape[-1] != n:
        raise ValueError(f"linear: input width {x.shape[-1]} does not match weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        if bias.shape != (m,):
            raise ValueError(f"linear: bias shape {bias.shape} does not match {m} outputs")
        out = out + bias.data

    def backward(g):
        gx = g @ weight.data
        g2 = g.reshape(-1, m)
        gw = g2.T @ x.data.reshape(-1, n)
        gb = g2.sum(axis=0)
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return _node(out, parents, backward)


def conv2d(x, kernels, bias=None, stride=1, padding=0):
    """2-D cross-correlation of [C_in, H, W] with [C_out, C_in, kh, kw]."""
    x = as_tensor(x)
    if x.data.ndim != 3 or kernels.data.ndim != 4:
        raise ValueError("conv2d expects input [C,H,W] and kernels [C_out,C_in,kh,kw]")
    c_in, h, w = x.shape
    c_out, kc, kh, kw = kernels.shape
    if kc != c_in:
        raise ValueError(f"conv2d: input has {c_in} channels, kernels expect {kc}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ValueError("conv2d: kernel larger than padded input")
    if bias is not None and bias.shape != (c_out,):
        raise ValueError(f"conv2d: bias shape {bias.shape} does not match {c_out} outputs")
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding))) if padding else x.data
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    cols = _kernels.im2col(xp, kh, kw, stride)
    wmat = kernels.data.reshape(c_out, -1)
    out = wmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(c_out, oh, ow)

    def backward(g):
        g2 = g.reshape(c_out, -1)
        gw = (g2 @ cols.T).reshape(kernels.shape)
        gx = None
        if x.requires_grad:
            gx = _kernels.col2im(wmat.T @ g2, xp.shape, kh, kw, stride)
            if padding:
                gx = gx[:, padding : padding + h, padding : padding + w]
        if bias is not None:
            return gx, gw, g2.sum(axis=1)
        return gx, gw

    parents = (x, kernels, bias) if bias is not None else (x, kernels)
    return _node(out, parents, backward)


def maxpool2d(x, window=2, stride=None):
    """Max-pool [C, H, W]; gradient goes to the first (lowest-index) argmax."""
    x = as_tensor(x)
    stride = window if stride is None else stride
    if x.data.ndim != 3:
        raise ValueError("maxpool2d expects [C,H,W]")
    if window > x.shape[1] or window > x.shape[2]:
        raise ValueError(f"maxpool2d: window {window} larger than input {x.shape[1:]}")
    out, arg = _kernels.maxpool(x.data, window, stride)
    shape = x.shape
    return _node(out, (x,), lambda g: (_kernels.scatter_max_grad(g, arg, shape),))


def roi_max_pool(features, regions, pooled):
    """RoI max pooling of [C, H, W] over integer cell regions [R, 4].

    Regions are (row0, row1, col0, col1) half-open; output is [R, C, P, P].
    """
    regions = np.asarray(regions, dtype=np.int64).reshape(-1, 4)
    out, arg = _kernels.roi_pool(features.data, regions, pooled)
    shape = features.shape
    return _node(out, (features,), lambda g: (_kernels.roi_pool_grad(g, arg, shape),))


# ---------------------------------------------------------------------------
# probabilities and losses
# ---------------------------------------------------------------------------


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(x):
    """Softmax over the last axis (max-subtracted)."""
    x = as_tensor(x)
    p = _softmax(x.data)

    def backward(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _node(p, (x,), backward)


def cross_entropy(logits, target):
    """Mean of -log softmax(logits)[target] over rows.

    ``logits`` is [K] with an int target, or [B, K] with B targets.
    """
    logits = as_tensor(logits)
    z = logits.data
    single = z.ndim == 1
    z2 = z.reshape(1, -1) if single else z
    t = np.atleast_1d(np.asarray(target, dtype=np.int64))
    k = z2.shape[1]
    if t.shape[0] != z2.shape[0]:
        raise ValueError("cross_entropy: one target per row required")
    if np.any(t < 0) or np.any(t >= k):
        raise ValueError(f"cross_entropy: target class out of range [0, {k})")
    b = z2.shape[0]
    shifted = z2 - z2.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(b), t].mean()

    def backward(g):
        grad = np.exp(logp)
        grad[np.arange(b), t] -= 1.0
        grad *= g / b
        return (grad.reshape(z.shape),)

    return _node(np.asarray(loss), (logits,), backward)


def smooth_l1(pred, target, weight=None):
    """Sum of smooth-L1 (beta 1) over entries of pred - target, optionally weighted."""
    pred = as_tensor(pred)
    target = np.asarray(target, dtype=DTYPE)
    if pred.shape != target.shape:
        raise ValueError(f"smooth_l1: shape mismatch {pred.shape} vs {target.shape}")
    d = pred.data - target
    ad = np.abs(d)
    small = ad < 1.0
    per = np.where(small, 0.5 * d * d, ad - 0.5)
    w = np.ones_like(d) if weight is None else np.asarray(weight, dtype=DTYPE)
    dper = np.where(small, d, np.sign(d))
    return _node(np.asarray((w * per).sum()), (pred,), lambda g: (g * w * dper,))


# ---------------------------------------------------------------------------
# optimization
# ---------------------------------------------------------------------------


def he_uniform(shape, fan_in, rng):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def sgd_step(params, velocities, lr, momentum):
    """v <- mu*v - lr*g ; p <- p + v, in place.  ``velocities`` maps name -> array."""
    for p in params:
        v = velocities.get(p.name)
        if v is None:
            v = velocities[p.name] = np.zeros_like(p.data)
        v *= momentum
        v -= lr * p.grad
        p.data += v


class SGD:
    def __init__(self, params, lr, momentum=0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.velocities = {}

    def step(self):
        sgd_step(self.params, self.velocities, self.lr, self.momentum)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT = "eventness-checkpoint"
CHECKPOINT_VERSION = 1


def dumps_parameters(params, meta=None):
    """Serialize parameters as JSON: name -> shape + base64 little-endian float64."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "params": {},
    }
    for p in params:
        arr = np.ascontiguousarray(p.data, dtype="<f8")
        payload["params"][p.name] = {
            "shape": list(arr.shape),
            "dtype": "<f8",
            "data": base64.b64encode(arr.tobytes()).decode("ascii"),
        }
    return json.dumps(payload, sort_keys=True)


def loads_parameters(text):
    """Inverse of :func:`dumps_parameters`; returns (dict name -> array, meta)."""
    payload = json.loads(text)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not an eventness checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    arrays = {}
    for name, entry in payload["params"].items():
        raw = base64.b64decode(entry["data"])
        arr = np.frombuffer(raw, dtype=entry["dtype"]).astype(DTYPE)
        arrays[name] = arr.reshape(entry["shape"])
    return arrays, payload.get("meta", {})
