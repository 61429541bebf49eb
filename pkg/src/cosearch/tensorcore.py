"""Dense-tensor reverse-mode autodiff on a flat tape.

Everything downstream (the searchable network and the device cost models)
runs on the primitives in this module.  Values are float64 numpy arrays;
records go onto the innermost active :class:`Tape`, which replays them in
reverse for gradients.  No graph is kept beyond the tape, so a fresh tape
per training step keeps memory flat.
"""

from __future__ import annotations

import math
import threading

import numpy as np

LN2 = math.log(2.0)


class TensorError(Exception):
    pass


class ShapeError(TensorError):
    pass


class NonFiniteError(TensorError):
    pass


_tls = threading.local()


def _tape_stack():
    stack = getattr(_tls, "tapes", None)
    if stack is None:
        stack = []
        _tls.tapes = stack
    return stack


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of executed primitives; replayed once, in reverse."""

    def __init__(self):
        self._entries = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        popped = _tape_stack().pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self._entries)

    def record(self, out, inputs, grad_fn):
        # grad_fn(g_out) -> tuple of gradient arrays aligned with `inputs`
        # (None for inputs that need no gradient).
        self._entries.append((out, inputs, grad_fn))

    def backward(self, loss):
        """Accumulate d(loss)/d(leaf) into .grad of every requires_grad leaf."""
        if loss.values.shape != ():
            raise ShapeError(
                f"backward needs a scalar loss, got shape {loss.values.shape}")
        grads = {id(loss): np.ones((), dtype=np.float64)}
        for out, inputs, grad_fn in reversed(self._entries):
            g_out = grads.pop(id(out), None)
            if g_out is None:
                continue
            for inp, g in zip(inputs, grad_fn(g_out)):
                if g is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = np.array(g, dtype=np.float64, copy=True)
            del g_out
        for _, inputs, _ in self._entries:
            for inp in inputs:
                g = grads.pop(id(inp), None)
                if g is not None and isinstance(inp, Parameter):
                    inp.grad += g


class Tensor:
    """Immutable-by-convention dense array node.

    Non-finite values are rejected at creation so a diverging run fails at
    the op that produced the NaN/Inf instead of ten steps later.
    """

    __slots__ = ("values", "requires_grad", "grad")

    def __init__(self, values, requires_grad=False, _op="tensor"):
        arr = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite values produced by '{_op}'")
        self.values = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.size

    def item(self):
        return float(self.values)

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self):
        return total_sum(self)

    def mean(self):
        return total_mean(self)


class Parameter(Tensor):
    """Trainable leaf; .grad is a dense array accumulated by Tape.backward."""

    __slots__ = ()

    def __init__(self, values):
        super().__init__(values, requires_grad=True, _op="parameter")
        self.grad = np.zeros_like(self.values)

    def zero_grad(self):
        self.grad[...] = 0.0

    def assign(self, values):
        arr = np.asarray(values, dtype=np.float64)
        if arr.shape != self.values.shape:
            raise ShapeError(
                f"assign: shape {arr.shape} != parameter shape {self.values.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("non-finite values produced by 'assign'")
        self.values = arr


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(values, inputs, grad_fn, op):
    """Build the output node and record it if a tape is live and needed."""
    req = any(t.requires_grad for t in inputs)
    out = Tensor(values, requires_grad=req, _op=op)
    tape = active_tape()
    if tape is not None and req:
        tape.record(out, inputs, grad_fn)
    return out


def _unbroadcast(g, shape):
    """Sum gradient g down to `shape` (reverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise arithmetic --------------------------------------------------

def add(a, b):
    def grad_fn(g):
        return _unbroadcast(g, a.values.shape), _unbroadcast(g, b.values.shape)
    return _make(a.values + b.values, (a, b), grad_fn, "add")


def sub(a, b):
    def grad_fn(g):
        return _unbroadcast(g, a.values.shape), -_unbroadcast(g, b.values.shape)
    return _make(a.values - b.values, (a, b), grad_fn, "sub")


def mul(a, b):
    def grad_fn(g):
        return (_unbroadcast(g * b.values, a.values.shape),
                _unbroadcast(g * a.values, b.values.shape))
    return _make(a.values * b.values, (a, b), grad_fn, "mul")


def div(a, b):
    def grad_fn(g):
        return (_unbroadcast(g / b.values, a.values.shape),
                _unbroadcast(-g * a.values / (b.values ** 2), b.values.shape))
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = a.values / b.values
    return _make(vals, (a, b), grad_fn, "div")


def exp(a):
    out_vals = np.exp(a.values)

    def grad_fn(g):
        return (g * out_vals,)
    return _make(out_vals, (a,), grad_fn, "exp")


def log(a):
    def grad_fn(g):
        return (g / a.values,)
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = np.log(a.values)
    return _make(vals, (a,), grad_fn, "log")


def tanh(a):
    out_vals = np.tanh(a.values)

    def grad_fn(g):
        return (g * (1.0 - out_vals ** 2),)
    return _make(out_vals, (a,), grad_fn, "tanh")


def relu(a):
    mask = a.values > 0

    def grad_fn(g):
        return (g * mask,)
    return _make(np.where(mask, a.values, 0.0), (a,), grad_fn, "relu")


def pow2(a):
    """2**a, the parallelism curve; differentiable in a.

    Uses exp2 so integer exponents come out bit-exact.
    """
    out_vals = np.exp2(a.values)

    def grad_fn(g):
        return (g * out_vals * LN2,)
    return _make(out_vals, (a,), grad_fn, "pow2")


# -- shape / reduction -------------------------------------------------------

def take(a, idx):
    def grad_fn(g):
        full = np.zeros_like(a.values)
        np.add.at(full, idx, g)
        return (full,)
    return _make(a.values[idx], (a,), grad_fn, "take")


def stack(tensors):
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("stack: empty input")

    def grad_fn(g):
        return tuple(g[i] for i in range(len(tensors)))
    return _make(np.stack([t.values for t in tensors]), tuple(tensors),
                 grad_fn, "stack")


def total_sum(a):
    def grad_fn(g):
        return (np.broadcast_to(g, a.values.shape),)
    return _make(a.values.sum(), (a,), grad_fn, "sum")


def total_mean(a):
    n = a.values.size

    def grad_fn(g):
        return (np.broadcast_to(g / n, a.values.shape),)
    return _make(a.values.mean(), (a,), grad_fn, "mean")


def matmul(a, b):
    if a.values.ndim != 2 or b.values.ndim != 2:
        raise ShapeError(
            f"matmul expects 2-D operands, got {a.values.shape} @ {b.values.shape}")
    if a.values.shape[1] != b.values.shape[0]:
        raise ShapeError(
            f"matmul: inner dims differ, {a.values.shape} @ {b.values.shape}")

    def grad_fn(g):
        return g @ b.values.T, a.values.T @ g
    return _make(a.values @ b.values, (a, b), grad_fn, "matmul")


# -- neural-net primitives ---------------------------------------------------

def _im2col(x, k, stride):
    """(B,C,H,W) -> patches (B,C,k,k,Ho,Wo) with same padding (k odd)."""
    pad = k // 2
    b, c, h, w = x.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    # win: (B, C, Hp-k+1, Wp-k+1, k, k) -> strided then to (B,C,k,k,Ho,Wo)
    win = win[:, :, ::stride, ::stride]
    return np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)), ho, wo


def _col2im(cols, x_shape, k, stride):
    """Scatter-add of _im2col: cols (B,C,k,k,Ho,Wo) -> (B,C,H,W)."""
    pad = k // 2
    b, c, h, w = x_shape
    xp = np.zeros((b, c, h + 2 * pad, w + 2 * pad))
    ho, wo = cols.shape[4], cols.shape[5]
    for di in range(k):
        for dj in range(k):
            xp[:, :, di:di + stride * ho:stride,
               dj:dj + stride * wo:stride] += cols[:, :, di, dj]
    if pad == 0:
        return xp
    return xp[:, :, pad:-pad, pad:-pad]


def conv2d(x, weight, stride=1):
    """Same-padding 2-D convolution; x (B,C,H,W), weight (Co,C,k,k)."""
    if x.values.ndim != 4 or weight.values.ndim != 4:
        raise ShapeError(
            f"conv2d expects 4-D input/weight, got {x.values.shape} and "
            f"{weight.values.shape}")
    co, ci, k, k2 = weight.values.shape
    if k != k2 or k % 2 == 0:
        raise ShapeError(f"conv2d: kernel must be square and odd, got {k}x{k2}")
    if x.values.shape[1] != ci:
        raise ShapeError(
            f"conv2d: input has {x.values.shape[1]} channels, weight expects {ci}")
    b, _, h, w = x.values.shape
    if k == 1 and stride == 1:
        ho, wo = h, w
        cols_mat = x.values.reshape(b, ci, h * w)
    else:
        cols, ho, wo = _im2col(x.values, k, stride)
        cols_mat = cols.reshape(b, ci * k * k, ho * wo)
    w_mat = weight.values.reshape(co, ci * k * k)
    out = (w_mat @ cols_mat).reshape(b, co, ho, wo)

    def grad_fn(g):
        g_mat = g.reshape(b, co, ho * wo)
        # fold the batch into the contraction so both grads are single GEMMs
        g2 = g_mat.transpose(1, 0, 2).reshape(co, b * ho * wo)
        c2 = cols_mat.transpose(1, 0, 2).reshape(ci * k * k, b * ho * wo)
        dw = (g2 @ c2.T).reshape(weight.values.shape)
        dcols = np.matmul(w_mat.T[None], g_mat)
        if k == 1 and stride == 1:
            dx = dcols.reshape(x.values.shape)
        else:
            dx = _col2im(dcols.reshape(b, ci, k, k, ho, wo), x.values.shape,
                         k, stride)
        return dx, dw
    return _make(out, (x, weight), grad_fn, "conv2d")


def depthwise_conv2d(x, weight, stride=1):
    """Same-padding depthwise conv; x (B,C,H,W), weight (C,k,k)."""
    if x.values.ndim != 4 or weight.values.ndim != 3:
        raise ShapeError(
            f"depthwise_conv2d expects 4-D input and 3-D weight, got "
            f"{x.values.shape} and {weight.values.shape}")
    c, k, k2 = weight.values.shape
    if k != k2 or k % 2 == 0:
        raise ShapeError(f"depthwise_conv2d: kernel must be square and odd, got {k}x{k2}")
    if x.values.shape[1] != c:
        raise ShapeError(
            f"depthwise_conv2d: input has {x.values.shape[1]} channels, weight has {c}")
    pad = k // 2
    b, _, h, w = x.values.shape
    ho = (h - 1) // stride + 1
    wo = (w - 1) // stride + 1
    xp = np.pad(x.values, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((b, c, ho, wo))
    # per-tap accumulation avoids materializing the k^2-expanded patch array
    for di in range(k):
        for dj in range(k):
            out += weight.values[:, di, dj][None, :, None, None] \
                * xp[:, :, di:di + stride * ho:stride, dj:dj + stride * wo:stride]

    def grad_fn(g):
        dxp = np.zeros_like(xp)
        dw = np.empty_like(weight.values)
        for di in range(k):
            for dj in range(k):
                tap = xp[:, :, di:di + stride * ho:stride,
                         dj:dj + stride * wo:stride]
                dw[:, di, dj] = (tap * g).sum(axis=(0, 2, 3))
                dxp[:, :, di:di + stride * ho:stride,
                    dj:dj + stride * wo:stride] += \
                    weight.values[:, di, dj][None, :, None, None] * g
        dx = dxp[:, :, pad:-pad, pad:-pad] if pad else dxp
        return dx, dw
    return _make(out, (x, weight), grad_fn, "depthwise_conv2d")


def channel_affine(x, gamma, beta):
    """Per-channel scale+shift on (B,C,H,W); the fixed-stats norm stand-in."""
    c = x.values.shape[1]
    if gamma.values.shape != (c,) or beta.values.shape != (c,):
        raise ShapeError(
            f"channel_affine: need per-channel params of shape ({c},), got "
            f"{gamma.values.shape} and {beta.values.shape}")
    gam = gamma.values.reshape(1, c, 1, 1)
    out = x.values * gam + beta.values.reshape(1, c, 1, 1)

    def grad_fn(g):
        dx = g * gam
        dgamma = (g * x.values).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        return dx, dgamma, dbeta
    return _make(out, (x, gamma, beta), grad_fn, "channel_affine")


def global_avg_pool(x):
    if x.values.ndim != 4:
        raise ShapeError(f"global_avg_pool expects (B,C,H,W), got {x.values.shape}")
    b, c, h, w = x.values.shape

    def grad_fn(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.values.shape),)
    return _make(x.values.mean(axis=(2, 3)), (x,), grad_fn, "global_avg_pool")


def softmax(a):
    """Softmax over the last axis."""
    shifted = a.values - a.values.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        return (s * (g - dot),)
    return _make(s, (a,), grad_fn, "softmax")


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy; logits (B,K), labels int array (B,)."""
    if logits.values.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy expects (B,K) logits, got "
                         f"{logits.values.shape}")
    labels = np.asarray(labels)
    b, k = logits.values.shape
    if labels.shape != (b,):
        raise ShapeError(
            f"softmax_cross_entropy: labels shape {labels.shape} != ({b},)")
    shifted = logits.values - logits.values.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    losses = log_z - shifted[np.arange(b), labels]
    probs = np.exp(shifted - log_z[:, None])

    def grad_fn(g):
        d = probs.copy()
        d[np.arange(b), labels] -= 1.0
        return (g * d / b,)
    return _make(losses.mean(), (logits,), grad_fn, "softmax_cross_entropy")


def log_sum_exp(v):
    """Smooth maximum log(sum(exp(v))) of a vector, max-shifted."""
    if v.values.ndim != 1 or v.values.size == 0:
        raise ShapeError(f"log_sum_exp expects a non-empty vector, got shape "
                         f"{v.values.shape}")
    m = v.values.max()
    e = np.exp(v.values - m)
    z = e.sum()

    def grad_fn(g):
        return (g * e / z,)
    return _make(m + np.log(z), (v,), grad_fn, "log_sum_exp")


def gumbel_softmax(logits, tau, rng=None, hard=False):
    """Concrete-relaxation sample over a logit vector.

    rng=None disables noise (plain tempered softmax); with `hard` the forward
    value is one-hot at the argmax while gradients follow the soft weights
    (straight-through).
    """
    if tau <= 0:
        raise ValueError(f"gumbel_softmax: tau must be positive, got {tau}")
    if logits.values.ndim != 1:
        raise ShapeError(f"gumbel_softmax expects a logit vector, got shape "
                         f"{logits.values.shape}")
    z = logits
    if rng is not None:
        u = np.clip(rng.random(logits.values.shape), 1e-12, 1.0 - 1e-12)
        z = z + Tensor(-np.log(-np.log(u)))
    soft = softmax(z / Tensor(float(tau)))
    if not hard:
        return soft
    one_hot = np.zeros_like(soft.values)
    one_hot[int(np.argmax(soft.values))] = 1.0
    # forward: one-hot; backward: identity into the soft weights
    return soft + Tensor(one_hot - soft.values)


def straight_through(x, forward_values):
    """Tensor whose forward value is `forward_values` but whose gradient
    passes to x unchanged."""
    forward_values = np.asarray(forward_values, dtype=np.float64)
    if forward_values.shape != x.values.shape:
        raise ShapeError(
            f"straight_through: forward shape {forward_values.shape} != "
            f"{x.values.shape}")
    return x + Tensor(forward_values - x.values)


def finite_diff_check(loss_fn, params, eps=1e-5):
    """Max relative error between tape gradients and central differences.

    `loss_fn` must rebuild the loss from the current parameter values each
    call; perturbations are applied in place and restored.
    """
    if eps <= 0:
        raise ValueError(f"finite_diff_check: eps must be positive, got {eps}")
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = loss_fn()
        tape.backward(loss)
    worst = 0.0
    for p in params:
        g_ad = p.grad.copy()
        flat = p.values.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn().item()
            flat[i] = orig - eps
            down = loss_fn().item()
            flat[i] = orig
            g_fd = (up - down) / (2 * eps)
            err = abs(g_ad.reshape(-1)[i] - g_fd) / max(1.0, abs(g_fd))
            worst = max(worst, err)
    return worst
