"""Reverse-mode autodiff over numpy arrays, sized for this model family.

Ops record (output, backward-closure) pairs onto the active Tape in
execution order; Tape.backward walks the list once, in reverse. With no
active tape every op is plain numpy, so inference pays no bookkeeping.
"""

from __future__ import annotations

import math
import struct

import numpy as np
from scipy.special import erf

from .errors import TapeError, WeightFileError

_SQRT_2PI = math.sqrt(2.0 * math.pi)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, name={self.name})"

    # arithmetic sugar; everything routes through the op functions below
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other), scale(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __pow__(self, p):
        return pow_const(self, p)

    def __getitem__(self, key):
        return getitem(self, key)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x))


def constant(x, name=None) -> Tensor:
    return Tensor(np.asarray(x), requires_grad=False, name=name)


_TAPES: list["Tape"] = []


class Tape:
    """Wengert list: ops in execution order, replayed once in reverse."""

    def __init__(self):
        self.records: list[tuple[Tensor, object]] = []
        self.consumed = False

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.pop()
        return False

    def backward(self, loss: Tensor) -> None:
        if self.consumed:
            raise TapeError("tape already consumed by a previous backward")
        if loss.data.size != 1:
            raise TapeError(f"loss must be scalar, got shape {loss.data.shape}")
        self.consumed = True
        loss.grad = np.ones_like(loss.data)
        for out, bwd in reversed(self.records):
            if out.grad is None:
                continue
            bwd(out.grad)

    def first_nonfinite(self):
        """(index, name) of the earliest non-finite op output, or None."""
        for i, (out, _) in enumerate(self.records):
            if not np.all(np.isfinite(out.data)):
                return i, out.name
        return None


def _record(data, inputs, bwd, name=None) -> Tensor:
    rg = any(i.requires_grad for i in inputs)
    out = Tensor(data, requires_grad=rg, name=name)
    if rg and _TAPES:
        _TAPES[-1].records.append((out, bwd))
    return out


def _accum(t: Tensor, g):
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and reduction ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def bwd(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _record(a.data + b.data, (a, b), bwd, "add")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _record(a.data * b.data, (a, b), bwd, "mul")


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def bwd(g):
        _accum(a, _unbroadcast(g / b.data, a.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _record(a.data / b.data, (a, b), bwd, "div")


def scale(a, s: float) -> Tensor:
    a = _as_tensor(a)

    def bwd(g):
        _accum(a, g * s)

    return _record(a.data * s, (a,), bwd, "scale")


def pow_const(a, p: float) -> Tensor:
    a = _as_tensor(a)

    def bwd(g):
        _accum(a, g * p * a.data ** (p - 1))

    return _record(a.data ** p, (a,), bwd, "pow")


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.exp(a.data)

    def bwd(g):
        _accum(a, g * out_data)

    return _record(out_data, (a,), bwd, "exp")


def safe_log(a, floor: float) -> Tensor:
    """log(max(a, floor)); zero gradient below the floor."""
    a = _as_tensor(a)
    clipped = np.maximum(a.data, floor)

    def bwd(g):
        _accum(a, np.where(a.data > floor, g / clipped, 0.0))

    return _record(np.log(clipped), (a,), bwd, "safe_log")


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.sqrt(a.data)

    def bwd(g):
        _accum(a, g / (2.0 * out_data))

    return _record(out_data, (a,), bwd, "sqrt")


def absolute(a) -> Tensor:
    a = _as_tensor(a)

    def bwd(g):
        _accum(a, g * np.sign(a.data))

    return _record(np.abs(a.data), (a,), bwd, "abs")


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.tanh(a.data)

    def bwd(g):
        _accum(a, g * (1.0 - out_data * out_data))

    return _record(out_data, (a,), bwd, "tanh")


def leaky_relu(a, slope: float = 0.1) -> Tensor:
    a = _as_tensor(a)

    def bwd(g):
        _accum(a, g * np.where(a.data > 0, 1.0, slope))

    return _record(np.where(a.data > 0, a.data, slope * a.data), (a,), bwd,
                   "leaky_relu")


def gelu(a) -> Tensor:
    a = _as_tensor(a)
    cdf = 0.5 * (1.0 + erf(a.data / math.sqrt(2.0)))

    def bwd(g):
        pdf = np.exp(-0.5 * a.data * a.data) / _SQRT_2PI
        _accum(a, g * (cdf + a.data * pdf))

    return _record(a.data * cdf, (a,), bwd, "gelu")


def clamp(a, lo: float, hi: float) -> Tensor:
    a = _as_tensor(a)

    def bwd(g):
        _accum(a, g * ((a.data >= lo) & (a.data <= hi)))

    return _record(np.clip(a.data, lo, hi), (a,), bwd, "clamp")


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)

    def bwd(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.shape).copy())
        else:
            _accum(a, np.broadcast_to(np.expand_dims(g, axis) if not keepdims
                                      else g, a.shape).copy())

    return _record(a.data.sum(axis=axis, keepdims=keepdims), (a,), bwd, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))

    def bwd(g):
        if axis is None:
            _accum(a, np.broadcast_to(g / count, a.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(gg / count, a.shape).copy())

    return _record(a.data.mean(axis=axis, keepdims=keepdims), (a,), bwd, "mean")


def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        _accum(a, out_data * (g - dot))

    return _record(out_data, (a,), bwd, "softmax")


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

def getitem(a, key) -> Tensor:
    a = _as_tensor(a)

    def bwd(g):
        full = np.zeros_like(a.data)
        full[key] = g
        _accum(a, full)

    return _record(a.data[key].copy(), (a,), bwd, "slice")


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)

    def bwd(g):
        _accum(a, g.reshape(a.shape))

    return _record(a.data.reshape(shape), (a,), bwd, "reshape")


def transpose(a) -> Tensor:
    a = _as_tensor(a)

    def bwd(g):
        _accum(a, g.T)

    return _record(a.data.T.copy(), (a,), bwd, "transpose")


def concat(parts, axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        for p, piece in zip(parts, np.split(g, splits, axis=axis)):
            _accum(p, piece)

    return _record(np.concatenate([p.data for p in parts], axis=axis),
                   tuple(parts), bwd, "concat")


def tile_cols(v, t: int) -> Tensor:
    """Broadcast a vector (d,) to (d, t); gradient sums over time."""
    v = _as_tensor(v)

    def bwd(g):
        _accum(v, g.sum(axis=1))

    return _record(np.broadcast_to(v.data[:, None], (v.shape[0], t)).copy(),
                   (v,), bwd, "tile_cols")


def gather_cols(a, idx: np.ndarray) -> Tensor:
    """Column lookup a[:, idx]; used to expand per-phoneme stats to frames."""
    a = _as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)

    def bwd(g):
        full = np.zeros_like(a.data)
        np.add.at(full.T, idx, g.T)
        _accum(a, full)

    return _record(a.data[:, idx].copy(), (a,), bwd, "gather_cols")


def embedding(table, ids: np.ndarray) -> Tensor:
    """Rows table[ids], returned channels-first as (d, len(ids))."""
    table = _as_tensor(table)
    ids = np.asarray(ids, dtype=np.intp)

    def bwd(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g.T)
        _accum(table, full)

    return _record(table.data[ids].T.copy(), (table,), bwd, "embedding")


def pad_reflect(a, pad: int) -> Tensor:
    """Reflect-pad a 1-D signal on both sides (no edge repeat)."""
    a = _as_tensor(a)
    n = a.shape[0]
    if pad >= n:
        raise ValueError("reflect pad must be shorter than the signal")

    def bwd(g):
        gx = g[pad:pad + n].copy()
        if pad:
            gx[1:pad + 1] += g[:pad][::-1]
            gx[n - 1 - pad:n - 1] += g[pad + n:][::-1]
        _accum(a, gx)

    return _record(np.pad(a.data, pad, mode="reflect"), (a,), bwd, "pad_reflect")


# ---------------------------------------------------------------------------
# linear algebra / convolution kernels
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def bwd(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _record(a.data @ b.data, (a, b), bwd, "matmul")


def linear(x, w, b=None) -> Tensor:
    """w @ x (+ b per row) on channels-first features x: [c_in, l]."""
    x, w = _as_tensor(x), _as_tensor(w)
    out_data = w.data @ x.data
    if b is not None:
        b = _as_tensor(b)
        out_data = out_data + b.data[:, None]

    def bwd(g):
        _accum(w, g @ x.data.T)
        _accum(x, w.data.T @ g)
        if b is not None:
            _accum(b, g.sum(axis=1))

    inputs = (x, w) if b is None else (x, w, b)
    return _record(out_data, inputs, bwd, "linear")


def _im2col1d(xp: np.ndarray, k: int, stride: int, dilation: int, t_out: int):
    c_in = xp.shape[0]
    s0, s1 = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp, shape=(c_in, k, t_out), strides=(s0, s1 * dilation, s1 * stride))
    return np.ascontiguousarray(view).reshape(c_in * k, t_out)


def conv1d(x, w, b=None, stride: int = 1, padding: int = 0,
           dilation: int = 1) -> Tensor:
    """Cross-correlation of x: [c_in, t] with w: [c_out, c_in, k]."""
    x, w = _as_tensor(x), _as_tensor(w)
    c_out, c_in, k = w.shape
    if x.shape[0] != c_in:
        raise ValueError(f"conv1d channel mismatch: x has {x.shape[0]}, w wants {c_in}")
    eff_k = (k - 1) * dilation + 1
    xp = np.pad(x.data, ((0, 0), (padding, padding))) if padding else x.data
    t_out = (xp.shape[1] - eff_k) // stride + 1
    if t_out < 1:
        raise ValueError("conv1d input shorter than one kernel application")
    cols = _im2col1d(xp, k, stride, dilation, t_out)
    out_data = w.data.reshape(c_out, -1) @ cols
    if b is not None:
        b = _as_tensor(b)
        out_data = out_data + b.data[:, None]

    def bwd(g):
        _accum(w, (g @ cols.T).reshape(w.shape))
        if b is not None:
            _accum(b, g.sum(axis=1))
        if x.requires_grad:
            gcols = (w.data.reshape(c_out, -1).T @ g).reshape(c_in, k, t_out)
            gxp = np.zeros_like(xp)
            span = (t_out - 1) * stride + 1
            for j in range(k):
                gxp[:, j * dilation:j * dilation + span:stride] += gcols[:, j, :]
            _accum(x, gxp[:, padding:padding + x.shape[1]] if padding else gxp)

    inputs = (x, w) if b is None else (x, w, b)
    return _record(out_data, inputs, bwd, "conv1d")


def conv2d(x, w, b=None, stride=1, padding=0) -> Tensor:
    """Cross-correlation of x: [c_in, h, w] with kernel [c_out, c_in, kh, kw]."""
    x, w = _as_tensor(x), _as_tensor(w)
    c_out, c_in, kh, kw = w.shape
    if x.shape[0] != c_in:
        raise ValueError(f"conv2d channel mismatch: x has {x.shape[0]}, w wants {c_in}")
    sh, sw = (stride, stride) if isinstance(stride, int) else stride
    ph, pw = (padding, padding) if isinstance(padding, int) else padding
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    h_out = (xp.shape[1] - kh) // sh + 1
    w_out = (xp.shape[2] - kw) // sw + 1
    if h_out < 1 or w_out < 1:
        raise ValueError("conv2d input smaller than the kernel")
    s0, s1, s2 = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp, shape=(c_in, kh, kw, h_out, w_out),
        strides=(s0, s1, s2, s1 * sh, s2 * sw))
    cols = np.ascontiguousarray(view).reshape(c_in * kh * kw, h_out * w_out)
    out_data = (w.data.reshape(c_out, -1) @ cols).reshape(c_out, h_out, w_out)
    if b is not None:
        b = _as_tensor(b)
        out_data = out_data + b.data[:, None, None]

    def bwd(g):
        gflat = g.reshape(c_out, -1)
        _accum(w, (gflat @ cols.T).reshape(w.shape))
        if b is not None:
            _accum(b, g.sum(axis=(1, 2)))
        if x.requires_grad:
            gcols = (w.data.reshape(c_out, -1).T @ gflat).reshape(
                c_in, kh, kw, h_out, w_out)
            gxp = np.zeros_like(xp)
            hspan = (h_out - 1) * sh + 1
            wspan = (w_out - 1) * sw + 1
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i:i + hspan:sh, j:j + wspan:sw] += gcols[:, i, j]
            _accum(x, gxp[:, ph:ph + x.shape[1], pw:pw + x.shape[2]]
                   if (ph or pw) else gxp)

    inputs = (x, w) if b is None else (x, w, b)
    return _record(out_data, inputs, bwd, "conv2d")


def conv_transpose1d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Adjoint of strided conv1d; x: [c_in, t], w: [c_in, c_out, k].

    Output length is stride*t + k - stride - 2*padding.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    c_in, c_out, k = w.shape
    if x.shape[0] != c_in:
        raise ValueError(f"conv_transpose1d channel mismatch: x has {x.shape[0]}, "
                         f"w wants {c_in}")
    t = x.shape[1]
    full = stride * (t - 1) + k
    if full - 2 * padding < 1:
        raise ValueError("conv_transpose1d output would be empty")
    tmp = (w.data.reshape(c_in, c_out * k).T @ x.data).reshape(c_out, k, t)
    outp = np.zeros((c_out, full), dtype=tmp.dtype)
    span = stride * (t - 1) + 1
    for j in range(k):
        outp[:, j:j + span:stride] += tmp[:, j, :]
    out_data = outp[:, padding:full - padding] if padding else outp
    if b is not None:
        b = _as_tensor(b)
        out_data = out_data + b.data[:, None]

    def bwd(g):
        if padding:
            gfull = np.zeros((c_out, full), dtype=g.dtype)
            gfull[:, padding:full - padding] = g
        else:
            gfull = g
        gtmp = np.empty((c_out, k, t), dtype=g.dtype)
        for j in range(k):
            gtmp[:, j, :] = gfull[:, j:j + span:stride]
        _accum(w, (x.data @ gtmp.reshape(c_out * k, t).T).reshape(w.shape))
        if x.requires_grad:
            _accum(x, w.data.reshape(c_in, c_out * k) @ gtmp.reshape(c_out * k, t))
        if b is not None:
            _accum(b, g.sum(axis=1))

    inputs = (x, w) if b is None else (x, w, b)
    return _record(out_data, inputs, bwd, "conv_transpose1d")


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize each column of x: [c, l] over its channels."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    mu = x.data.mean(axis=0, keepdims=True)
    var = x.data.var(axis=0, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = gamma.data[:, None] * xhat + beta.data[:, None]

    def bwd(g):
        _accum(gamma, (g * xhat).sum(axis=1))
        _accum(beta, g.sum(axis=1))
        gx = g * gamma.data[:, None]
        _accum(x, inv * (gx - gx.mean(axis=0, keepdims=True)
                         - xhat * (gx * xhat).mean(axis=0, keepdims=True)))

    return _record(out_data, (x, gamma, beta), bwd, "layer_norm")


def stft_magnitude(x, window: np.ndarray, hop: int) -> Tensor:
    """Differentiable |STFT|: frames x (already padded) at hop, windows, rffts.

    Returns [n_fft/2+1, t]. Gradient of |S| at silent bins is taken as 0.
    """
    x = _as_tensor(x)
    n_fft = len(window)
    win = window.astype(x.dtype, copy=False)
    t = 1 + (x.shape[0] - n_fft) // hop
    if t < 1:
        raise ValueError("signal shorter than one stft frame")
    frames = np.lib.stride_tricks.sliding_window_view(x.data, n_fft)[::hop][:t]
    spec = np.fft.rfft(frames * win, axis=1)
    mag = np.abs(spec)

    def bwd(g):
        g = g.T
        safe = np.maximum(mag, 1e-300)
        gc = np.where(mag > 0, g / safe, 0.0).astype(spec.real.dtype) * spec
        gc[:, 1:-1] *= 0.5
        gc[:, 0] = gc[:, 0].real
        gc[:, -1] = gc[:, -1].real
        gframes = n_fft * np.fft.irfft(gc, n=n_fft, axis=1).real * win
        gx = np.zeros_like(x.data)
        for j in range(t):
            gx[j * hop:j * hop + n_fft] += gframes[j]
        _accum(x, gx)

    return _record(mag.T.copy(), (x,), bwd, "stft_magnitude")


# ---------------------------------------------------------------------------
# transformer encoder block
# ---------------------------------------------------------------------------

def transformer_block(x, params, prefix: str, n_heads: int, return_attn=False):
    """Pre-norm multi-head self-attention + feed-forward, both residual.

    x: [c, l]. Attention weights are softmax over key positions, so each
    query row sums to 1.
    """
    c, l = x.shape
    if c % n_heads:
        raise ValueError(f"channels {c} not divisible by {n_heads} heads")
    d = c // n_heads
    p = lambda suffix: params[prefix + suffix]

    h = layer_norm(x, p("ln1.g"), p("ln1.b"))
    q = linear(h, p("attn.wq"), p("attn.bq"))
    k = linear(h, p("attn.wk"), p("attn.bk"))
    v = linear(h, p("attn.wv"), p("attn.bv"))
    heads = []
    attns = []
    for i in range(n_heads):
        rows = slice(i * d, (i + 1) * d)
        scores = scale(matmul(transpose(q[rows, :]), k[rows, :]), 1.0 / math.sqrt(d))
        attn = softmax(scores, axis=1)
        attns.append(attn)
        heads.append(matmul(v[rows, :], transpose(attn)))
    attended = concat(heads, axis=0) if n_heads > 1 else heads[0]
    x = add(x, linear(attended, p("attn.wo"), p("attn.bo")))
    h2 = layer_norm(x, p("ln2.g"), p("ln2.b"))
    f = linear(gelu(linear(h2, p("ffn.w1"), p("ffn.b1"))), p("ffn.w2"), p("ffn.b2"))
    out = add(x, f)
    if return_attn:
        return out, [a.data for a in attns]
    return out


def transformer_block_params(store, prefix: str, c: int, ffn_hidden: int,
                             rng: np.random.Generator) -> None:
    """Create one block's parameters; output projections start at zero so
    a fresh block is the identity map."""
    xavier = lambda fan_out, fan_in: rng.normal(
        0.0, math.sqrt(2.0 / (fan_in + fan_out)), size=(fan_out, fan_in))
    store.add(prefix + "ln1.g", np.ones(c))
    store.add(prefix + "ln1.b", np.zeros(c))
    for name in ("wq", "wk", "wv"):
        store.add(f"{prefix}attn.{name}", xavier(c, c))
    for name in ("bq", "bk", "bv"):
        store.add(f"{prefix}attn.{name}", np.zeros(c))
    store.add(prefix + "attn.wo", np.zeros((c, c)))
    store.add(prefix + "attn.bo", np.zeros(c))
    store.add(prefix + "ln2.g", np.ones(c))
    store.add(prefix + "ln2.b", np.zeros(c))
    store.add(prefix + "ffn.w1", xavier(ffn_hidden, c))
    store.add(prefix + "ffn.b1", np.zeros(ffn_hidden))
    store.add(prefix + "ffn.w2", np.zeros((c, ffn_hidden)))
    store.add(prefix + "ffn.b2", np.zeros(c))


# ---------------------------------------------------------------------------
# parameter store and serialization
# ---------------------------------------------------------------------------

class ParamStore:
    """Named parameters with their gradient slots. dtype float32 trades
    precision for roughly half the arithmetic cost during training."""

    def __init__(self, dtype=np.float64):
        self._params: dict[str, Tensor] = {}
        self.dtype = np.dtype(dtype)

    def add(self, name: str, array) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(array, dtype=self.dtype), requires_grad=True,
                   name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        return self._params.values()

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def gradient(self, name: str) -> np.ndarray:
        """Gradient of the last backward; exactly zero off the loss path."""
        t = self._params[name]
        return np.zeros_like(t.data) if t.grad is None else t.grad

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore(dtype)
        for name, t in self._params.items():
            clone = Tensor(t.data.astype(dtype), requires_grad=False, name=name)
            out._params[name] = clone
        return out

    def total_parameters(self) -> int:
        return sum(t.data.size for t in self._params.values())


WEIGHT_MAGIC = b"OVTC"
WEIGHT_VERSION = 1


def save_weights(store: ParamStore, path) -> None:
    """OVTC format: magic, version u32, count u32, then per tensor
    (name u16+utf8, rank u8, dims u32[], float32 LE row-major data)."""
    with open(path, "wb") as f:
        f.write(WEIGHT_MAGIC)
        f.write(struct.pack("<II", WEIGHT_VERSION, len(store)))
        for name, t in store.items():
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", t.data.ndim))
            f.write(struct.pack(f"<{t.data.ndim}I", *t.data.shape))
            f.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())


def load_weights(path) -> ParamStore:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != WEIGHT_MAGIC:
        raise WeightFileError(f"{path}: bad magic")
    try:
        version, count = struct.unpack_from("<II", raw, 4)
    except struct.error as e:
        raise WeightFileError(f"{path}: truncated header") from e
    if version != WEIGHT_VERSION:
        raise WeightFileError(f"{path}: unsupported version {version}")
    store = ParamStore()
    pos = 12
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            name = raw[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<B", raw, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", raw, pos)
            pos += 4 * rank
            n_bytes = 4 * int(np.prod(dims, dtype=np.int64))
            blob = raw[pos:pos + n_bytes]
            if len(blob) < n_bytes:
                raise WeightFileError(f"{path}: truncated tensor data for {name!r}")
            pos += n_bytes
            values = np.frombuffer(blob, dtype="<f4").reshape(dims)
            store.add(name, values.astype(np.float64))
    except struct.error as e:
        raise WeightFileError(f"{path}: truncated tensor table") from e
    return store
