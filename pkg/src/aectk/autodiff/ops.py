"""Differentiable operations: exactly what the canceller network needs.

Each op builds one graph node with a closure implementing the exact adjoint.
Fused sequence ops (LSTM, cumulative layer norm, windowed attention) keep the
tape shallow; the LSTM recurrence runs through the accelerated kernels.
"""

import numpy as np

from .. import kernels
from .tensor import Tensor, as_tensor, make_op


def _check_2d(name, t: Tensor):
    if t.data.ndim != 2:
        raise ValueError(f"{name}: expected 2-D tensor, got shape {t.data.shape}")


# ---------------------------------------------------------------------------
# Arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also accepts a 1-D bias against a 2-D left operand."""
    a, b = as_tensor(a), as_tensor(b)
    bias_mode = a.data.ndim == 2 and b.data.ndim == 1
    if bias_mode:
        if a.data.shape[1] != b.data.shape[0]:
            raise ValueError(f"add: bias length {b.data.shape[0]} != {a.data.shape[1]}")
    elif a.data.shape != b.data.shape:
        raise ValueError(f"add: shape mismatch {a.data.shape} vs {b.data.shape}")
    out = a.data + b.data

    def backward_fn(g, accumulate):
        accumulate(a, g)
        accumulate(b, g.sum(axis=0) if bias_mode else g)

    return make_op(out, (a, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; either operand may be a scalar tensor."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape != b.data.shape and a.data.ndim != 0 and b.data.ndim != 0:
        raise ValueError(f"mul: shape mismatch {a.data.shape} vs {b.data.shape}")
    out = a.data * b.data

    def backward_fn(g, accumulate):
        ga = g * b.data
        gb = g * a.data
        accumulate(a, ga.sum() if a.data.ndim == 0 else ga)
        accumulate(b, gb.sum() if b.data.ndim == 0 else gb)

    return make_op(out, (a, b), backward_fn)


def scale(a: Tensor, factor: float) -> Tensor:
    a = as_tensor(a)
    factor = float(factor)

    def backward_fn(g, accumulate):
        accumulate(a, g * factor)

    return make_op(a.data * factor, (a,), backward_fn)


def matmul(a: Tensor, b: Tensor, transpose_b: bool = False) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_2d("matmul", a)
    _check_2d("matmul", b)
    bd = b.data.T if transpose_b else b.data
    if a.data.shape[1] != bd.shape[0]:
        raise ValueError(f"matmul: inner dims {a.data.shape} @ {bd.shape}")
    out = a.data @ bd

    def backward_fn(g, accumulate):
        if transpose_b:
            accumulate(a, g @ b.data)
            accumulate(b, g.T @ a.data)
        else:
            accumulate(a, g @ b.data.T)
            accumulate(b, a.data.T @ g)

    return make_op(out, (a, b), backward_fn)


def sum_all(a: Tensor) -> Tensor:
    a = as_tensor(a)

    def backward_fn(g, accumulate):
        accumulate(a, np.full_like(a.data, float(g)))

    return make_op(a.data.sum(), (a,), backward_fn)


def mean_all(a: Tensor) -> Tensor:
    a = as_tensor(a)
    n = a.data.size

    def backward_fn(g, accumulate):
        accumulate(a, np.full_like(a.data, float(g) / n))

    return make_op(a.data.mean(), (a,), backward_fn)


def concat_channels(parts) -> Tensor:
    """Concatenate 2-D tensors along the channel (last) axis."""
    parts = [as_tensor(p) for p in parts]
    for p in parts:
        _check_2d("concat_channels", p)
    rows = {p.data.shape[0] for p in parts}
    if len(rows) != 1:
        raise ValueError(f"concat_channels: row mismatch {sorted(rows)}")
    widths = [p.data.shape[1] for p in parts]
    out = np.concatenate([p.data for p in parts], axis=1)

    def backward_fn(g, accumulate):
        off = 0
        for p, w in zip(parts, widths):
            accumulate(p, g[:, off:off + w])
            off += w

    return make_op(out, tuple(parts), backward_fn)


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------

def relu(a: Tensor) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0  # subgradient at 0 is 0

    def backward_fn(g, accumulate):
        accumulate(a, g * mask)

    return make_op(np.where(mask, a.data, 0.0), (a,), backward_fn)


def sigmoid(a: Tensor) -> Tensor:
    a = as_tensor(a)
    s = 1.0 / (1.0 + np.exp(-a.data))

    def backward_fn(g, accumulate):
        accumulate(a, g * s * (1.0 - s))

    return make_op(s, (a,), backward_fn)


def tanh(a: Tensor) -> Tensor:
    a = as_tensor(a)
    th = np.tanh(a.data)

    def backward_fn(g, accumulate):
        accumulate(a, g * (1.0 - th * th))

    return make_op(th, (a,), backward_fn)


def prelu(a: Tensor, slope: Tensor) -> Tensor:
    """Parametric ReLU with a learned scalar slope on the negative side."""
    a, slope = as_tensor(a), as_tensor(slope)
    if slope.data.ndim != 0:
        raise ValueError("prelu: slope must be a scalar tensor")
    s = float(slope.data)
    pos = a.data > 0
    neg = a.data < 0

    def backward_fn(g, accumulate):
        accumulate(a, g * np.where(pos, 1.0, np.where(neg, s, 0.0)))
        accumulate(slope, (g * a.data * neg).sum())

    return make_op(np.where(pos, a.data, s * a.data), (a, slope), backward_fn)


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax, computed with max subtraction for stability."""
    a = as_tensor(a)
    _check_2d("softmax_rows", a)
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)

    def backward_fn(g, accumulate):
        inner = (g * p).sum(axis=1, keepdims=True)
        accumulate(a, p * (g - inner))

    return make_op(p, (a,), backward_fn)


# ---------------------------------------------------------------------------
# Framing
# ---------------------------------------------------------------------------

def frame_count(n_samples: int, frame_len: int, hop: int) -> int:
    if n_samples < frame_len:
        raise ValueError(f"signal length {n_samples} shorter than frame {frame_len}")
    return (n_samples - frame_len) // hop + 1


def frame_signal(x: Tensor, frame_len: int, hop: int) -> Tensor:
    """Slice a 1-D signal into overlapping rows of length ``frame_len``."""
    x = as_tensor(x)
    if x.data.ndim != 1:
        raise ValueError("frame_signal: expected 1-D signal")
    n = x.data.shape[0]
    t_hat = frame_count(n, frame_len, hop)
    frames = np.empty((t_hat, frame_len))
    for k in range(t_hat):
        frames[k] = x.data[k * hop:k * hop + frame_len]

    def backward_fn(g, accumulate):
        gx = np.zeros_like(x.data)
        for k in range(t_hat):
            gx[k * hop:k * hop + frame_len] += g[k]
        accumulate(x, gx)

    return make_op(frames, (x,), backward_fn)


def overlap_counts(t_hat: int, frame_len: int, hop: int) -> np.ndarray:
    counts = np.zeros((t_hat - 1) * hop + frame_len)
    for k in range(t_hat):
        counts[k * hop:k * hop + frame_len] += 1.0
    return counts


def overlap_add(frames: Tensor, hop: int, normalize: bool = False) -> Tensor:
    """Sum shifted frame rows back into a signal; optionally divide by the
    per-sample overlap count."""
    frames = as_tensor(frames)
    _check_2d("overlap_add", frames)
    t_hat, frame_len = frames.data.shape
    out = np.zeros((t_hat - 1) * hop + frame_len)
    for k in range(t_hat):
        out[k * hop:k * hop + frame_len] += frames.data[k]
    if normalize:
        counts = np.maximum(overlap_counts(t_hat, frame_len, hop), 1.0)
        out = out / counts

    def backward_fn(g, accumulate):
        gsig = g / counts if normalize else g
        gf = np.empty_like(frames.data)
        for k in range(t_hat):
            gf[k] = gsig[k * hop:k * hop + frame_len]
        accumulate(frames, gf)

    return make_op(out, (frames,), backward_fn)


# ---------------------------------------------------------------------------
# Cumulative layer normalization (strictly causal)
# ---------------------------------------------------------------------------

_CLN_VAR_FLOOR = 1e-8


def layer_norm_cumulative(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Normalize frame t by mean/variance pooled over channels and frames 0..t,
    then apply per-channel gain and bias. Variance is floored at 1e-8 before
    the square root."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    _check_2d("layer_norm_cumulative", x)
    t_hat, n_ch = x.data.shape
    counts = n_ch * np.arange(1, t_hat + 1, dtype=np.float64)
    s1 = np.cumsum(x.data.sum(axis=1))
    s2 = np.cumsum((x.data ** 2).sum(axis=1))
    mean = s1 / counts
    var = s2 / counts - mean ** 2
    live = var > _CLN_VAR_FLOOR  # gradient through the floor is zero
    sd = np.sqrt(np.maximum(var, _CLN_VAR_FLOOR))
    centered = x.data - mean[:, None]
    xhat = centered / sd[:, None]
    out = gain.data[None, :] * xhat + bias.data[None, :]

    def backward_fn(g, accumulate):
        accumulate(bias, g.sum(axis=0))
        accumulate(gain, (g * xhat).sum(axis=0))
        gi = g * gain.data[None, :]
        a_t = gi.sum(axis=1)
        b_t = (gi * centered).sum(axis=1)
        coeff = np.where(live, b_t / (sd ** 3 * counts), 0.0)
        # suffix sums over t >= u
        p = np.cumsum((a_t / (sd * counts))[::-1])[::-1]
        q = np.cumsum(coeff[::-1])[::-1]
        r = np.cumsum((coeff * mean)[::-1])[::-1]
        gx = gi / sd[:, None] - p[:, None] - x.data * q[:, None] + r[:, None]
        accumulate(x, gx)

    return make_op(out, (x, gain, bias), backward_fn)


# ---------------------------------------------------------------------------
# LSTM layer (fused over time, kernel-backed)
# ---------------------------------------------------------------------------

def lstm_layer(x: Tensor, w_in: Tensor, w_rec: Tensor, bias: Tensor) -> Tensor:
    """Unidirectional LSTM over frames; zero initial state.

    Gate order in the fused matrices is input, forget, cell, output.
    """
    x, w_in, w_rec, bias = as_tensor(x), as_tensor(w_in), as_tensor(w_rec), as_tensor(bias)
    _check_2d("lstm_layer", x)
    hidden = w_rec.data.shape[0]
    if w_in.data.shape != (x.data.shape[1], 4 * hidden):
        raise ValueError(f"lstm_layer: w_in shape {w_in.data.shape} does not match "
                         f"input {x.data.shape[1]} and hidden {hidden}")
    if bias.data.shape != (4 * hidden,):
        raise ValueError(f"lstm_layer: bias shape {bias.data.shape}")
    xd = np.ascontiguousarray(x.data)
    h, c, gates = kernels.lstm_forward(xd, w_in.data, w_rec.data, bias.data)

    def backward_fn(g, accumulate):
        gx, gw_in, gw_rec, gb = kernels.lstm_backward(
            xd, w_in.data, w_rec.data, h, c, gates, np.ascontiguousarray(g))
        accumulate(x, gx)
        accumulate(w_in, gw_in)
        accumulate(w_rec, gw_rec)
        accumulate(bias, gb)

    return make_op(h, (x, w_in, w_rec, bias), backward_fn)


# ---------------------------------------------------------------------------
# Windowed causal attention
# ---------------------------------------------------------------------------

def local_attention(q_seq: Tensor, kv_seq: Tensor, window: int) -> Tensor:
    """Scaled-dot-product attention where frame t attends to kv frames
    max(0, t-window+1)..t only; the kv sequence serves as both key and value."""
    q_seq, kv_seq = as_tensor(q_seq), as_tensor(kv_seq)
    _check_2d("local_attention", q_seq)
    _check_2d("local_attention", kv_seq)
    if q_seq.data.shape[0] != kv_seq.data.shape[0]:
        raise ValueError("local_attention: frame count mismatch")
    if window < 1:
        raise ValueError("local_attention: window must be >= 1")
    t_hat, width = q_seq.data.shape
    inv_sqrt = 1.0 / np.sqrt(width)
    scores = (q_seq.data @ kv_seq.data.T) * inv_sqrt
    idx = np.arange(t_hat)
    allowed = (idx[None, :] <= idx[:, None]) & (idx[None, :] > idx[:, None] - window)
    scores = np.where(allowed, scores, -np.inf)
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    weights = e / e.sum(axis=1, keepdims=True)
    out = weights @ kv_seq.data

    def backward_fn(g, accumulate):
        g_weights = g @ kv_seq.data.T
        inner = (g_weights * weights).sum(axis=1, keepdims=True)
        g_scores = weights * (g_weights - inner)
        accumulate(q_seq, (g_scores @ kv_seq.data) * inv_sqrt)
        accumulate(kv_seq, (g_scores.T @ q_seq.data) * inv_sqrt + weights.T @ g)

    return make_op(out, (q_seq, kv_seq), backward_fn)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def _require_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"{name}: non-finite values in loss input")


def mse_loss(pred: Tensor, target) -> Tensor:
    """Sum of squared errors over all samples (the waveform loss term)."""
    pred = as_tensor(pred)
    tgt = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if pred.data.shape != tgt.shape:
        raise ValueError(f"mse_loss: shape mismatch {pred.data.shape} vs {tgt.shape}")
    _require_finite("mse_loss", pred.data)
    _require_finite("mse_loss", tgt)
    diff = pred.data - tgt

    def backward_fn(g, accumulate):
        accumulate(pred, 2.0 * float(g) * diff)

    return make_op((diff ** 2).sum(), (pred,), backward_fn)


_CE_EPS = 1e-12


def cross_entropy_loss(probs: Tensor, one_hot) -> Tensor:
    """Mean over frames of -sum_i target_i * log(prob_i); log is clamped at 1e-12."""
    probs = as_tensor(probs)
    tgt = one_hot.data if isinstance(one_hot, Tensor) else np.asarray(one_hot, dtype=np.float64)
    if probs.data.shape != tgt.shape:
        raise ValueError(f"cross_entropy_loss: shape mismatch {probs.data.shape} vs {tgt.shape}")
    _require_finite("cross_entropy_loss", probs.data)
    t_hat = probs.data.shape[0]
    clamped = np.maximum(probs.data, _CE_EPS)
    out = -(tgt * np.log(clamped)).sum() / t_hat

    def backward_fn(g, accumulate):
        gp = np.where(probs.data > _CE_EPS, -tgt / clamped, 0.0) * (float(g) / t_hat)
        accumulate(probs, gp)

    return make_op(out, (probs,), backward_fn)


# ---------------------------------------------------------------------------
# Composites
# ---------------------------------------------------------------------------

def pointwise_conv(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """1x1 convolution over channels: a per-frame linear map."""
    out = matmul(x, weight)
    if bias is not None:
        out = add(out, bias)
    return out
