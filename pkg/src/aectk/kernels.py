"""Hot numeric kernels with optional numba acceleration.

Every kernel is written once as a plain numpy function that is also valid
numba nopython code. At import time the module decides which flavor to
expose: if numba is importable and the environment variable ``AECTK_NUMBA``
is not set to ``0``/``false``/``off``, the kernels are wrapped with
``@njit(cache=True)``; otherwise the plain numpy versions run as-is.

The un-jitted implementations stay reachable under ``*_py`` names so the
two paths can be compared (see ``benchmarks/bench_kernels.py``).
"""

import os

import numpy as np


def numba_requested() -> bool:
    val = os.environ.get("AECTK_NUMBA", "1").strip().lower()
    return val not in ("0", "false", "off", "no")


NUMBA_ENABLED = False
if numba_requested():
    try:
        import numba

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - depends on environment
        NUMBA_ENABLED = False


def _maybe_jit(fn):
    if NUMBA_ENABLED:
        return numba.njit(cache=True)(fn)
    return fn


# ---------------------------------------------------------------------------
# LSTM recurrence (forward + BPTT backward)
#
# Gate layout inside the fused weight matrices is [input, forget, cell, output]
# along the last axis. State starts at zero.
# ---------------------------------------------------------------------------

def lstm_forward_py(x, w_in, w_rec, bias):
    """Run a unidirectional LSTM over ``x`` of shape (T, D).

    w_in: (D, 4H), w_rec: (H, 4H), bias: (4H,).
    Returns (h, c, gates) with h, c of shape (T, H) and the post-activation
    gate values (T, 4H) cached for the backward pass.
    """
    T = x.shape[0]
    H = w_rec.shape[0]
    h = np.zeros((T, H))
    c = np.zeros((T, H))
    gates = np.zeros((T, 4 * H))
    h_prev = np.zeros(H)
    c_prev = np.zeros(H)
    for t in range(T):
        z = np.dot(x[t], w_in) + np.dot(h_prev, w_rec) + bias
        gi = 1.0 / (1.0 + np.exp(-z[0:H]))
        gf = 1.0 / (1.0 + np.exp(-z[H:2 * H]))
        gg = np.tanh(z[2 * H:3 * H])
        go = 1.0 / (1.0 + np.exp(-z[3 * H:4 * H]))
        c_t = gf * c_prev + gi * gg
        h_t = go * np.tanh(c_t)
        gates[t, 0:H] = gi
        gates[t, H:2 * H] = gf
        gates[t, 2 * H:3 * H] = gg
        gates[t, 3 * H:4 * H] = go
        c[t] = c_t
        h[t] = h_t
        h_prev = h_t
        c_prev = c_t
    return h, c, gates


def lstm_backward_py(x, w_in, w_rec, h, c, gates, grad_h):
    """Backpropagate ``grad_h`` (T, H) through the LSTM recurrence.

    Returns (grad_x, grad_w_in, grad_w_rec, grad_bias).
    """
    T = x.shape[0]
    H = w_rec.shape[0]
    w_rec_t = w_rec.T.copy()
    dz_all = np.zeros((T, 4 * H))
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    for t in range(T - 1, -1, -1):
        gi = gates[t, 0:H]
        gf = gates[t, H:2 * H]
        gg = gates[t, 2 * H:3 * H]
        go = gates[t, 3 * H:4 * H]
        dh = grad_h[t] + dh_next
        tc = np.tanh(c[t])
        do = dh * tc
        dc = dc_next + dh * go * (1.0 - tc * tc)
        if t > 0:
            c_prev = c[t - 1]
        else:
            c_prev = np.zeros(H)
        di = dc * gg
        df = dc * c_prev
        dg = dc * gi
        dz_all[t, 0:H] = di * gi * (1.0 - gi)
        dz_all[t, H:2 * H] = df * gf * (1.0 - gf)
        dz_all[t, 2 * H:3 * H] = dg * (1.0 - gg * gg)
        dz_all[t, 3 * H:4 * H] = do * go * (1.0 - go)
        dh_next = np.dot(dz_all[t], w_rec_t)
        dc_next = dc * gf
    grad_x = np.dot(dz_all, w_in.T)
    grad_w_in = np.dot(x.T, dz_all)
    h_prev_all = np.zeros((T, H))
    h_prev_all[1:] = h[:-1]
    grad_w_rec = np.dot(h_prev_all.T, dz_all)
    grad_bias = dz_all.sum(axis=0)
    return grad_x, grad_w_in, grad_w_rec, grad_bias


# ---------------------------------------------------------------------------
# NLMS sample recursion
# ---------------------------------------------------------------------------

def nlms_run_py(far, mic, taps, mu, eps):
    """Sample-by-sample NLMS echo canceller.

    Returns (echo_est, residual, weights) where ``weights`` is in lag order:
    weights[k] multiplies far[n - k].
    """
    n = far.shape[0]
    w = np.zeros(taps)
    xpad = np.zeros(n + taps - 1)
    xpad[taps - 1:] = far
    echo = np.zeros(n)
    res = np.zeros(n)
    for i in range(n):
        win = xpad[i:i + taps]
        est = np.dot(w, win)
        e = mic[i] - est
        norm = np.dot(win, win)
        w += (mu * e / (eps + norm)) * win
        echo[i] = est
        res[i] = e
    return echo, res, w[::-1].copy()


# ---------------------------------------------------------------------------
# Image-source room impulse response accumulation
#
# betas[i] is the per-bounce amplitude factor for the wall pair orthogonal to
# axis i; taps land on the nearest sample, amplitude 1/(4*pi*d) with d clamped
# to one sample of travel so the degenerate src==mic case stays finite.
# ---------------------------------------------------------------------------

def image_source_taps_py(room, src, mic, betas, n_taps, fs, c):
    h = np.zeros(n_taps)
    max_dist = n_taps / fs * c
    ox = int(np.ceil(max_dist / (2.0 * room[0]))) + 1
    oy = int(np.ceil(max_dist / (2.0 * room[1]))) + 1
    oz = int(np.ceil(max_dist / (2.0 * room[2]))) + 1
    d_min = c / fs
    for rx in range(-ox, ox + 1):
        for ry in range(-oy, oy + 1):
            for rz in range(-oz, oz + 1):
                for px in range(2):
                    for py in range(2):
                        for pz in range(2):
                            ix = (1 - 2 * px) * src[0] + 2.0 * rx * room[0]
                            iy = (1 - 2 * py) * src[1] + 2.0 * ry * room[1]
                            iz = (1 - 2 * pz) * src[2] + 2.0 * rz * room[2]
                            dx = ix - mic[0]
                            dy = iy - mic[1]
                            dz = iz - mic[2]
                            d = np.sqrt(dx * dx + dy * dy + dz * dz)
                            idx = int(round(d / c * fs))
                            if idx < n_taps:
                                amp = (betas[0] ** (abs(rx + px) + abs(rx))
                                       * betas[1] ** (abs(ry + py) + abs(ry))
                                       * betas[2] ** (abs(rz + pz) + abs(rz)))
                                h[idx] += amp / (4.0 * np.pi * max(d, d_min))
    return h


lstm_forward = _maybe_jit(lstm_forward_py)
lstm_backward = _maybe_jit(lstm_backward_py)
nlms_run = _maybe_jit(nlms_run_py)
image_source_taps = _maybe_jit(image_source_taps_py)
