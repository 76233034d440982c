"""Finite-difference verification suite covering every differentiable op and
the end-to-end model loss."""

import numpy as np

from .autodiff import Tensor, finite_diff_check, finite_diff_spot_check
from .autodiff import ops
from .model import ModelConfig, forward, init_params, resigmoid
from .training import multitask_loss


def _rand(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _mean(t):
    return ops.mean_all(t)


def run_grad_check_suite(seed: int = 0, points_per_op: int = 3):
    """Return [(op name, max relative error)] across randomized inputs.

    Each op is checked at ``points_per_op`` random points (full element sweep
    per point); the model check samples a 10-parameter slice.
    """
    results = []

    def check(name, build, eps=1e-5):
        worst = 0.0
        for k in range(points_per_op):
            rng = np.random.default_rng([seed, hash(name) & 0xFFFF, k])
            f, xs = build(rng)
            worst = max(worst, finite_diff_check(f, xs, eps=eps))
        results.append((name, worst))

    builders = [
        ("add", _build_add),
        ("add_bias", _build_add_bias),
        ("mul", _build_mul),
        ("scale", _build_scale),
        ("matmul", _build_matmul),
        ("matmul_t", _build_matmul_t),
        ("concat_channels", _build_concat),
        ("relu", _build_relu),
        ("sigmoid", _build_sigmoid),
        ("tanh", _build_tanh),
        ("prelu", _build_prelu),
        ("softmax_rows", _build_softmax),
        ("pointwise_conv", _build_pointwise),
        ("frame_signal", _build_frame),
        ("overlap_add", _build_ola),
        ("layer_norm_cumulative", _build_cln),
        ("lstm_layer", _build_lstm),
        ("local_attention", _build_attention),
        ("resigmoid", _build_resigmoid),
        ("mse_loss", _build_mse),
        ("cross_entropy_loss", _build_ce),
        ("multitask_loss", _build_multitask),
    ]
    for name, builder in builders:
        check(name, builder)
    results.append(("model_loss", _model_loss_check(seed)))
    return results


def _build_add(rng):
    a, b = _rand(rng, 3, 4), _rand(rng, 3, 4)
    return (lambda: _mean(ops.add(a, b))), [a, b]


def _build_add_bias(rng):
    a, b = _rand(rng, 3, 4), _rand(rng, 4)
    return (lambda: _mean(ops.add(a, b))), [a, b]


def _build_mul(rng):
    a, b = _rand(rng, 3, 4), _rand(rng, 3, 4)
    return (lambda: _mean(ops.mul(a, b))), [a, b]


def _build_scale(rng):
    a = _rand(rng, 3, 4)
    return (lambda: _mean(ops.scale(a, 0.37))), [a]


def _build_matmul(rng):
    a, b = _rand(rng, 3, 4), _rand(rng, 4, 5)
    return (lambda: _mean(ops.matmul(a, b))), [a, b]


def _build_matmul_t(rng):
    a, b = _rand(rng, 3, 4), _rand(rng, 5, 4)
    return (lambda: _mean(ops.matmul(a, b, transpose_b=True))), [a, b]


def _build_concat(rng):
    parts = [_rand(rng, 3, 2), _rand(rng, 3, 3), _rand(rng, 3, 4)]
    return (lambda: _mean(ops.concat_channels(parts))), parts


def _build_relu(rng):
    a = _rand(rng, 4, 4)
    a.data[np.abs(a.data) < 1e-3] += 0.1  # keep away from the kink
    return (lambda: _mean(ops.relu(a))), [a]


def _build_sigmoid(rng):
    a = _rand(rng, 4, 4)
    return (lambda: _mean(ops.sigmoid(a))), [a]


def _build_tanh(rng):
    a = _rand(rng, 4, 4)
    return (lambda: _mean(ops.tanh(a))), [a]


def _build_prelu(rng):
    a = _rand(rng, 4, 4)
    a.data[np.abs(a.data) < 1e-3] += 0.1
    slope = Tensor(np.asarray(0.3), requires_grad=True)
    return (lambda: _mean(ops.prelu(a, slope))), [a, slope]


def _build_softmax(rng):
    a = _rand(rng, 4, 5)
    weight = Tensor(rng.standard_normal((4, 5)))
    return (lambda: _mean(ops.mul(ops.softmax_rows(a), weight))), [a]


def _build_pointwise(rng):
    x, w, b = _rand(rng, 5, 3), _rand(rng, 3, 4), _rand(rng, 4)
    return (lambda: _mean(ops.pointwise_conv(x, w, b))), [x, w, b]


def _build_frame(rng):
    x = _rand(rng, 20)
    weight = Tensor(rng.standard_normal((5, 8)))
    return (lambda: _mean(ops.mul(ops.frame_signal(x, 8, 3), weight))), [x]


def _build_ola(rng):
    frames = _rand(rng, 4, 6)
    weight = Tensor(rng.standard_normal(3 * 3 + 6))
    return (lambda: _mean(ops.mul(ops.overlap_add(frames, 3, normalize=True),
                                  weight))), [frames]


def _build_cln(rng):
    x = _rand(rng, 6, 5)
    gain = Tensor(rng.uniform(0.5, 1.5, 5), requires_grad=True)
    bias = Tensor(rng.standard_normal(5), requires_grad=True)
    weight = Tensor(rng.standard_normal((6, 5)))
    return (lambda: _mean(ops.mul(ops.layer_norm_cumulative(x, gain, bias),
                                  weight))), [x, gain, bias]


def _build_lstm(rng):
    x = _rand(rng, 3, 4)
    hidden = 3
    w_in = Tensor(rng.standard_normal((4, 4 * hidden)) * 0.4, requires_grad=True)
    w_rec = Tensor(rng.standard_normal((hidden, 4 * hidden)) * 0.4, requires_grad=True)
    bias = Tensor(rng.standard_normal(4 * hidden) * 0.1, requires_grad=True)
    weight = Tensor(rng.standard_normal((3, hidden)))
    return (lambda: _mean(ops.mul(ops.lstm_layer(x, w_in, w_rec, bias),
                                  weight))), [x, w_in, w_rec, bias]


def _build_attention(rng):
    q = _rand(rng, 6, 4)
    kv = _rand(rng, 6, 4)
    weight = Tensor(rng.standard_normal((6, 4)))
    return (lambda: _mean(ops.mul(ops.local_attention(q, kv, 3), weight))), [q, kv]


def _build_resigmoid(rng):
    a = _rand(rng, 4, 4)
    a.data[np.abs(a.data) < 1e-3] += 0.1
    return (lambda: _mean(resigmoid(a))), [a]


def _build_mse(rng):
    pred = _rand(rng, 12)
    target = rng.standard_normal(12)
    return (lambda: ops.scale(ops.mse_loss(pred, target), 1.0 / 12)), [pred]


def _build_ce(rng):
    logits = _rand(rng, 5, 4)
    classes = rng.integers(0, 4, 5)
    onehot = np.zeros((5, 4))
    onehot[np.arange(5), classes] = 1.0
    return (lambda: ops.cross_entropy_loss(ops.softmax_rows(logits), onehot)), [logits]


def _build_multitask(rng):
    pred = _rand(rng, 10)
    target = rng.standard_normal(10)
    logits = _rand(rng, 4, 4)
    classes = rng.integers(0, 4, 4)
    return (lambda: multitask_loss(pred, target, ops.softmax_rows(logits),
                                   classes, alpha=0.3)), [pred, logits]


def _model_loss_check(seed: int, n_points: int = 10) -> float:
    """Finite differences on a random parameter slice of the full model loss."""
    rng = np.random.default_rng([seed, 0x40DE1])
    cfg = ModelConfig(n_basis=12, frame_len=8, hop=4, bottleneck=6, hidden=6,
                      attention_window=3)
    params = init_params(cfg, seed=seed)
    n = 48
    mixture = rng.standard_normal(n) * 0.3
    far = rng.standard_normal(n) * 0.3
    near = rng.standard_normal(n) * 0.3
    t_hat = (n - cfg.frame_len) // cfg.hop + 1
    classes = rng.integers(0, 4, t_hat)

    def f():
        s_hat, probs = forward(mixture, far, params, cfg)
        return multitask_loss(s_hat, near, probs, classes, alpha=0.3)

    tensors = list(params.named().values())
    return finite_diff_spot_check(f, tensors, n_points, rng, eps=1e-5)
