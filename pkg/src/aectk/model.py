"""Waveform-domain canceller network.

Two encoder paths (mixture, far-end) feed a causal mask-estimation stack:
cumulative layer norm, bottleneck 1x1 conv, per-path LSTMs, windowed
attention aligning the far-end to the mixture, an echo-estimation LSTM over
the concatenated paths, and a separation LSTM producing the near-end
representation. A mask head (PReLU, 1x1 conv, rectified sigmoid) gates the
mixture representation, which the decoder basis turns back into a waveform.
A linear softmax head over the echo/near representations yields per-frame
talk-activity classes {silence, near-only, far-only, double-talk}.
"""

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, as_tensor
from .autodiff import ops
from .autodiff.ops import frame_count, local_attention  # re-exported

N_CLASSES = 4


@dataclass
class ModelConfig:
    n_basis: int = 512          # encoder/decoder channels
    frame_len: int = 160        # samples per segment
    hop: int = 80               # 50% overlap
    bottleneck: int = 256       # channels after the 1x1 compression
    hidden: int = 256           # LSTM hidden size
    attention_window: int = 100  # frames the attention looks back over
    n_classes: int = N_CLASSES
    mask_prelu_position: str = "pre_conv"  # "pre_conv" | "pre_mask"

    def __post_init__(self):
        if not (1 <= self.hop <= self.frame_len):
            raise ValueError("hop must be in [1, frame_len]")
        if self.attention_window < 1:
            raise ValueError("attention_window must be >= 1")
        if self.n_classes != N_CLASSES:
            raise ValueError("classifier is fixed at 4 talk classes")
        if self.mask_prelu_position not in ("pre_conv", "pre_mask"):
            raise ValueError("mask_prelu_position must be 'pre_conv' or 'pre_mask'")

    def to_meta(self) -> dict:
        return {
            "n_basis": self.n_basis, "frame_len": self.frame_len, "hop": self.hop,
            "bottleneck": self.bottleneck, "hidden": self.hidden,
            "attention_window": self.attention_window, "n_classes": self.n_classes,
            "mask_prelu_position": self.mask_prelu_position,
        }

    @classmethod
    def from_meta(cls, meta: dict) -> "ModelConfig":
        return cls(**{k: meta[k] for k in ("n_basis", "frame_len", "hop", "bottleneck",
                                           "hidden", "attention_window", "n_classes",
                                           "mask_prelu_position")})


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _lstm_params(rng, in_dim, hidden, prefix):
    w_in = Tensor(_uniform(rng, (in_dim, 4 * hidden), in_dim), requires_grad=True)
    w_rec = Tensor(_uniform(rng, (hidden, 4 * hidden), hidden), requires_grad=True)
    bias = np.zeros(4 * hidden)
    bias[hidden:2 * hidden] = 1.0  # forget gate starts open
    return {f"{prefix}_w_in": w_in, f"{prefix}_w_rec": w_rec,
            f"{prefix}_bias": Tensor(bias, requires_grad=True)}


@dataclass
class AecModelParams:
    """All trainable tensors, addressable by name for the optimizer and
    checkpoint code."""
    tensors: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def named(self) -> dict:
        return self.tensors

    def zero_grad(self):
        for t in self.tensors.values():
            t.zero_grad()

    def arrays(self) -> dict:
        return {k: v.data for k, v in self.tensors.items()}

    def load_arrays(self, arrays: dict):
        missing = set(self.tensors) ^ set(arrays)
        if missing:
            raise ValueError(f"parameter name mismatch: {sorted(missing)}")
        for k, t in self.tensors.items():
            if t.data.shape != arrays[k].shape:
                raise ValueError(f"{k}: shape {arrays[k].shape} != {t.data.shape}")
            t.data = np.array(arrays[k], dtype=np.float64)


def init_params(cfg: ModelConfig, seed: int = 0) -> AecModelParams:
    """Seeded uniform fan-in initialization; LSTM forget-gate biases at 1."""
    rng = np.random.default_rng(seed)
    n, l = cfg.n_basis, cfg.frame_len
    b, h = cfg.bottleneck, cfg.hidden
    p = {}
    p["enc_basis"] = Tensor(_uniform(rng, (n, l), l), requires_grad=True)
    p["dec_basis"] = Tensor(_uniform(rng, (n, l), n), requires_grad=True)
    for path in ("mix", "far"):
        p[f"cln_{path}_gain"] = Tensor(np.ones(n), requires_grad=True)
        p[f"cln_{path}_bias"] = Tensor(np.zeros(n), requires_grad=True)
        p[f"bottleneck_{path}_w"] = Tensor(_uniform(rng, (n, b), n), requires_grad=True)
        p[f"bottleneck_{path}_b"] = Tensor(np.zeros(b), requires_grad=True)
    p.update(_lstm_params(rng, b, h, "lstm_mix"))
    p.update(_lstm_params(rng, b, h, "lstm_far"))
    p.update(_lstm_params(rng, 3 * h, h, "lstm_echo"))
    p.update(_lstm_params(rng, 2 * h, h, "lstm_sep"))
    p["prelu_slope"] = Tensor(np.asarray(0.25), requires_grad=True)
    p["mask_w"] = Tensor(_uniform(rng, (h, n), h), requires_grad=True)
    p["mask_b"] = Tensor(np.zeros(n), requires_grad=True)
    p["cls_w"] = Tensor(_uniform(rng, (2 * h, cfg.n_classes), 2 * h), requires_grad=True)
    p["cls_b"] = Tensor(np.zeros(cfg.n_classes), requires_grad=True)
    return AecModelParams(p)


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def padded_length(n_samples: int, cfg: ModelConfig) -> int:
    """Smallest frame-aligned length >= n_samples (>= one frame)."""
    if n_samples < cfg.frame_len:
        raise ValueError(f"input of {n_samples} samples is shorter than one "
                         f"frame ({cfg.frame_len})")
    t_hat = -(-(n_samples - cfg.frame_len) // cfg.hop) + 1
    return (t_hat - 1) * cfg.hop + cfg.frame_len


def encode(x, params: AecModelParams, cfg: ModelConfig) -> Tensor:
    """Frame the waveform and project onto the encoder basis with ReLU."""
    x = as_tensor(x)
    frames = ops.frame_signal(x, cfg.frame_len, cfg.hop)
    return ops.relu(ops.matmul(frames, params["enc_basis"], transpose_b=True))


def resigmoid(x: Tensor) -> Tensor:
    """Rectified sigmoid: relu(x) * sigmoid(x); zero for non-positive inputs."""
    x = as_tensor(x)
    return ops.mul(ops.relu(x), ops.sigmoid(x))


def cancel(mix_rep: Tensor, far_rep: Tensor, params: AecModelParams,
           cfg: ModelConfig) -> tuple[Tensor, Tensor]:
    """Run the canceller stack; returns (near_rep, echo_rep), both (T, hidden)."""
    if mix_rep.data.shape != far_rep.data.shape:
        raise ValueError("cancel: mixture/far representations must share shape")
    reps = {}
    for path, rep in (("mix", mix_rep), ("far", far_rep)):
        normed = ops.layer_norm_cumulative(rep, params[f"cln_{path}_gain"],
                                           params[f"cln_{path}_bias"])
        squeezed = ops.pointwise_conv(normed, params[f"bottleneck_{path}_w"],
                                      params[f"bottleneck_{path}_b"])
        reps[path] = ops.lstm_layer(squeezed, params[f"lstm_{path}_w_in"],
                                    params[f"lstm_{path}_w_rec"],
                                    params[f"lstm_{path}_bias"])
    mix_h, far_h = reps["mix"], reps["far"]
    aligned = local_attention(mix_h, far_h, cfg.attention_window)
    echo_rep = ops.lstm_layer(ops.concat_channels([mix_h, far_h, aligned]),
                              params["lstm_echo_w_in"], params["lstm_echo_w_rec"],
                              params["lstm_echo_bias"])
    near_rep = ops.lstm_layer(ops.concat_channels([echo_rep, mix_h]),
                              params["lstm_sep_w_in"], params["lstm_sep_w_rec"],
                              params["lstm_sep_bias"])
    return near_rep, echo_rep


def estimate_mask(near_rep: Tensor, params: AecModelParams, cfg: ModelConfig) -> Tensor:
    if cfg.mask_prelu_position == "pre_conv":
        near_rep = ops.prelu(near_rep, params["prelu_slope"])
    return resigmoid(ops.pointwise_conv(near_rep, params["mask_w"], params["mask_b"]))


def mask_and_decode(mix_rep: Tensor, near_rep: Tensor, params: AecModelParams,
                    cfg: ModelConfig, out_len: int | None = None) -> Tensor:
    """Gate the mixture representation with the estimated mask and decode."""
    mask = estimate_mask(near_rep, params, cfg)
    target = mix_rep
    if cfg.mask_prelu_position == "pre_mask":
        target = ops.prelu(target, params["prelu_slope"])
    masked = ops.mul(mask, target)
    frames = ops.matmul(masked, params["dec_basis"])
    wave = ops.overlap_add(frames, cfg.hop, normalize=True)
    if out_len is not None and out_len != wave.data.shape[0]:
        wave = _trim(wave, out_len)
    return wave


def _trim(x: Tensor, n: int) -> Tensor:
    from .autodiff.tensor import make_op

    def backward_fn(g, accumulate):
        gx = np.zeros_like(x.data)
        gx[:n] = g
        accumulate(x, gx)

    return make_op(x.data[:n], (x,), backward_fn)


def classify(echo_rep: Tensor, near_rep: Tensor, params: AecModelParams) -> Tensor:
    """Per-frame probabilities over the four talk classes."""
    feats = ops.concat_channels([echo_rep, near_rep])
    logits = ops.add(ops.matmul(feats, params["cls_w"]), params["cls_b"])
    return ops.softmax_rows(logits)


def forward(mixture, far_end, params: AecModelParams,
            cfg: ModelConfig) -> tuple[Tensor, Tensor]:
    """Full pass: returns (estimated near-end waveform, class probabilities).

    Inputs are zero-padded to a whole number of frames; the output waveform is
    trimmed back to the input length.
    """
    mix = np.asarray(mixture.data if isinstance(mixture, Tensor) else mixture,
                     dtype=np.float64)
    far = np.asarray(far_end.data if isinstance(far_end, Tensor) else far_end,
                     dtype=np.float64)
    if mix.shape != far.shape:
        raise ValueError(f"forward: length mismatch {mix.shape} vs {far.shape}")
    n = mix.shape[0]
    padded = padded_length(n, cfg)
    if padded != n:
        mix = np.concatenate([mix, np.zeros(padded - n)])
        far = np.concatenate([far, np.zeros(padded - n)])
    mix_rep = encode(Tensor(mix), params, cfg)
    far_rep = encode(Tensor(far), params, cfg)
    near_rep, echo_rep = cancel(mix_rep, far_rep, params, cfg)
    s_hat = mask_and_decode(mix_rep, near_rep, params, cfg, out_len=n)
    class_probs = classify(echo_rep, near_rep, params)
    return s_hat, class_probs
