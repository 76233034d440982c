"""Classical linear adaptive-filter echo cancellers.

Plain NLMS (sample recursion) and a partitioned-block frequency-domain
adaptive filter in the multidelay style: overlap-save blocks, per-bin
normalized updates across partitions, and a time-domain gradient constraint.
Neither has double-talk control; they are the naive linear references.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .audio_io import Waveform


@dataclass
class NlmsState:
    taps: int = 1024
    mu: float = 0.5
    eps: float = 1e-6
    weights: np.ndarray = field(default=None)  # lag order: weights[k] <-> x[n-k]

    def __post_init__(self):
        if not (0.0 < self.mu <= 2.0):
            raise ValueError("mu must be in (0, 2] for stability")
        if self.eps <= 0.0:
            raise ValueError("eps must be positive")
        if self.weights is None:
            self.weights = np.zeros(self.taps)


def nlms_cancel(far: Waveform, mixture: Waveform, taps: int = 1024,
                mu: float = 0.5, eps: float = 1e-6
                ) -> tuple[Waveform, Waveform, NlmsState]:
    """Run NLMS over the whole signal; returns (echo_est, residual, state).

    residual + echo_est reproduces the mixture sample for sample.
    """
    state = NlmsState(taps=taps, mu=mu, eps=eps)
    if len(far) != len(mixture):
        raise ValueError("nlms_cancel: length mismatch")
    echo, res, w = kernels.nlms_run(np.ascontiguousarray(far.samples),
                                    np.ascontiguousarray(mixture.samples),
                                    taps, float(mu), float(eps))
    state.weights = w
    return Waveform(echo), Waveform(res), state


@dataclass
class FdafConfig:
    block_len: int = 256
    partitions: int = 8
    mu: float = 0.5
    eps: float = 1e-6
    power_smooth: float = 0.9

    def __post_init__(self):
        if self.block_len < 1 or (self.block_len & (self.block_len - 1)) != 0:
            raise ValueError("block_len must be a power of two")
        if self.partitions < 1:
            raise ValueError("partitions must be >= 1")
        if not (0.0 < self.mu <= 2.0):
            raise ValueError("mu must be in (0, 2]")

    @property
    def filter_len(self) -> int:
        return self.block_len * self.partitions


def fdaf_cancel(far: Waveform, mixture: Waveform,
                cfg: FdafConfig | None = None) -> tuple[Waveform, Waveform]:
    """Partitioned-block frequency-domain canceller (overlap-save, FFT size
    2*block); returns (echo_est, residual) of the input length. Samples past
    the last whole block pass through unprocessed."""
    cfg = cfg or FdafConfig()
    if len(far) != len(mixture):
        raise ValueError("fdaf_cancel: length mismatch")
    m = cfg.block_len
    p = cfg.partitions
    n_fft = 2 * m
    x = far.samples
    d = mixture.samples
    n_blocks = len(x) // m

    weights = np.zeros((p, m + 1), dtype=np.complex128)
    x_hist = np.zeros((p, m + 1), dtype=np.complex128)
    power = np.zeros(m + 1)
    x_buf = np.zeros(n_fft)

    echo = np.zeros_like(d)
    res = d.copy()
    for blk in range(n_blocks):
        lo = blk * m
        x_buf[:m] = x_buf[m:]
        x_buf[m:] = x[lo:lo + m]
        x_hist[1:] = x_hist[:-1]
        x_hist[0] = np.fft.rfft(x_buf)

        y_spec = (weights * x_hist).sum(axis=0)
        y_blk = np.fft.irfft(y_spec, n_fft)[m:]
        e_blk = d[lo:lo + m] - y_blk
        echo[lo:lo + m] = y_blk
        res[lo:lo + m] = e_blk

        e_spec = np.fft.rfft(np.concatenate([np.zeros(m), e_blk]))
        power = cfg.power_smooth * power + \
            (1.0 - cfg.power_smooth) * np.abs(x_hist[0]) ** 2
        norm = p * power + cfg.eps
        for part in range(p):
            grad = cfg.mu * np.conj(x_hist[part]) * e_spec / norm
            # gradient constraint: keep only the causal first half in time
            g_time = np.fft.irfft(grad, n_fft)
            g_time[m:] = 0.0
            weights[part] += np.fft.rfft(g_time)
    return Waveform(echo), Waveform(res)
