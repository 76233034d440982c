"""Evaluation: ERLE over far-end single-talk, SI-SNR over double-talk,
frame-level detection accuracy, spectrogram images, and report emission."""

import math
from dataclasses import dataclass, field

import numpy as np

from . import audio_io
from .audio_io import Waveform
from .synth import (TalkLabelSequence, labels_on_grid, FAR_ONLY, DOUBLE_TALK)

ERLE_ENERGY_FLOOR = 1e-12
SI_SNR_CAP_DB = 60.0

CLASS_NAMES = ("Silence", "NearOnly", "FarOnly", "DoubleTalk")


def erle(y: Waveform, s_hat: Waveform, labels: TalkLabelSequence) -> float | None:
    """Echo attenuation 10*log10(E[y^2]/E[s_hat^2]) over far-end single-talk
    samples; None when no far-only frames exist."""
    if len(y) != len(s_hat):
        raise ValueError("erle: length mismatch")
    mask = labels.sample_mask(len(y), FAR_ONLY)
    if not mask.any():
        return None
    num = float(np.mean(y.samples[mask] ** 2))
    den = max(float(np.mean(s_hat.samples[mask] ** 2)), ERLE_ENERGY_FLOOR)
    return 10.0 * math.log10(max(num, ERLE_ENERGY_FLOOR) / den)


def si_snr(s: Waveform, s_hat: Waveform,
           labels: TalkLabelSequence | None = None) -> float:
    """Scale-invariant SNR of s_hat against s over double-talk samples (whole
    signal when labels are omitted), capped to +-60 dB."""
    if len(s) != len(s_hat):
        raise ValueError("si_snr: length mismatch")
    if labels is not None:
        mask = labels.sample_mask(len(s), DOUBLE_TALK)
        if not mask.any():
            mask = np.ones(len(s), dtype=bool)
    else:
        mask = np.ones(len(s), dtype=bool)
    target = s.samples[mask]
    est = s_hat.samples[mask]
    t_energy = float(np.dot(target, target))
    if t_energy <= 0.0:
        raise ValueError("si_snr: target has zero energy")
    proj = (float(np.dot(est, target)) / t_energy) * target
    err = est - proj
    p_energy = float(np.dot(proj, proj))
    e_energy = float(np.dot(err, err))
    if p_energy <= 0.0:
        return -SI_SNR_CAP_DB
    if e_energy <= 0.0 or p_energy / e_energy >= 10.0 ** (SI_SNR_CAP_DB / 10.0):
        return SI_SNR_CAP_DB
    return max(-SI_SNR_CAP_DB, 10.0 * math.log10(p_energy / e_energy))


def dtd_accuracy(pred_classes: np.ndarray, truth) -> tuple[float, np.ndarray]:
    """Frame accuracy and the 4x4 confusion matrix (rows: truth, cols: pred)."""
    truth_arr = truth.labels if isinstance(truth, TalkLabelSequence) else np.asarray(truth)
    pred = np.asarray(pred_classes)
    if pred.shape != truth_arr.shape:
        raise ValueError(f"dtd_accuracy: {pred.shape} vs {truth_arr.shape}")
    confusion = np.zeros((4, 4), dtype=np.int64)
    for t, p in zip(truth_arr, pred):
        confusion[int(t), int(p)] += 1
    acc = float((pred == truth_arr).mean()) if pred.size else 0.0
    return acc, confusion


# ---------------------------------------------------------------------------
# Spectrogram rendering (portable graymap)
# ---------------------------------------------------------------------------

SPEC_WINDOW = 512
SPEC_HOP = 160


def _stft_log_mag(samples: np.ndarray, window: int, hop: int) -> np.ndarray:
    if len(samples) < window:
        raise ValueError(f"signal shorter than analysis window ({window})")
    n_frames = (len(samples) - window) // hop + 1
    win = np.hanning(window)
    mag = np.empty((window // 2 + 1, n_frames))
    for f in range(n_frames):
        seg = samples[f * hop:f * hop + window] * win
        mag[:, f] = np.abs(np.fft.rfft(seg))
    return np.log10(mag + 1e-10)


def write_pgm(path, image: np.ndarray) -> None:
    """8-bit binary PGM; image is (rows, cols) already in 0..255."""
    rows, cols = image.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        f.write(image.astype(np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        if f.readline().strip() != b"P5":
            raise ValueError(f"{path}: not a binary PGM")
        dims = f.readline().split()
        cols, rows = int(dims[0]), int(dims[1])
        maxval = int(f.readline())
        if maxval != 255:
            raise ValueError("only 8-bit PGM supported")
        data = np.frombuffer(f.read(rows * cols), dtype=np.uint8)
    return data.reshape(rows, cols)


def spectrogram_image(w: Waveform, out_path) -> None:
    """Log-magnitude STFT as a grayscale image: time left-to-right, frequency
    bottom-to-top (row 0 is Nyquist)."""
    logmag = _stft_log_mag(w.samples, SPEC_WINDOW, SPEC_HOP)
    lo, hi = logmag.min(), logmag.max()
    if hi - lo < 1e-12:
        img = np.zeros_like(logmag)
    else:
        img = (logmag - lo) / (hi - lo) * 255.0
    write_pgm(out_path, img[::-1, :])


# ---------------------------------------------------------------------------
# Scenario evaluation
# ---------------------------------------------------------------------------

@dataclass
class LevelStats:
    erle_db: float | None = None
    si_snr_db: float | None = None
    dtd_accuracy: float | None = None
    count: int = 0


@dataclass
class EvalReport:
    erle_db: float | None
    si_snr_db: float | None
    dtd_accuracy: float | None
    per_level: dict = field(default_factory=dict)
    confusion: np.ndarray = field(default_factory=lambda: np.zeros((4, 4), dtype=np.int64))


def _mean_or_none(values):
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def evaluate(manifest_path, canceller, out_path=None,
             model_hop: int | None = None) -> EvalReport:
    """Run a canceller over every manifest record and aggregate per SER level.

    ``canceller(mixture, far, near) -> (s_hat, pred_classes_or_None)`` where
    predictions, if any, live on the encoder frame grid with hop
    ``model_hop``. The report file uses metric<TAB>ser_db<TAB>value lines plus
    a confusion-matrix block.
    """
    manifest = audio_io.load_manifest(manifest_path)
    if not manifest.records:
        raise ValueError("empty manifest")
    rows = []
    confusion = np.zeros((4, 4), dtype=np.int64)
    for rec in manifest.records:
        def full(p):
            return audio_io.resolve_record_path(manifest_path, p)
        mixture = audio_io.read_wav(full(rec.mixture_path))
        far = audio_io.read_wav(full(rec.far_end_path))
        near = audio_io.read_wav(full(rec.near_end_path))
        labels = TalkLabelSequence(audio_io.read_labels(full(rec.label_path)))
        s_hat, pred = canceller(mixture, far, near)
        rec_erle = erle(mixture, s_hat, labels)
        try:
            rec_si = si_snr(near, s_hat, labels)
        except ValueError:  # silent near-end: the proxy metric is absent
            rec_si = None
        rec_acc = None
        if pred is not None:
            hop = model_hop or labels.hop
            truth = labels_on_grid(labels, len(pred), hop)
            rec_acc, conf = dtd_accuracy(pred, truth)
            confusion += conf
        rows.append((rec.ser_db, rec_erle, rec_si, rec_acc))

    per_level = {}
    for level in sorted({r[0] for r in rows}):
        sel = [r for r in rows if r[0] == level]
        per_level[level] = LevelStats(
            erle_db=_mean_or_none([r[1] for r in sel]),
            si_snr_db=_mean_or_none([r[2] for r in sel]),
            dtd_accuracy=_mean_or_none([r[3] for r in sel]),
            count=len(sel))
    report = EvalReport(
        erle_db=_mean_or_none([r[1] for r in rows]),
        si_snr_db=_mean_or_none([r[2] for r in rows]),
        dtd_accuracy=_mean_or_none([r[3] for r in rows]),
        per_level=per_level,
        confusion=confusion)
    if out_path is not None:
        write_report(out_path, report)
    return report


def write_report(path, report: EvalReport) -> None:
    with open(path, "w", encoding="utf-8") as f:
        def line(metric, level, value):
            if value is not None:
                f.write(f"{metric}\t{level}\t{value!r}\n")
        line("erle_db", "all", report.erle_db)
        line("si_snr_db", "all", report.si_snr_db)
        line("dtd_accuracy", "all", report.dtd_accuracy)
        for level, stats in report.per_level.items():
            line("erle_db", level, stats.erle_db)
            line("si_snr_db", level, stats.si_snr_db)
            line("dtd_accuracy", level, stats.dtd_accuracy)
            line("count", level, stats.count)
        if report.confusion.sum():
            f.write("confusion\ttruth\\pred\t" + "\t".join(CLASS_NAMES) + "\n")
            for i, name in enumerate(CLASS_NAMES):
                f.write("confusion\t" + name + "\t"
                        + "\t".join(str(int(v)) for v in report.confusion[i]) + "\n")


# ---------------------------------------------------------------------------
# Canceller adapters for evaluate()
# ---------------------------------------------------------------------------

def oracle_canceller(mixture, far, near):
    return near, None


def identity_canceller(mixture, far, near):
    return mixture, None


def make_model_canceller(params, model_cfg):
    from .model import forward

    def run(mixture, far, near):
        s_hat, probs = forward(mixture.samples, far.samples, params, model_cfg)
        return Waveform(s_hat.data), probs.data.argmax(axis=1)

    return run


def make_baseline_canceller(algo: str, **kwargs):
    from .baselines import FdafConfig, fdaf_cancel, nlms_cancel

    def run(mixture, far, near):
        if algo == "nlms":
            _, residual, _ = nlms_cancel(far, mixture, **kwargs)
        elif algo == "fdaf":
            _, residual = fdaf_cancel(far, mixture, FdafConfig(**kwargs))
        else:
            raise ValueError(f"unknown baseline algorithm {algo!r}")
        return residual, None

    return run
