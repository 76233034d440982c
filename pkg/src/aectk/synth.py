"""Synthetic scenario generation: room simulation, loudspeaker nonlinearity,
echo-path convolution, SER/SNR mixing, and frame-level talk labeling.

The echo chain mirrors the usual simulation recipe: the far-end signal is
hard-clipped (power-amplifier stage), pushed through an asymmetric memoryless
sigmoid (loudspeaker stage), and convolved with a room impulse response. The
echo is then scaled against the near-end speech to hit a requested
signal-to-echo ratio measured over double-talk frames, and optionally white
noise is added at a requested SNR against the near-end reference.
"""

import concurrent.futures
import configparser
import logging
import math
import os
from dataclasses import dataclass

import numpy as np

from . import kernels
from .audio_io import (RoomImpulseResponse, Waveform, DatasetManifest,
                       ManifestRecord, save_manifest, write_labels, write_wav,
                       save_rir, SAMPLE_RATE)

log = logging.getLogger(__name__)

SPEED_OF_SOUND = 343.0
ENERGY_DECAY_DB = 60.0

SILENCE, NEAR_ONLY, FAR_ONLY, DOUBLE_TALK = 0, 1, 2, 3

DEFAULT_FRAME_LEN = 160
DEFAULT_HOP = 160
DEFAULT_THRESHOLD_DB = -40.0

TRAIN_SER_LEVELS = (-6.0, -3.0, 0.0, 3.0, 6.0)
TEST_SER_LEVELS = (0.0, 3.5, 7.0)


@dataclass
class TalkLabelSequence:
    """Per-frame activity class: 0 silence, 1 near-only, 2 far-only, 3 double-talk."""
    labels: np.ndarray
    frame_len: int = DEFAULT_FRAME_LEN
    hop: int = DEFAULT_HOP

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)

    def __len__(self):
        return len(self.labels)

    def sample_mask(self, n_samples: int, wanted: int) -> np.ndarray:
        """Boolean mask over samples covered by frames of class ``wanted``."""
        mask = np.zeros(n_samples, dtype=bool)
        for f in np.nonzero(self.labels == wanted)[0]:
            start = f * self.hop
            mask[start:start + self.frame_len] = True
        return mask


@dataclass
class EchoPathConfig:
    rir: RoomImpulseResponse
    nonlinear: bool = False
    clip_ratio: float = 0.8
    sigmoid_gain: float | None = None   # None: pick gain preserving input RMS
    sigmoid_slope_pos: float = 4.0
    sigmoid_slope_neg: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.clip_ratio <= 1.0):
            raise ValueError("clip_ratio must be in (0, 1]")
        if self.sigmoid_slope_pos <= 0 or self.sigmoid_slope_neg <= 0:
            raise ValueError("sigmoid slopes must be positive")


@dataclass
class MixtureScenario:
    far_end: Waveform
    near_end: Waveform
    echo: Waveform
    mixture: Waveform
    labels: TalkLabelSequence
    ser_db: float
    noise: Waveform | None = None
    snr_db: float = math.inf
    rir_id: int = -1
    nonlinear: bool = False


# ---------------------------------------------------------------------------
# Room impulse response simulation (image-source method)
# ---------------------------------------------------------------------------

def simulate_rir(room_dims, src_pos, mic_pos, t60: float, n_taps: int,
                 fs: int = SAMPLE_RATE) -> RoomImpulseResponse:
    """Image-source RIR with frequency-independent wall reflectances.

    Per-axis reflection coefficients are calibrated so that every axial image
    family decays by 60 dB within t60; this keeps the tap energy after
    ceil(t60*fs) below 1e-6 of the total. Fully deterministic.
    """
    room = np.asarray(room_dims, dtype=np.float64)
    src = np.asarray(src_pos, dtype=np.float64)
    mic = np.asarray(mic_pos, dtype=np.float64)
    if room.shape != (3,) or src.shape != (3,) or mic.shape != (3,):
        raise ValueError("room, source and mic must be 3-D")
    if np.any(room <= 0):
        raise ValueError("room dimensions must be positive")
    for name, pos in (("source", src), ("mic", mic)):
        if np.any(pos <= 0) or np.any(pos >= room):
            raise ValueError(f"{name} position must be strictly inside the room")
    if not (0.1 <= t60 <= 1.5):
        raise ValueError("t60 must be in [0.1, 1.5] s")
    if n_taps < 1:
        raise ValueError("n_taps must be positive")
    decay_rate = ENERGY_DECAY_DB / 20.0 * math.log(10.0)  # amplitude nepers at t60
    betas = np.exp(-decay_rate * room / (SPEED_OF_SOUND * t60))
    taps = kernels.image_source_taps(room, src, mic, betas, n_taps,
                                     float(fs), SPEED_OF_SOUND)
    return RoomImpulseResponse(taps, sample_rate=fs, t60=t60)


# ---------------------------------------------------------------------------
# Loudspeaker nonlinearity
# ---------------------------------------------------------------------------

def hard_clip(x: Waveform, clip_ratio: float) -> Waveform:
    """Symmetric clipping at clip_ratio times the signal's own peak."""
    if not (0.0 < clip_ratio <= 1.0):
        raise ValueError("clip_ratio must be in (0, 1]")
    peak = np.abs(x.samples).max() if len(x) else 0.0
    if peak == 0.0:
        return Waveform(x.samples.copy())
    c = clip_ratio * peak
    return Waveform(np.clip(x.samples, -c, c))


def _raw_sigmoid(samples: np.ndarray, slope_pos: float, slope_neg: float) -> np.ndarray:
    b = 1.5 * samples - 0.3 * samples ** 2
    a = np.where(b > 0, slope_pos, slope_neg)
    return 2.0 / (1.0 + np.exp(-a * b)) - 1.0


def sigmoidal_distort(x: Waveform, cfg: EchoPathConfig) -> Waveform:
    """Memoryless asymmetric sigmoid: gain * (2 / (1 + exp(-a*b)) - 1) with
    b = 1.5 x - 0.3 x^2 and a switching on the sign of b.

    With cfg.sigmoid_gain None, the gain is set so the output RMS matches the
    input RMS (silent input passes through unchanged).
    """
    raw = _raw_sigmoid(x.samples, cfg.sigmoid_slope_pos, cfg.sigmoid_slope_neg)
    gain = cfg.sigmoid_gain
    if gain is None:
        in_rms = float(np.sqrt(np.mean(x.samples ** 2))) if len(x) else 0.0
        out_rms = float(np.sqrt(np.mean(raw ** 2))) if len(x) else 0.0
        gain = in_rms / out_rms if out_rms > 0 else 1.0
    return Waveform(gain * raw)


def fft_convolve(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Full linear convolution via real FFTs."""
    n_out = len(x) + len(h) - 1
    n_fft = 1 << max(0, (n_out - 1).bit_length())
    spec = np.fft.rfft(x, n_fft) * np.fft.rfft(h, n_fft)
    return np.fft.irfft(spec, n_fft)[:n_out]


def apply_echo_path(x: Waveform, cfg: EchoPathConfig) -> Waveform:
    """Convolve the (optionally distorted) far-end with the RIR, truncated to
    the input length."""
    driven = x
    if cfg.nonlinear:
        driven = sigmoidal_distort(hard_clip(x, cfg.clip_ratio), cfg)
    full = fft_convolve(driven.samples, cfg.rir.taps)
    return Waveform(full[:len(x)])


# ---------------------------------------------------------------------------
# Frame labeling and level mixing
# ---------------------------------------------------------------------------

def _frame_energies(samples: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    n = len(samples)
    count = max(1, -(-(n - frame_len) // hop) + 1)  # ceil((n - frame_len) / hop) + 1
    energies = np.zeros(count)
    for f in range(count):
        seg = samples[f * hop:f * hop + frame_len]
        energies[f] = float(np.dot(seg, seg))
    return energies


def _activity(samples: np.ndarray, frame_len: int, hop: int,
              threshold_db: float) -> np.ndarray:
    """Frame activity at threshold_db below the signal's loudest frame."""
    energies = _frame_energies(samples, frame_len, hop)
    peak = energies.max()
    if peak <= 0.0:
        return np.zeros(len(energies), dtype=bool)
    return 10.0 * np.log10(energies / peak + 1e-300) > threshold_db


def label_frames(s: Waveform, d: Waveform, frame_len: int = DEFAULT_FRAME_LEN,
                 hop: int = DEFAULT_HOP,
                 threshold_db: float = DEFAULT_THRESHOLD_DB) -> TalkLabelSequence:
    """Classify frames by near-end/echo activity into the four talk classes."""
    if len(s) != len(d):
        raise ValueError("label_frames: length mismatch")
    if not (frame_len >= hop >= 1):
        raise ValueError("label_frames: need frame_len >= hop >= 1")
    near_active = _activity(s.samples, frame_len, hop, threshold_db)
    far_active = _activity(d.samples, frame_len, hop, threshold_db)
    labels = np.where(near_active & far_active, DOUBLE_TALK,
                      np.where(near_active, NEAR_ONLY,
                               np.where(far_active, FAR_ONLY, SILENCE)))
    return TalkLabelSequence(labels, frame_len=frame_len, hop=hop)


def measure_ser(s: Waveform, d: Waveform,
                labels: TalkLabelSequence | None = None) -> float:
    """Signal-to-echo ratio in dB over double-talk frames (full signals when
    no double-talk exists)."""
    if labels is None:
        labels = label_frames(s, d)
    mask = labels.sample_mask(len(s), DOUBLE_TALK)
    if not mask.any():
        mask = np.ones(len(s), dtype=bool)
    es = float(np.mean(s.samples[mask] ** 2))
    ed = float(np.mean(d.samples[mask] ** 2))
    return 10.0 * math.log10(es / ed)


def mix_at_ser(s: Waveform, d: Waveform, ser_db: float,
               labels_hint: TalkLabelSequence | None = None
               ) -> tuple[Waveform, float]:
    """Scale the echo so the double-talk SER equals ser_db; returns the
    mixture s + k*d and the applied factor k. Falls back to full-signal
    energies (with a logged warning) when no double-talk frames exist."""
    if len(s) != len(d):
        raise ValueError("mix_at_ser: length mismatch")
    labels = labels_hint if labels_hint is not None else label_frames(s, d)
    mask = labels.sample_mask(len(s), DOUBLE_TALK)
    if not mask.any():
        log.warning("mix_at_ser: no double-talk frames; using full-signal energies")
        mask = np.ones(len(s), dtype=bool)
    es = float(np.mean(s.samples[mask] ** 2))
    ed = float(np.mean(d.samples[mask] ** 2))
    if ed <= 0.0:
        raise ValueError("mix_at_ser: echo has no energy over the mixing region")
    k = math.sqrt(es / ed) * 10.0 ** (-ser_db / 20.0)
    return Waveform(s.samples + k * d.samples), k


def add_noise_at_snr(y: Waveform, noise: Waveform, snr_db: float,
                     ref: Waveform) -> Waveform:
    """Add noise scaled to snr_db against the reference (near-end) energy.
    snr_db = +inf disables the noise entirely."""
    if math.isinf(snr_db) and snr_db > 0:
        return Waveform(y.samples.copy())
    if len(y) != len(noise):
        raise ValueError("add_noise_at_snr: length mismatch")
    ev = float(np.mean(noise.samples ** 2))
    if ev <= 0.0:
        raise ValueError("add_noise_at_snr: noise has zero energy")
    eref = float(np.mean(ref.samples ** 2))
    k = math.sqrt(eref / ev) * 10.0 ** (-snr_db / 20.0)
    return Waveform(y.samples + k * noise.samples)


def labels_on_grid(labels: TalkLabelSequence, t_frames: int, hop: int) -> np.ndarray:
    """Map stored labels onto a different frame grid (e.g. the encoder's):
    frame t takes the label of the stored frame containing its start sample."""
    idx = np.minimum((np.arange(t_frames) * hop) // labels.hop, len(labels) - 1)
    return labels.labels[idx]


# ---------------------------------------------------------------------------
# Source material: seeded speech-like bursts
# ---------------------------------------------------------------------------

def speech_like(rng: np.random.Generator, n_samples: int,
                bursts: list[tuple[float, float]],
                fs: int = SAMPLE_RATE, peak: float = 0.35) -> Waveform:
    """Harmonic bursts with syllabic amplitude modulation inside the given
    (start, end) fractional intervals; silence elsewhere."""
    out = np.zeros(n_samples)
    t = np.arange(n_samples) / fs
    for start_frac, end_frac in bursts:
        a = int(start_frac * n_samples)
        b = int(end_frac * n_samples)
        if b <= a:
            continue
        seg_t = t[a:b]
        f0 = rng.uniform(90.0, 240.0)
        sig = np.zeros(b - a)
        for harmonic in range(1, 6):
            sig += rng.uniform(0.4, 1.0) / harmonic * np.sin(
                2 * np.pi * f0 * harmonic * seg_t + rng.uniform(0, 2 * np.pi))
        sig += 0.05 * rng.standard_normal(b - a)
        syllable = 0.55 + 0.45 * np.sin(2 * np.pi * rng.uniform(2.0, 5.0) * seg_t
                                        + rng.uniform(0, 2 * np.pi))
        ramp = np.minimum(1.0, np.minimum(np.arange(b - a), np.arange(b - a)[::-1])
                          / max(1, int(0.02 * fs)))
        out[a:b] = sig * syllable * ramp
    m = np.abs(out).max()
    if m > 0:
        out *= peak / m
    return Waveform(out)


def _jitter(rng, intervals, spread=0.02):
    out = []
    for a, b in intervals:
        a = min(max(0.0, a + rng.uniform(-spread, spread)), 0.98)
        b = min(max(a + 0.02, b + rng.uniform(-spread, spread)), 1.0)
        out.append((a, b))
    return out


FAR_BURSTS = [(0.02, 0.30), (0.52, 0.62), (0.70, 0.84)]
NEAR_BURSTS = [(0.22, 0.48), (0.58, 0.68)]


def corpus_utterance(rng: np.random.Generator, n_samples: int,
                     bursts: list[tuple[float, float]], sources: list,
                     peak: float = 0.35) -> Waveform:
    """Source material from real recordings: a random window of a random
    corpus file, gated to the given activity intervals."""
    from .audio_io import read_wav
    path = sources[int(rng.integers(0, len(sources)))]
    audio = read_wav(path).samples
    if len(audio) < n_samples:
        audio = np.tile(audio, -(-n_samples // len(audio)))
    start = int(rng.integers(0, len(audio) - n_samples + 1))
    window = audio[start:start + n_samples]
    gate = np.zeros(n_samples)
    ramp_len = max(1, int(0.02 * SAMPLE_RATE))
    for a_f, b_f in bursts:
        a, b = int(a_f * n_samples), int(b_f * n_samples)
        if b <= a:
            continue
        seg = np.minimum(1.0, np.minimum(np.arange(b - a),
                                         np.arange(b - a)[::-1]) / ramp_len)
        gate[a:b] = seg
    out = window * gate
    m = np.abs(out).max()
    if m > 0:
        out *= peak / m
    return Waveform(out)


def list_corpus(source_dir) -> list:
    files = sorted(os.path.join(source_dir, f) for f in os.listdir(source_dir)
                   if f.lower().endswith(".wav"))
    if not files:
        raise ValueError(f"insufficient source material: no WAV files in {source_dir}")
    return files


# ---------------------------------------------------------------------------
# Dataset generation
# ---------------------------------------------------------------------------

@dataclass
class GenerationConfig:
    seed: int = 0
    train_count: int = 8
    test_count: int = 2
    duration_s: float = 4.0
    ser_levels_db: tuple = TRAIN_SER_LEVELS
    test_ser_levels_db: tuple = TEST_SER_LEVELS
    snr_db: float = math.inf
    nonlinear: bool = False
    rooms: tuple = ((5.0, 4.0, 3.0), (6.0, 4.5, 2.8), (4.2, 3.6, 2.6))
    t60s: tuple = (0.2, 0.3)
    n_rirs: int = 7
    rir_taps: int = 4096
    frame_len: int = DEFAULT_FRAME_LEN
    hop: int = DEFAULT_HOP
    threshold_db: float = DEFAULT_THRESHOLD_DB
    clip_ratio: float = 0.8
    headroom_peak: float = 0.95
    source_dir: str | None = None  # None: built-in speech-like synthesis


def parse_generation_config(path) -> GenerationConfig:
    """Read the [synth] section of a key=value config file."""
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise FileNotFoundError(f"config file not found: {path}")
    if "synth" not in cp:
        raise ValueError(f"{path}: missing [synth] section")
    sec = cp["synth"]

    def floats(key, default):
        if key not in sec:
            return default
        return tuple(float(v) for v in sec[key].replace(";", ",").split(",") if v.strip())

    rooms = GenerationConfig.rooms
    if "rooms" in sec:
        rooms = tuple(tuple(float(d) for d in spec.strip().split("x"))
                      for spec in sec["rooms"].split(",") if spec.strip())
    snr = sec.get("snr_db", "inf").strip().lower()
    return GenerationConfig(
        seed=sec.getint("seed", 0),
        train_count=sec.getint("train_count", 8),
        test_count=sec.getint("test_count", 2),
        duration_s=sec.getfloat("duration_s", 4.0),
        ser_levels_db=floats("ser_db", TRAIN_SER_LEVELS),
        test_ser_levels_db=floats("test_ser_db", TEST_SER_LEVELS),
        snr_db=math.inf if snr in ("inf", "none", "") else float(snr),
        nonlinear=sec.getboolean("nonlinear", False),
        rooms=rooms,
        t60s=floats("t60", (0.2, 0.3)),
        n_rirs=sec.getint("n_rirs", 7),
        rir_taps=sec.getint("rir_taps", 4096),
        frame_len=sec.getint("frame_len", DEFAULT_FRAME_LEN),
        hop=sec.getint("hop", DEFAULT_HOP),
        threshold_db=sec.getfloat("threshold_db", DEFAULT_THRESHOLD_DB),
        clip_ratio=sec.getfloat("clip_ratio", 0.8),
        source_dir=sec.get("source_dir", None) or None,
    )


def _make_rirs(cfg: GenerationConfig) -> list[RoomImpulseResponse]:
    rng = np.random.default_rng([cfg.seed, 0xA1])
    rirs = []
    for i in range(cfg.n_rirs):
        room = np.asarray(cfg.rooms[i % len(cfg.rooms)])
        t60 = cfg.t60s[i % len(cfg.t60s)]
        src = rng.uniform(0.5, room - 0.5)
        mic = rng.uniform(0.5, room - 0.5)
        rirs.append(simulate_rir(room, src, mic, t60, cfg.rir_taps))
    return rirs


def synthesize_scenario(cfg: GenerationConfig, rir: RoomImpulseResponse,
                        rir_id: int, ser_db: float, seed_key,
                        sources: list | None = None) -> MixtureScenario:
    """Build one seeded mixture: far/near bursts, echo path, SER mix, noise."""
    rng = np.random.default_rng(seed_key)
    n = int(cfg.duration_s * SAMPLE_RATE)
    if sources:
        far = corpus_utterance(rng, n, _jitter(rng, FAR_BURSTS), sources)
        near = corpus_utterance(rng, n, _jitter(rng, NEAR_BURSTS), sources)
    else:
        far = speech_like(rng, n, _jitter(rng, FAR_BURSTS))
        near = speech_like(rng, n, _jitter(rng, NEAR_BURSTS))
    path_cfg = EchoPathConfig(rir=rir, nonlinear=cfg.nonlinear,
                              clip_ratio=cfg.clip_ratio)
    echo = apply_echo_path(far, path_cfg)
    labels = label_frames(near, echo, cfg.frame_len, cfg.hop, cfg.threshold_db)
    mixture, k = mix_at_ser(near, echo, ser_db, labels_hint=labels)
    echo = Waveform(k * echo.samples)
    noise = None
    if not math.isinf(cfg.snr_db):
        clean = mixture
        mixture = add_noise_at_snr(clean, Waveform(rng.standard_normal(n)),
                                   cfg.snr_db, ref=near)
        noise = Waveform(mixture.samples - clean.samples)  # stored at mix scale
    # joint headroom scaling keeps SER/SNR and (relative-threshold) labels intact
    peak = np.abs(mixture.samples).max()
    if peak > cfg.headroom_peak:
        g = cfg.headroom_peak / peak
        far = Waveform(g * far.samples)
        near = Waveform(g * near.samples)
        echo = Waveform(g * echo.samples)
        mixture = Waveform(g * mixture.samples)
        if noise is not None:
            noise = Waveform(g * noise.samples)
    return MixtureScenario(far_end=far, near_end=near, echo=echo, mixture=mixture,
                           labels=labels, ser_db=ser_db, noise=noise,
                           snr_db=cfg.snr_db, rir_id=rir_id,
                           nonlinear=cfg.nonlinear)


def _write_record(out_dir, stem, scenario: MixtureScenario) -> ManifestRecord:
    paths = {}
    for kind, wave in (("mix", scenario.mixture), ("far", scenario.far_end),
                       ("near", scenario.near_end)):
        rel = f"{stem}_{kind}.wav"
        write_wav(os.path.join(out_dir, rel), wave)
        paths[kind] = rel
    label_rel = f"{stem}_labels.bin"
    write_labels(os.path.join(out_dir, label_rel), scenario.labels.labels)
    return ManifestRecord(
        mixture_path=paths["mix"], far_end_path=paths["far"],
        near_end_path=paths["near"], label_path=label_rel,
        ser_db=scenario.ser_db, snr_db=scenario.snr_db,
        rir_id=scenario.rir_id, nonlinear_flag=scenario.nonlinear)


def _build_one(args):
    out_dir, cfg, rir, rir_id, ser, stem, seed_key, sources = args
    scenario = synthesize_scenario(cfg, rir, rir_id, ser, seed_key, sources)
    return _write_record(out_dir, stem, scenario)


def build_dataset(cfg: GenerationConfig, out_dir, jobs: int = 1) -> DatasetManifest:
    """Generate train and test mixtures plus manifests under out_dir.

    Training records draw from all RIRs but the last; test records use only
    the last RIR. Returns the training manifest (manifest.txt); the test
    manifest is written alongside as manifest_test.txt. Per-record seeding
    makes generation order-independent and byte-reproducible.
    """
    if cfg.n_rirs < 2:
        raise ValueError("need at least 2 RIRs (train pool + held-out test)")
    os.makedirs(out_dir, exist_ok=True)
    sources = list_corpus(cfg.source_dir) if cfg.source_dir else None
    rirs = _make_rirs(cfg)
    for i, rir in enumerate(rirs):
        save_rir(os.path.join(out_dir, f"rir_{i:02d}.rir"), rir)

    rng = np.random.default_rng([cfg.seed, 0xB2])
    tasks = []
    for i in range(cfg.train_count):
        rir_id = int(rng.integers(0, cfg.n_rirs - 1))
        ser = float(rng.choice(cfg.ser_levels_db))
        tasks.append((out_dir, cfg, rirs[rir_id], rir_id, ser,
                      f"train_{i:04d}", [cfg.seed, 1, i], sources))
    test_rir = cfg.n_rirs - 1
    for i in range(cfg.test_count):
        ser = float(cfg.test_ser_levels_db[i % len(cfg.test_ser_levels_db)])
        tasks.append((out_dir, cfg, rirs[test_rir], test_rir, ser,
                      f"test_{i:04d}", [cfg.seed, 2, i], sources))

    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_build_one, tasks))
    else:
        records = [_build_one(t) for t in tasks]

    train = DatasetManifest(records[:cfg.train_count])
    test = DatasetManifest(records[cfg.train_count:])
    save_manifest(os.path.join(out_dir, "manifest.txt"), train)
    save_manifest(os.path.join(out_dir, "manifest_test.txt"), test)
    return train
