"""File formats: 16-bit PCM WAV, raw RIR blobs, dataset manifests, checkpoints.

All pipeline audio is mono 16 kHz. WAV samples map to floats by dividing the
integer payload by 32768, so a read/write cycle is bit-exact on the PCM data.
"""

import io
import json
import math
import os
import struct
import wave
from dataclasses import dataclass, field

import numpy as np

SAMPLE_RATE = 16000
PCM_SCALE = 32768.0
RIR_MAGIC = b"RIR1"
CHECKPOINT_MAGIC = b"AECK"
CHECKPOINT_VERSION = 1

MANIFEST_FIELDS = ("mixture_path", "far_end_path", "near_end_path", "label_path",
                   "ser_db", "snr_db", "rir_id", "nonlinear_flag")


class WavFormatError(ValueError):
    pass


class RirFormatError(ValueError):
    pass


class ManifestError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class Waveform:
    """Mono audio at 16 kHz, float samples nominally in [-1, 1]."""
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise WavFormatError("waveform must be 1-D mono")
        if self.sample_rate != SAMPLE_RATE:
            raise WavFormatError(f"sample rate must be {SAMPLE_RATE}, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise WavFormatError("waveform contains NaN/Inf")

    def __len__(self):
        return len(self.samples)


@dataclass
class RoomImpulseResponse:
    taps: np.ndarray
    sample_rate: int = SAMPLE_RATE
    t60: float | None = None

    def __post_init__(self):
        self.taps = np.asarray(self.taps, dtype=np.float64)
        if self.taps.size == 0:
            raise RirFormatError("RIR must be non-empty")
        if not np.all(np.isfinite(self.taps)):
            raise RirFormatError("RIR contains NaN/Inf")


def read_wav(path) -> Waveform:
    """Read a 16-bit PCM mono 16 kHz WAV file; integer samples scaled by 1/32768."""
    try:
        with wave.open(str(path), "rb") as w:
            channels = w.getnchannels()
            width = w.getsampwidth()
            rate = w.getframerate()
            n = w.getnframes()
            payload = w.readframes(n)
    except (wave.Error, EOFError) as exc:
        raise WavFormatError(f"{path}: not a readable WAV file ({exc})") from exc
    if channels != 1:
        raise WavFormatError(f"{path}: expected mono, got {channels} channels")
    if width != 2:
        raise WavFormatError(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
    if rate != SAMPLE_RATE:
        raise WavFormatError(f"{path}: expected {SAMPLE_RATE} Hz, got {rate}")
    pcm = np.frombuffer(payload, dtype="<i2")
    return Waveform(pcm.astype(np.float64) / PCM_SCALE)


def write_wav(path, w: Waveform) -> None:
    """Write 16-bit PCM mono 16 kHz; floats clamped to [-1, 1 - 1/32768] first."""
    if not np.all(np.isfinite(w.samples)):
        raise WavFormatError("refusing to write NaN/Inf samples")
    clipped = np.clip(w.samples, -1.0, 1.0 - 1.0 / PCM_SCALE)
    pcm = np.round(clipped * PCM_SCALE).astype("<i2")
    with wave.open(str(path), "wb") as out:
        out.setnchannels(1)
        out.setsampwidth(2)
        out.setframerate(SAMPLE_RATE)
        out.writeframes(pcm.tobytes())


def load_rir(path) -> RoomImpulseResponse:
    """Load an impulse response from a WAV file or a raw RIR1 blob.

    Raw layout: magic ``RIR1``, u32 sample_rate, u32 n_taps, then n_taps
    little-endian float32 values.
    """
    with open(path, "rb") as f:
        head = f.read(4)
        if head == RIR_MAGIC:
            meta = f.read(8)
            if len(meta) != 8:
                raise RirFormatError(f"{path}: truncated RIR header")
            rate, n_taps = struct.unpack("<II", meta)
            if n_taps == 0:
                raise RirFormatError(f"{path}: empty RIR payload")
            payload = f.read(4 * n_taps)
            if len(payload) != 4 * n_taps:
                raise RirFormatError(f"{path}: truncated RIR payload")
            taps = np.frombuffer(payload, dtype="<f4").astype(np.float64)
            if not np.all(np.isfinite(taps)):
                raise RirFormatError(f"{path}: RIR contains NaN/Inf")
            return RoomImpulseResponse(taps, sample_rate=int(rate))
    wav = read_wav(path)
    return RoomImpulseResponse(wav.samples, sample_rate=wav.sample_rate)


def save_rir(path, rir: RoomImpulseResponse) -> None:
    """Write the raw RIR1 container."""
    with open(path, "wb") as f:
        f.write(RIR_MAGIC)
        f.write(struct.pack("<II", rir.sample_rate, rir.taps.size))
        f.write(rir.taps.astype("<f4").tobytes())


# ---------------------------------------------------------------------------
# Frame labels: one byte per frame, values 0..3.
# ---------------------------------------------------------------------------

def write_labels(path, labels: np.ndarray) -> None:
    arr = np.asarray(labels)
    if arr.size and (arr.min() < 0 or arr.max() > 3):
        raise ValueError("labels must be in 0..3")
    with open(path, "wb") as f:
        f.write(arr.astype(np.uint8).tobytes())


def read_labels(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    labels = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)
    if labels.size and labels.max() > 3:
        raise ValueError(f"{path}: label byte out of range")
    return labels


# ---------------------------------------------------------------------------
# Dataset manifest: one record per line, tab-separated key=value fields.
# ---------------------------------------------------------------------------

@dataclass
class ManifestRecord:
    mixture_path: str
    far_end_path: str
    near_end_path: str
    label_path: str
    ser_db: float
    snr_db: float
    rir_id: int
    nonlinear_flag: bool


@dataclass
class DatasetManifest:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)


def save_manifest(path, manifest: DatasetManifest) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in manifest.records:
            fields = [
                f"mixture_path={r.mixture_path}",
                f"far_end_path={r.far_end_path}",
                f"near_end_path={r.near_end_path}",
                f"label_path={r.label_path}",
                f"ser_db={r.ser_db!r}",
                f"snr_db={r.snr_db!r}",
                f"rir_id={r.rir_id}",
                f"nonlinear_flag={int(r.nonlinear_flag)}",
            ]
            f.write("\t".join(fields) + "\n")


def load_manifest(path, check_paths: bool = True) -> DatasetManifest:
    base = os.path.dirname(os.path.abspath(path))
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            kv = {}
            for fieldtxt in line.split("\t"):
                if "=" not in fieldtxt:
                    raise ManifestError(f"{path}:{lineno}: malformed field {fieldtxt!r}")
                key, val = fieldtxt.split("=", 1)
                kv[key] = val
            missing = [k for k in MANIFEST_FIELDS if k not in kv]
            if missing:
                raise ManifestError(f"{path}:{lineno}: missing fields {missing}")
            rec = ManifestRecord(
                mixture_path=kv["mixture_path"],
                far_end_path=kv["far_end_path"],
                near_end_path=kv["near_end_path"],
                label_path=kv["label_path"],
                ser_db=float(kv["ser_db"]),
                snr_db=float(kv["snr_db"]),
                rir_id=int(kv["rir_id"]),
                nonlinear_flag=bool(int(kv["nonlinear_flag"])),
            )
            if not np.isfinite(rec.ser_db):
                raise ManifestError(f"{path}:{lineno}: ser_db must be finite")
            if math.isnan(rec.snr_db):
                raise ManifestError(f"{path}:{lineno}: snr_db must not be NaN")
            if check_paths:
                for p in (rec.mixture_path, rec.far_end_path, rec.near_end_path, rec.label_path):
                    full = p if os.path.isabs(p) else os.path.join(base, p)
                    if not os.path.exists(full):
                        raise ManifestError(f"{path}:{lineno}: missing file {p}")
            records.append(rec)
    return DatasetManifest(records)


def resolve_record_path(manifest_path, rel_path) -> str:
    if os.path.isabs(rel_path):
        return rel_path
    return os.path.join(os.path.dirname(os.path.abspath(manifest_path)), rel_path)


# ---------------------------------------------------------------------------
# Checkpoints: single file, versioned, little-endian, per-array shape headers.
# Layout after the magic/version words: u32 JSON metadata length + UTF-8 JSON,
# then a named-array block for parameters, then (optionally) one block per
# Adam moment set. Arrays are float64 little-endian so round-trips are
# bit-exact.
# ---------------------------------------------------------------------------

def _write_array_block(f, arrays: dict) -> None:
    f.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")  # keeps 0-d shape; tobytes is C-order
        encoded = name.encode("utf-8")
        f.write(struct.pack("<H", len(encoded)))
        f.write(encoded)
        f.write(struct.pack("<B", arr.ndim))
        for dim in arr.shape:
            f.write(struct.pack("<I", dim))
        f.write(arr.tobytes())


def _read_exact(f, count, what):
    data = f.read(count)
    if len(data) != count:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return data


def _read_array_block(f) -> dict:
    (count,) = struct.unpack("<I", _read_exact(f, 4, "array count"))
    arrays = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", _read_exact(f, 2, "name length"))
        name = _read_exact(f, name_len, "name").decode("utf-8")
        (ndim,) = struct.unpack("<B", _read_exact(f, 1, "ndim"))
        shape = tuple(struct.unpack("<I", _read_exact(f, 4, "dim"))[0] for _ in range(ndim))
        n_items = int(np.prod(shape)) if shape else 1
        raw = _read_exact(f, 8 * n_items, f"data for {name}")
        arrays[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return arrays


def save_checkpoint(path, params: dict, meta: dict | None = None,
                    opt_state: dict | None = None) -> None:
    """Serialize named parameter arrays plus JSON metadata and optional
    optimizer moment arrays."""
    meta = dict(meta or {})
    meta["has_opt_state"] = opt_state is not None
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    _write_array_block(buf, params)
    if opt_state is not None:
        _write_array_block(buf, opt_state.get("m", {}))
        _write_array_block(buf, opt_state.get("v", {}))
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_checkpoint(path):
    """Return (params, meta, opt_state) from a checkpoint file."""
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        (meta_len,) = struct.unpack("<I", _read_exact(f, 4, "metadata length"))
        meta = json.loads(_read_exact(f, meta_len, "metadata").decode("utf-8"))
        params = _read_array_block(f)
        opt_state = None
        if meta.get("has_opt_state"):
            m = _read_array_block(f)
            v = _read_array_block(f)
            opt_state = {"m": m, "v": v}
    return params, meta, opt_state
