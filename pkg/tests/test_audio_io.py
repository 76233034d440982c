import numpy as np
import pytest

from aectk import audio_io
from aectk.audio_io import (CheckpointError, ManifestError, RirFormatError,
                            RoomImpulseResponse, Waveform, WavFormatError,
                            load_checkpoint, load_manifest, load_rir, read_wav,
                            save_checkpoint, save_manifest, save_rir, write_wav)


def test_pcm_scaling_values(tmp_path):
    path = tmp_path / "x.wav"
    write_wav(path, Waveform(np.array([0.5, 0.0, -1.0, 2.0])))
    import wave
    with wave.open(str(path), "rb") as w:
        pcm = np.frombuffer(w.readframes(w.getnframes()), dtype="<i2")
    assert pcm[0] == 16384      # 0.5 * 32768
    assert pcm[1] == 0
    assert pcm[2] == -32768
    assert pcm[3] == 32767      # clamped to 1 - 1/32768
    back = read_wav(path)
    assert back.samples[0] == 0.5
    assert back.samples[1] == 0.0


def test_wav_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    w = Waveform(np.round(rng.uniform(-1, 1, 1000) * 32768) / 32768)
    p1, p2 = tmp_path / "a.wav", tmp_path / "b.wav"
    write_wav(p1, w)
    first = read_wav(p1)
    write_wav(p2, first)
    assert p1.read_bytes() == p2.read_bytes()
    np.testing.assert_array_equal(first.samples, read_wav(p2).samples)


def test_read_wav_rejects_wrong_formats(tmp_path):
    import wave
    bad_rate = tmp_path / "rate.wav"
    with wave.open(str(bad_rate), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(44100)
        w.writeframes(b"\x00\x00" * 10)
    with pytest.raises(WavFormatError, match="44100"):
        read_wav(bad_rate)

    stereo = tmp_path / "stereo.wav"
    with wave.open(str(stereo), "wb") as w:
        w.setnchannels(2)
        w.setsampwidth(2)
        w.setframerate(16000)
        w.writeframes(b"\x00\x00\x00\x00" * 10)
    with pytest.raises(WavFormatError, match="mono"):
        read_wav(stereo)

    not_wav = tmp_path / "junk.wav"
    not_wav.write_bytes(b"this is not RIFF data")
    with pytest.raises(WavFormatError):
        read_wav(not_wav)


def test_waveform_rejects_nonfinite():
    with pytest.raises(WavFormatError, match="NaN"):
        Waveform(np.array([0.0, np.nan]))
    with pytest.raises(WavFormatError):
        Waveform(np.array([np.inf]))


def test_raw_rir_round_trip(tmp_path):
    path = tmp_path / "h.rir"
    save_rir(path, RoomImpulseResponse(np.array([1.0, 0.5, 0.25])))
    rir = load_rir(path)
    np.testing.assert_allclose(rir.taps, [1.0, 0.5, 0.25], atol=1e-7)
    assert rir.sample_rate == 16000


def test_rir_empty_and_truncated(tmp_path):
    empty = tmp_path / "empty.rir"
    empty.write_bytes(b"RIR1" + (0).to_bytes(4, "little") * 2)
    with pytest.raises(RirFormatError, match="empty"):
        load_rir(empty)
    trunc = tmp_path / "trunc.rir"
    trunc.write_bytes(b"RIR1" + (16000).to_bytes(4, "little")
                      + (10).to_bytes(4, "little") + b"\x00" * 8)
    with pytest.raises(RirFormatError, match="truncated"):
        load_rir(trunc)


def test_rir_rejects_nonfinite_payload(tmp_path):
    import struct
    bad = tmp_path / "nan.rir"
    payload = struct.pack("<fff", 1.0, float("nan"), 0.5)
    bad.write_bytes(b"RIR1" + struct.pack("<II", 16000, 3) + payload)
    with pytest.raises(RirFormatError, match="NaN"):
        load_rir(bad)


def test_rir_wav_vs_raw_equivalence(tmp_path):
    # same taps through both containers agree within WAV quantization
    rng = np.random.default_rng(3)
    taps = rng.uniform(-0.9, 0.9, 256)
    raw_path = tmp_path / "h.rir"
    wav_path = tmp_path / "h.wav"
    save_rir(raw_path, RoomImpulseResponse(taps))
    write_wav(wav_path, Waveform(taps))
    from_raw = load_rir(raw_path)
    from_wav = load_rir(wav_path)
    assert from_raw.taps.shape == from_wav.taps.shape
    assert np.max(np.abs(from_raw.taps - from_wav.taps)) <= 1.0 / 32768


def test_manifest_round_trip(tmp_path):
    for name in ("m.wav", "f.wav", "n.wav"):
        write_wav(tmp_path / name, Waveform(np.zeros(100)))
    audio_io.write_labels(tmp_path / "l.bin", np.array([0, 1, 2, 3]))
    rec = audio_io.ManifestRecord("m.wav", "f.wav", "n.wav", "l.bin",
                                  ser_db=3.5, snr_db=10.0, rir_id=2,
                                  nonlinear_flag=True)
    mpath = tmp_path / "manifest.txt"
    save_manifest(mpath, audio_io.DatasetManifest([rec]))
    loaded = load_manifest(mpath)
    got = loaded.records[0]
    assert got.ser_db == 3.5 and got.snr_db == 10.0
    assert got.rir_id == 2 and got.nonlinear_flag is True


def test_manifest_missing_file(tmp_path):
    mpath = tmp_path / "manifest.txt"
    mpath.write_text("mixture_path=gone.wav\tfar_end_path=gone.wav\t"
                     "near_end_path=gone.wav\tlabel_path=gone.bin\t"
                     "ser_db=0.0\tsnr_db=inf\trir_id=0\tnonlinear_flag=0\n")
    with pytest.raises(ManifestError, match="missing file"):
        load_manifest(mpath)


def test_labels_round_trip(tmp_path):
    labels = np.array([0, 1, 2, 3, 3, 0], dtype=np.int64)
    audio_io.write_labels(tmp_path / "l.bin", labels)
    np.testing.assert_array_equal(audio_io.read_labels(tmp_path / "l.bin"), labels)


def test_checkpoint_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(1)
    params = {"a": rng.standard_normal((3, 4)), "b": rng.standard_normal(7),
              "scalar": np.asarray(rng.standard_normal())}
    meta = {"epoch": 5, "lr": 1e-5}
    opt = {"m": {k: rng.standard_normal(v.shape) for k, v in params.items()},
           "v": {k: rng.standard_normal(v.shape) ** 2 for k, v in params.items()}}
    path = tmp_path / "ck.aeck"
    save_checkpoint(path, params, meta=meta, opt_state=opt)
    p2, m2, o2 = load_checkpoint(path)
    for k in params:
        np.testing.assert_array_equal(p2[k], params[k])
        assert p2[k].dtype == np.float64
        np.testing.assert_array_equal(o2["m"][k], opt["m"][k])
        np.testing.assert_array_equal(o2["v"][k], opt["v"][k])
    assert m2["epoch"] == 5 and m2["lr"] == 1e-5


def test_checkpoint_truncation_and_version(tmp_path):
    path = tmp_path / "ck.aeck"
    save_checkpoint(path, {"a": np.arange(10.0)}, meta={})
    blob = path.read_bytes()
    trunc = tmp_path / "trunc.aeck"
    trunc.write_bytes(blob[:-12])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(trunc)
    wrong = tmp_path / "wrong.aeck"
    wrong.write_bytes(b"AECK" + (99).to_bytes(4, "little") + blob[8:])
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(wrong)
    bad_magic = tmp_path / "magic.aeck"
    bad_magic.write_bytes(b"NOPE" + blob[4:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(bad_magic)
