"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s``.
"""

import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from aectk import audio_io
from aectk.audio_io import Waveform
from aectk.autodiff import Tensor
from aectk.autodiff import ops


@contextmanager
def criterion(label):
    try:
        yield
    except Exception:
        print(f"ACCEPTANCE {label}: FAIL")
        raise
    print(f"ACCEPTANCE {label}: PASS")


# ---------------------------------------------------------------------------
# 1. gradient oracle
# ---------------------------------------------------------------------------

def test_criterion_1_gradient_oracle():
    with criterion("1 gradient-oracle"):
        from aectk.diagnostics import run_grad_check_suite
        start = time.monotonic()
        results = run_grad_check_suite(seed=0, points_per_op=3)
        elapsed = time.monotonic() - start
        worst = {name: err for name, err in results}
        assert len(worst) >= 20
        assert "model_loss" in worst
        for name, err in results:
            assert err < 1e-4, f"{name}: {err:.3e}"
        assert elapsed < 120.0, f"suite took {elapsed:.1f}s"


# ---------------------------------------------------------------------------
# 2. causality suite
# ---------------------------------------------------------------------------

def test_criterion_2_causality():
    with criterion("2 causality"):
        rng = np.random.default_rng(2)
        t_frames, width = 130, 8
        cut = 60

        def unchanged(before, after, upto):
            assert np.max(np.abs(before[:upto] - after[:upto])) < 1e-9

        # cumulative layer norm
        x = rng.standard_normal((t_frames, width))
        gain = Tensor(rng.uniform(0.5, 1.5, width))
        bias = Tensor(rng.standard_normal(width))
        base = ops.layer_norm_cumulative(Tensor(x), gain, bias).data
        x2 = x.copy()
        x2[cut + 1:] += rng.standard_normal((t_frames - cut - 1, width)) * 3
        pert = ops.layer_norm_cumulative(Tensor(x2), gain, bias).data
        unchanged(base, pert, cut + 1)

        # local attention at the configured window of 100 frames
        q = rng.standard_normal((t_frames, width))
        kv = rng.standard_normal((t_frames, width))
        base = ops.local_attention(Tensor(q), Tensor(kv), 100).data
        kv2 = kv.copy()
        kv2[cut + 1:] += 5.0
        q2 = q.copy()
        q2[cut + 1:] -= 5.0
        pert = ops.local_attention(Tensor(q2), Tensor(kv2), 100).data
        unchanged(base, pert, cut + 1)

        # stacked LSTMs
        w1 = rng.standard_normal((width, 4 * width)) * 0.3
        r1 = rng.standard_normal((width, 4 * width)) * 0.3
        w2 = rng.standard_normal((width, 4 * width)) * 0.3
        r2 = rng.standard_normal((width, 4 * width)) * 0.3
        b = np.zeros(4 * width)

        def stack(arr):
            h1 = ops.lstm_layer(Tensor(arr), Tensor(w1), Tensor(r1), Tensor(b))
            return ops.lstm_layer(h1, Tensor(w2), Tensor(r2), Tensor(b)).data

        base = stack(x)
        pert = stack(x2)
        unchanged(base, pert, cut + 1)

        # full forward with the attention window at 100
        from aectk.model import ModelConfig, forward, init_params
        cfg = ModelConfig(n_basis=32, frame_len=160, hop=80, bottleneck=8,
                          hidden=8, attention_window=100)
        params = init_params(cfg, seed=0)
        n = 130 * 80 + 80  # 131 frames
        mix = rng.standard_normal(n) * 0.3
        far = rng.standard_normal(n) * 0.3
        s_base, p_base = forward(mix, far, params, cfg)
        perturb_start = cut * cfg.hop + cfg.frame_len
        mix2, far2 = mix.copy(), far.copy()
        mix2[perturb_start:] += 1.0
        far2[perturb_start:] -= 1.0
        s_pert, p_pert = forward(mix2, far2, params, cfg)
        safe = (cut + 1) * cfg.hop
        unchanged(s_base.data, s_pert.data, safe)
        unchanged(p_base.data, p_pert.data, cut + 1)


# ---------------------------------------------------------------------------
# 3. overfit smoke test
# ---------------------------------------------------------------------------

def test_criterion_3_overfit(tmp_path):
    with criterion("3 overfit-smoke"):
        from aectk.model import ModelConfig, forward
        from aectk.synth import GenerationConfig, build_dataset, labels_on_grid
        from aectk.synth import TalkLabelSequence
        from aectk.training import TrainConfig, load_model, train

        start = time.monotonic()
        gen = GenerationConfig(seed=3, train_count=1, test_count=1,
                               duration_s=1.0, snr_db=math.inf, rir_taps=2048,
                               t60s=(0.2,), n_rirs=2)
        build_dataset(gen, tmp_path / "data")
        model_cfg = ModelConfig(n_basis=64, frame_len=160, hop=80,
                                bottleneck=32, hidden=32, attention_window=10)
        train_cfg = TrainConfig(alpha=0.001, lr_start=2e-3, lr_end=2e-3,
                                epochs=500, patience=600, seed=1)
        result = train(tmp_path / "data" / "manifest.txt", model_cfg, train_cfg,
                       tmp_path / "run")
        assert len(result.history) == 500  # one mixture: one step per epoch

        initial = result.history[0][1]
        final = result.history[-1][2]
        assert final < 0.10 * initial, f"loss {final:.4f} vs initial {initial:.4f}"

        params, cfg = load_model(result.last_checkpoint_path)
        rec = audio_io.load_manifest(tmp_path / "data" / "manifest.txt").records[0]
        mix = audio_io.read_wav(tmp_path / "data" / rec.mixture_path).samples
        far = audio_io.read_wav(tmp_path / "data" / rec.far_end_path).samples
        labels = TalkLabelSequence(
            audio_io.read_labels(tmp_path / "data" / rec.label_path))
        _, probs = forward(mix, far, params, cfg)
        truth = labels_on_grid(labels, probs.data.shape[0], cfg.hop)
        accuracy = float((probs.data.argmax(axis=1) == truth).mean())
        assert accuracy >= 0.90, f"frame accuracy {accuracy:.3f}"

        elapsed = time.monotonic() - start
        assert elapsed < 300.0, f"overfit took {elapsed:.1f}s"


# ---------------------------------------------------------------------------
# 4. linear baselines
# ---------------------------------------------------------------------------

def test_criterion_4_baselines():
    with criterion("4 nlms-fdaf"):
        from aectk.baselines import FdafConfig, fdaf_cancel, nlms_cancel

        start = time.monotonic()
        rng = np.random.default_rng(42)
        n = 4 * 16000
        far = rng.standard_normal(n) * 0.1
        path = rng.standard_normal(64) * np.exp(-np.arange(64) / 16.0)
        path *= 0.5 / np.abs(path).max()
        mix = np.convolve(far, path)[:n]
        far_w, mix_w = Waveform(far), Waveform(mix)

        _, res_nlms, _ = nlms_cancel(far_w, mix_w, taps=64, mu=0.5, eps=1e-6)
        _, res_fdaf = fdaf_cancel(far_w, mix_w,
                                  FdafConfig(block_len=64, partitions=1, mu=0.5))

        def steady_erle(residual):
            num = max(np.mean(mix[-16000:] ** 2), 1e-12)
            den = max(np.mean(residual.samples[-16000:] ** 2), 1e-12)
            return 10.0 * math.log10(num / den)

        erle_nlms = steady_erle(res_nlms)
        erle_fdaf = steady_erle(res_fdaf)
        assert erle_nlms >= 25.0, f"NLMS steady-state ERLE {erle_nlms:.2f}"
        assert abs(erle_nlms - erle_fdaf) <= 0.5, (erle_nlms, erle_fdaf)
        elapsed = time.monotonic() - start
        assert elapsed < 60.0, f"baselines took {elapsed:.1f}s"


# ---------------------------------------------------------------------------
# 5. metric exactness
# ---------------------------------------------------------------------------

def test_criterion_5_metric_exactness():
    with criterion("5 metric-exactness"):
        from aectk.metrics import erle
        from aectk.synth import FAR_ONLY, TalkLabelSequence
        from aectk.training import TrainConfig, combine_losses, lr_at

        y = Waveform(np.random.default_rng(5).standard_normal(8000) * 0.3)
        labels = TalkLabelSequence(np.full(50, FAR_ONLY))
        assert erle(y, y, labels) == 0.0
        assert erle(y, Waveform(0.1 * y.samples), labels) == pytest.approx(
            20.0, abs=1e-9)

        assert combine_losses(2.0, 4.0, 0.001) == 2.002

        cfg = TrainConfig()  # lr 1e-4 -> 1e-8 across 200 epochs
        assert lr_at(0, cfg) == 1e-4
        assert lr_at(199, cfg) == 1e-8


# ---------------------------------------------------------------------------
# 6. data pipeline
# ---------------------------------------------------------------------------

def test_criterion_6_data_pipeline(tmp_path):
    with criterion("6 data-pipeline"):
        from aectk.synth import (EchoPathConfig, GenerationConfig,
                                 TalkLabelSequence, apply_echo_path,
                                 build_dataset, label_frames, measure_ser)

        # SER round trip at the test levels
        gen = GenerationConfig(seed=13, train_count=3, test_count=3,
                               duration_s=2.0, snr_db=math.inf,
                               ser_levels_db=(0.0, 3.5, 7.0), rir_taps=1024,
                               t60s=(0.15,), n_rirs=2)
        build_dataset(gen, tmp_path)
        seen_levels = set()
        for name in ("manifest.txt", "manifest_test.txt"):
            for rec in audio_io.load_manifest(tmp_path / name).records:
                mix = audio_io.read_wav(tmp_path / rec.mixture_path)
                near = audio_io.read_wav(tmp_path / rec.near_end_path)
                labels = TalkLabelSequence(
                    audio_io.read_labels(tmp_path / rec.label_path))
                echo = Waveform(mix.samples - near.samples)
                measured = measure_ser(near, echo, labels)
                assert measured == pytest.approx(rec.ser_db, abs=0.01)
                seen_levels.add(rec.ser_db)
        assert {0.0, 3.5, 7.0} <= seen_levels

        # superposition of the linear path
        rng = np.random.default_rng(6)
        cfg = EchoPathConfig(
            rir=audio_io.RoomImpulseResponse(rng.uniform(-0.5, 0.5, 64)))
        x1, x2 = rng.standard_normal(500), rng.standard_normal(500)
        lhs = apply_echo_path(Waveform(0.6 * x1 - 1.7 * x2), cfg).samples
        rhs = (0.6 * apply_echo_path(Waveform(x1), cfg).samples
               - 1.7 * apply_echo_path(Waveform(x2), cfg).samples)
        assert np.max(np.abs(lhs - rhs)) < 1e-9

        # label generator against constructed ground truth
        frame = 160
        pattern = ([0] * 10, [1] * 10, [3] * 10, [2] * 10)  # per-frame classes
        expected = np.concatenate(pattern)
        s = np.zeros(40 * frame)
        d = np.zeros(40 * frame)
        burst = rng.standard_normal(10 * frame) * 0.3
        s[10 * frame:20 * frame] = burst
        s[20 * frame:30 * frame] = rng.standard_normal(10 * frame) * 0.3
        d[20 * frame:30 * frame] = rng.standard_normal(10 * frame) * 0.3
        d[30 * frame:] = rng.standard_normal(10 * frame) * 0.3
        got = label_frames(Waveform(s), Waveform(d), frame, frame, -40.0)
        np.testing.assert_array_equal(got.labels, expected)


# ---------------------------------------------------------------------------
# 7. round trips
# ---------------------------------------------------------------------------

def test_criterion_7_round_trips(tmp_path):
    with criterion("7 round-trips"):
        rng = np.random.default_rng(7)
        # WAV payload bit-exact through write/read/write
        w = Waveform(np.round(rng.uniform(-1, 1, 5000) * 32768) / 32768)
        audio_io.write_wav(tmp_path / "a.wav", w)
        first = audio_io.read_wav(tmp_path / "a.wav")
        audio_io.write_wav(tmp_path / "b.wav", first)
        assert (tmp_path / "a.wav").read_bytes() == (tmp_path / "b.wav").read_bytes()

        # checkpoint bit-exact
        from aectk.model import ModelConfig, init_params
        params = init_params(ModelConfig(n_basis=16, frame_len=8, hop=4,
                                         bottleneck=4, hidden=4,
                                         attention_window=3), seed=1)
        audio_io.save_checkpoint(tmp_path / "p.aeck", params.arrays(),
                                 meta={"epoch": 3})
        arrays, meta, _ = audio_io.load_checkpoint(tmp_path / "p.aeck")
        assert meta["epoch"] == 3
        for name, t in params.named().items():
            np.testing.assert_array_equal(arrays[name], t.data)


# ---------------------------------------------------------------------------
# 8. mask properties
# ---------------------------------------------------------------------------

def test_criterion_8_mask_properties():
    with criterion("8 resigmoid"):
        from aectk.model import resigmoid

        xs = np.linspace(-6, 6, 2001)
        out = resigmoid(Tensor(xs)).data
        assert np.all(out >= 0)
        assert np.all(out[xs <= 0] == 0)
        at_one = resigmoid(Tensor(np.asarray([1.0]))).data[0]
        assert at_one == pytest.approx(0.7310586, abs=1e-6)
