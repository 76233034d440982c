import numpy as np
import pytest

from aectk.autodiff import Tensor, finite_diff_check
from aectk.model import (ModelConfig, cancel, classify, encode, forward,
                         init_params, resigmoid)

TOY = ModelConfig(n_basis=16, frame_len=8, hop=4, bottleneck=6, hidden=6,
                  attention_window=3)


@pytest.fixture()
def toy_params():
    return init_params(TOY, seed=0)


def test_encode_shape_and_nonnegativity(toy_params):
    rng = np.random.default_rng(0)
    x = rng.standard_normal(40)
    rep = encode(x, toy_params, TOY)
    assert rep.data.shape == ((40 - 8) // 4 + 1, 16)
    assert np.all(rep.data >= 0)


def test_encode_default_dims_shape():
    cfg = ModelConfig()
    params = init_params(cfg, seed=0)
    x = np.random.default_rng(1).standard_normal(16000) * 0.1
    rep = encode(x, params, cfg)
    assert rep.data.shape == ((16000 - 160) // 80 + 1, 512)


def test_encode_zero_waveform(toy_params):
    rep = encode(np.zeros(40), toy_params, TOY)
    np.testing.assert_array_equal(rep.data, 0.0)


def test_encode_negative_projection_clamped(toy_params):
    # a segment anti-aligned with a basis row lands at exactly 0 in that channel
    u = toy_params["enc_basis"].data
    x = np.zeros(8)
    x[:] = -u[3] / np.abs(u[3]).max()
    rep = encode(x, toy_params, TOY)
    assert rep.data[0, 3] == 0.0


def test_resigmoid_values():
    x = Tensor(np.array([0.0, -3.0, 1.0]))
    out = resigmoid(x).data
    assert out[0] == 0.0
    assert out[1] == 0.0
    assert out[2] == pytest.approx(0.7310585786300049, abs=1e-12)
    assert np.all(resigmoid(Tensor(np.linspace(-5, 5, 101))).data >= 0)


def test_cancel_shapes_and_zero_far(toy_params):
    rng = np.random.default_rng(2)
    x = rng.standard_normal(40) * 0.3
    mix_rep = encode(x, toy_params, TOY)
    far_rep = encode(np.zeros(40), toy_params, TOY)
    near_rep, echo_rep = cancel(mix_rep, far_rep, toy_params, TOY)
    t_hat = mix_rep.data.shape[0]
    assert near_rep.data.shape == (t_hat, TOY.hidden)
    assert echo_rep.data.shape == (t_hat, TOY.hidden)
    assert np.all(np.isfinite(near_rep.data))


def test_mask_bounds_and_decode_length(toy_params):
    rng = np.random.default_rng(3)
    x = rng.standard_normal(43) * 0.3
    far = rng.standard_normal(43) * 0.3
    s_hat, probs = forward(x, far, toy_params, TOY)
    assert s_hat.data.shape == (43,)
    assert probs.data.shape[1] == 4
    np.testing.assert_allclose(probs.data.sum(axis=1), 1.0, atol=1e-12)


def test_mask_nonnegative_and_magnitude_bound(toy_params):
    from aectk.model import estimate_mask
    rng = np.random.default_rng(4)
    x = rng.standard_normal(40) * 0.5
    far = rng.standard_normal(40) * 0.5
    mix_rep = encode(x, toy_params, TOY)
    far_rep = encode(far, toy_params, TOY)
    near_rep, _ = cancel(mix_rep, far_rep, toy_params, TOY)
    mask = estimate_mask(near_rep, toy_params, TOY)
    assert np.all(mask.data >= 0)
    masked = mask.data * mix_rep.data
    assert np.all(np.abs(masked) <= mask.data * np.abs(mix_rep.data) + 1e-15)


def test_mask_all_zero_gives_silence(toy_params):
    rng = np.random.default_rng(5)
    x = rng.standard_normal(40)
    mix_rep = encode(x, toy_params, TOY)
    zero_mask_rep = Tensor(np.zeros_like(mix_rep.data))
    from aectk.autodiff import ops
    frames = ops.matmul(ops.mul(zero_mask_rep, mix_rep), toy_params["dec_basis"])
    wave = ops.overlap_add(frames, TOY.hop, normalize=True)
    np.testing.assert_array_equal(wave.data, 0.0)


def test_identity_mask_reproduces_decoder_path(toy_params):
    rng = np.random.default_rng(6)
    x = rng.standard_normal(40)
    mix_rep = encode(x, toy_params, TOY)
    from aectk.autodiff import ops
    ones = Tensor(np.ones_like(mix_rep.data))
    direct = ops.overlap_add(ops.matmul(ops.mul(ones, mix_rep),
                                        toy_params["dec_basis"]),
                             TOY.hop, normalize=True)
    plain = ops.overlap_add(ops.matmul(mix_rep, toy_params["dec_basis"]),
                            TOY.hop, normalize=True)
    np.testing.assert_array_equal(direct.data, plain.data)


def test_classifier_uniform_at_zero_weights(toy_params):
    rng = np.random.default_rng(7)
    t_hat = 5
    echo_rep = Tensor(rng.standard_normal((t_hat, TOY.hidden)))
    near_rep = Tensor(rng.standard_normal((t_hat, TOY.hidden)))
    toy_params["cls_w"].data[:] = 0.0
    toy_params["cls_b"].data[:] = 0.0
    probs = classify(echo_rep, near_rep, toy_params)
    np.testing.assert_allclose(probs.data, 0.25, atol=1e-15)


def test_forward_deterministic_and_finite(toy_params):
    rng = np.random.default_rng(8)
    x = rng.standard_normal(16000) * 0.2
    far = rng.standard_normal(16000) * 0.2
    cfg = ModelConfig(n_basis=32, frame_len=160, hop=80, bottleneck=8, hidden=8,
                      attention_window=10)
    params = init_params(cfg, seed=3)
    a1, p1 = forward(x, far, params, cfg)
    a2, p2 = forward(x, far, params, cfg)
    np.testing.assert_array_equal(a1.data, a2.data)
    np.testing.assert_array_equal(p1.data, p2.data)
    assert np.all(np.isfinite(a1.data)) and np.all(np.isfinite(p1.data))


def test_forward_causality(toy_params):
    # perturbing inputs after frame t leaves earlier output samples unchanged
    rng = np.random.default_rng(9)
    n = 80
    x = rng.standard_normal(n) * 0.3
    far = rng.standard_normal(n) * 0.3
    base_s, base_p = forward(x, far, toy_params, TOY)
    cut_frame = 10
    perturb_start = cut_frame * TOY.hop + TOY.frame_len
    x2, far2 = x.copy(), far.copy()
    x2[perturb_start:] += 1.0
    far2[perturb_start:] -= 1.0
    new_s, new_p = forward(x2, far2, toy_params, TOY)
    safe_samples = (cut_frame + 1) * TOY.hop
    assert np.max(np.abs(base_s.data[:safe_samples] - new_s.data[:safe_samples])) < 1e-9
    assert np.max(np.abs(base_p.data[:cut_frame + 1] - new_p.data[:cut_frame + 1])) < 1e-9
    assert np.max(np.abs(base_s.data[perturb_start:] - new_s.data[perturb_start:])) > 1e-6


def test_forward_length_mismatch_rejected(toy_params):
    with pytest.raises(ValueError, match="length"):
        forward(np.zeros(40), np.zeros(41), toy_params, TOY)


def test_forward_short_input_rejected(toy_params):
    with pytest.raises(ValueError, match="shorter"):
        forward(np.zeros(4), np.zeros(4), toy_params, TOY)


def test_forward_non_aligned_length_padded_and_trimmed(toy_params):
    rng = np.random.default_rng(10)
    for n in (41, 42, 47):
        x = rng.standard_normal(n) * 0.1
        s_hat, _ = forward(x, x, toy_params, TOY)
        assert s_hat.data.shape == (n,)


def test_prelu_position_switch():
    rng = np.random.default_rng(11)
    x = rng.standard_normal(60) * 0.3
    far = rng.standard_normal(60) * 0.3
    cfg_a = TOY
    cfg_b = ModelConfig(n_basis=16, frame_len=8, hop=4, bottleneck=6, hidden=6,
                        attention_window=3, mask_prelu_position="pre_mask")
    pa = init_params(cfg_a, seed=1)
    pb = init_params(cfg_b, seed=1)
    sa, _ = forward(x, far, pa, cfg_a)
    sb, _ = forward(x, far, pb, cfg_b)
    assert sa.data.shape == sb.data.shape
    assert np.max(np.abs(sa.data - sb.data)) > 1e-9  # genuinely different wiring


def test_gradients_flow_through_attention(toy_params):
    # scalar of near_rep differentiates w.r.t. the parameters feeding attention
    rng = np.random.default_rng(12)
    x = rng.standard_normal(40) * 0.4
    far = rng.standard_normal(40) * 0.4

    tensors = [toy_params["lstm_far_w_in"], toy_params["lstm_mix_w_rec"]]
    probe = Tensor(rng.standard_normal((9, TOY.hidden)))

    def f():
        from aectk.autodiff import ops
        mix_rep = encode(x, toy_params, TOY)
        far_rep = encode(far, toy_params, TOY)
        near_rep, _ = cancel(mix_rep, far_rep, toy_params, TOY)
        return ops.mean_all(ops.mul(near_rep, probe))

    err = finite_diff_check(f, tensors, eps=1e-5)
    assert err < 1e-4


def test_checkpoint_save_load_params_roundtrip(tmp_path, toy_params):
    from aectk import audio_io
    path = tmp_path / "m.aeck"
    audio_io.save_checkpoint(path, toy_params.arrays(),
                             meta={"model_config": TOY.to_meta()})
    arrays, meta, _ = audio_io.load_checkpoint(path)
    fresh = init_params(ModelConfig.from_meta(meta["model_config"]), seed=99)
    fresh.load_arrays(arrays)
    for name, t in toy_params.named().items():
        np.testing.assert_array_equal(fresh[name].data, t.data)
