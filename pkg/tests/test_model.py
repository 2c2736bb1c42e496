import numpy as np
import pytest

from fsblstm import autodiff as ad
from fsblstm.checks import tiny_config
from fsblstm.config import ModelConfig, preset
from fsblstm.model import (Enhancer, StreamState, enhance_offline, enhance_stream, forward_offline,
                           forward_stepwise, full_band_block, input_embed, mixture_ri, output_project, run,
                           step_online, sub_band_block)
from fsblstm.weights import init_random, parameter_shapes


@pytest.fixture(scope="module")
def tiny():
    cfg = tiny_config()
    return cfg, init_random(cfg, seed=5)


def random_ri(cfg, frames, seed=0, dtype=np.float32):
    return np.random.default_rng(seed).standard_normal((2 * cfg.num_mics, frames, cfg.n_bins)).astype(dtype)


def stream_all(ri, weights, dtype=np.float32):
    state = StreamState.initial(weights.config, dtype)
    return np.stack([step_online(ri[:, t], state, weights) for t in range(ri.shape[1])], axis=1)


def test_default_shapes():
    cfg = ModelConfig()
    assert (cfg.fb_padded, cfg.fb_positions, cfg.frame_embed_dim) == (132, 32, 256)
    assert (cfg.sb_padded, cfg.num_subbands) == (130, 26)
    w = init_random(cfg)
    ri = random_ri(cfg, 3)
    assert input_embed(ri, w).shape == (32, 3, 129)
    assert forward_offline(ri, w).shape == (2, 3, 129)


def test_block_order_and_variants():
    assert ModelConfig(num_modules=2).blocks() == [("block0.fb", "fb"), ("block0.sb", "sb"),
                                                    ("block1.fb", "fb"), ("block1.sb", "sb")]
    assert [k for _, k in preset("fb6-6ch").blocks()] == ["fb"] * 6
    assert len(preset("fb9-6ch").blocks()) == 9


def test_input_embed_wrong_channels(tiny):
    cfg, w = tiny
    with pytest.raises(ValueError):
        input_embed(np.zeros((3, 2, cfg.n_bins)), w)
    with pytest.raises(ValueError):
        forward_offline(np.zeros((2 * cfg.num_mics, 2, cfg.n_bins - 1)), w)


def test_zero_input_gives_bias_only_embedding_and_projection(tiny):
    cfg, w = tiny
    emb = input_embed(np.zeros((2 * cfg.num_mics, 2, cfg.n_bins)), w)
    np.testing.assert_allclose(emb, np.broadcast_to(w["input_conv.b"][:, None, None], emb.shape))
    out = output_project(np.zeros((cfg.embed_dim, 2, cfg.n_bins), np.float32), w)
    np.testing.assert_allclose(out, np.broadcast_to(w["output_deconv.b"][:, None, None], out.shape))


@pytest.mark.parametrize("block,prefix", [(full_band_block, "block0.fb"), (sub_band_block, "block0.sb")])
def test_zeroed_block_is_identity(tiny, block, prefix):
    cfg, w = tiny
    zeroed = w.with_tensors({k: np.zeros_like(v) for k, v in w.items() if k.startswith(prefix)})
    x = np.random.default_rng(1).standard_normal((cfg.embed_dim, 4, cfg.n_bins)).astype(np.float32)
    y, _ = block(x, zeroed, prefix, cfg)
    np.testing.assert_array_equal(y, x)


def test_all_zero_weights_give_constant_finite_output(tiny):
    cfg, w = tiny
    zero = w.with_tensors({k: np.zeros_like(v) for k, v in w.items()})
    zero = zero.with_tensors({"output_deconv.b": np.array([0.3, -0.2], np.float32)})
    out = forward_offline(random_ri(cfg, 5), zero)
    assert np.all(np.isfinite(out))
    np.testing.assert_array_equal(out[0], np.float32(0.3))
    np.testing.assert_array_equal(out[1], np.float32(-0.2))


@pytest.mark.parametrize("cfg", [tiny_config(), tiny_config().replace(variant="fb", fb_layers=2),
                                 tiny_config(num_mics=1).replace(num_modules=2)], ids=["fsb", "fb2", "fsb-b2"])
def test_streaming_matches_offline_float32(cfg):
    w = init_random(cfg, seed=2)
    ri = random_ri(cfg, 40, seed=3)
    assert np.max(np.abs(stream_all(ri, w) - forward_offline(ri, w))) <= 1e-5


def test_streaming_matches_offline_float64_default_config():
    cfg = ModelConfig()
    w = init_random(cfg, seed=4).astype(np.float64)
    ri = random_ri(cfg, 25, seed=4, dtype=np.float64)
    assert np.max(np.abs(stream_all(ri, w, np.float64) - forward_offline(ri, w))) <= 1e-10


def test_stepwise_run_matches_offline(tiny):
    cfg, w = tiny
    w64 = w.astype(np.float64)
    ri = random_ri(cfg, 12, dtype=np.float64)
    np.testing.assert_allclose(forward_stepwise(ri, w64, cfg), forward_offline(ri, w64), atol=1e-10)


def test_chunked_run_resumes_state(tiny):
    cfg, w = tiny
    ri = random_ri(cfg, 10)
    a, st = run(ri[:, :4], w, cfg)
    b, _ = run(ri[:, 4:], w, cfg, st)
    np.testing.assert_allclose(np.concatenate([a, b], axis=1), forward_offline(ri, w), atol=1e-5)


def test_frame_causality(tiny):
    cfg, w = tiny
    ri = random_ri(cfg, 10)
    base = forward_offline(ri, w)
    ri2 = ri.copy()
    ri2[:, 6] += 1.0
    out = forward_offline(ri2, w)
    np.testing.assert_array_equal(out[:, :6], base[:, :6])
    assert np.abs(out[:, 6:] - base[:, 6:]).max() > 0


def test_subband_lstm_never_mixes_subbands(tiny):
    """With the full-band block removed, a perturbation stays inside its band's receptive field."""
    cfg, w = tiny
    zeroed = w.with_tensors({k: np.zeros_like(v) for k, v in w.items() if k.startswith("block0.fb")})
    zeroed = zeroed.with_tensors({"block0.sb.norm1.g": np.ones(cfg.sb_channels, np.float32) * 1e-3})
    x = np.random.default_rng(2).standard_normal((cfg.embed_dim, 6, cfg.n_bins)).astype(np.float64)
    w64 = zeroed.astype(np.float64)
    # cGLN pools statistics over all bands, so hold them fixed by testing the LSTM path directly:
    base, _ = sub_band_block(x, w64, "block0.sb", cfg)
    xp = x.copy()
    xp[:, :, 52] += 1.0                                  # band 10 covers bins 50..54
    pert, _ = sub_band_block(xp, w64, "block0.sb", cfg)
    changed = np.nonzero(np.abs(pert - base).max(axis=(0, 1)) > 0)[0]
    assert changed.size > 0
    # only the norm statistics couple bands; with a tiny gain the spill-over is tiny
    far = np.abs(pert - base).max(axis=(0, 1))
    inside = far[50:55].max()
    outside = np.delete(far, np.arange(50, 55)).max()
    assert inside > 100 * outside


def test_subband_lstm_core_is_band_local(rng):
    """The shared-weight LSTM treats each band as a separate sequence."""
    from fsblstm import primitives as P
    x = rng.standard_normal((26, 5, 3))
    wi, wh = rng.standard_normal((8, 3)), rng.standard_normal((8, 2))
    bi, bh = rng.standard_normal(8), rng.standard_normal(8)
    y, _, _ = P.lstm(x, wi, wh, bi, bh)
    xp = x.copy()
    xp[7] += 1.0
    yp, _, _ = P.lstm(xp, wi, wh, bi, bh)
    diff = np.abs(yp - y).max(axis=(1, 2))
    assert diff[7] > 0 and np.all(np.delete(diff, 7) == 0)


def test_fullband_block_couples_all_frequencies(tiny):
    cfg, w = tiny
    x = np.random.default_rng(3).standard_normal((cfg.embed_dim, 3, cfg.n_bins))
    w64 = w.astype(np.float64)
    base, _ = full_band_block(x, w64, "block0.fb", cfg)
    xp = x.copy()
    xp[:, 0, 3] += 1.0
    pert, _ = full_band_block(xp, w64, "block0.fb", cfg)
    assert np.all(np.abs(pert - base)[:, 0, 100:].max(axis=0) > 0)


def test_interleaved_streams_are_isolated(tiny):
    cfg, w = tiny
    a, b = random_ri(cfg, 15, seed=10), random_ri(cfg, 15, seed=11)
    sa, sb = StreamState.initial(cfg), StreamState.initial(cfg)
    ya, yb = [], []
    for t in range(15):
        ya.append(step_online(a[:, t], sa, w))
        yb.append(step_online(b[:, t], sb, w))
    np.testing.assert_array_equal(np.stack(ya, 1), stream_all(a, w))
    np.testing.assert_array_equal(np.stack(yb, 1), stream_all(b, w))


def test_state_before_any_frame_is_initial(tiny):
    cfg, _ = tiny
    st = StreamState.initial(cfg)
    assert st.frames == 0
    for blk in st.blocks.values():
        assert not blk["h"].any() and not blk["c"].any()
        assert blk["norm1"][1] == 0


def test_state_size_matches_default_accounting():
    st = StreamState.initial(ModelConfig())
    assert st.lstm_nbytes() == 46_080
    assert st.norm_values() == 27                     # 9 normalizations x (sum, sum of squares, count)
    assert st.lstm_nbytes() + 4 * st.norm_values() == 46_188


def test_step_online_input_checks(tiny):
    cfg, w = tiny
    st = StreamState.initial(cfg)
    with pytest.raises(ValueError):
        step_online(np.zeros((3, cfg.n_bins)), st, w)
    st.initialized = False
    with pytest.raises(ValueError, match="initialized"):
        step_online(np.zeros((2 * cfg.num_mics, cfg.n_bins)), st, w)


def test_enhance_stream_matches_offline_and_is_deterministic(tiny):
    cfg, w = tiny
    x = (0.3 * np.random.default_rng(0).standard_normal((cfg.num_mics, 4000))).astype(np.float32)
    y = enhance_stream(x, w)
    assert y.shape == (4000,)
    np.testing.assert_allclose(y, enhance_offline(x, w), atol=1e-5)
    np.testing.assert_array_equal(y, enhance_stream(x, w))


def test_enhance_stream_zero_input_gives_near_zero(tiny):
    cfg, w = tiny
    w0 = w.with_tensors({"output_deconv.b": np.zeros(2, np.float32)})
    y = enhance_stream(np.zeros((cfg.num_mics, 2000), np.float32), w0)
    # only bias-driven features leak through; with zero output bias and zero input they stay small
    assert np.all(np.isfinite(y)) and np.abs(y).max() < 1.0


def test_enhance_stream_end_to_end_causality(tiny):
    cfg, w = tiny
    x = (0.3 * np.random.default_rng(1).standard_normal((cfg.num_mics, 3000))).astype(np.float32)
    base = enhance_stream(x, w)
    for n in (700, 1601, 2990):
        xp = x.copy()
        xp[1, n] += 0.5
        out = enhance_stream(xp, w)
        np.testing.assert_array_equal(out[:n - cfg.stft.output_window + 1], base[:n - cfg.stft.output_window + 1])


@pytest.mark.parametrize("chunk", [1, 7, 32, 100, 513])
def test_enhancer_output_independent_of_chunking(tiny, chunk):
    cfg, w = tiny
    x = (0.3 * np.random.default_rng(2).standard_normal((cfg.num_mics, 2500))).astype(np.float32)
    enh = Enhancer(w)
    parts = [enh.push(x[:, i:i + chunk]) for i in range(0, x.shape[1], chunk)] + [enh.flush()]
    np.testing.assert_array_equal(np.concatenate(parts)[:2500], enhance_stream(x, w))


def test_enhance_rejects_channel_mismatch(tiny):
    cfg, w = tiny
    with pytest.raises(ValueError):
        enhance_stream(np.zeros((cfg.num_mics + 1, 100)), w)


def test_mixture_ri_interleaves_mics(rng):
    cfg = tiny_config(num_mics=2)
    x = rng.standard_normal((2, 500))
    ri = mixture_ri(x, cfg)
    from fsblstm.stft import offline_stft
    spec1 = offline_stft(x[1], cfg.stft)
    np.testing.assert_allclose(ri[2], spec1.real)
    np.testing.assert_allclose(ri[3], spec1.imag)


def test_differentiable_model_params_receive_gradients(tiny):
    cfg, w = tiny
    tape = ad.Tape()
    params = {k: tape.var(v.astype(np.float64)) for k, v in w.items()}
    out, _ = run(random_ri(cfg, 3, dtype=np.float64), params, cfg)
    tape.backward(ad.sum(ad.square(out)))
    assert set(parameter_shapes(cfg)) == set(params)
    assert all(p.grad is not None and p.grad.shape == p.value.shape for p in params.values())
