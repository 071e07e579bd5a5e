import numpy as np
import pytest

from talkstyle import tensor as T
from talkstyle.config import ConfigError
from talkstyle.gradcheck import grad_check
from talkstyle.losses import loss_stage1
from talkstyle.model import STAGE_TRAINABLE, Backbone, resample_to_fps
from talkstyle.train import OptimizerState, _prepare, adam_step

from helpers import probe, tiny_backbone_config


def model(stage=1, **kw):
    return Backbone(tiny_backbone_config(**kw), seed=3, n_vertices=12 if stage == 2 else None)


def rand(*shape, seed=0):
    return np.random.default_rng(seed).normal(size=shape)


def test_fft_block_shape_and_determinism():
    m = model()
    for n in (1, 2, 7):
        x = T.Tensor(rand(n, 8))
        a = m.fft_block(x, "decoder.block0").data
        b = m.fft_block(x, "decoder.block0").data
        assert a.shape == (n, 8) and a.tobytes() == b.tobytes()


def test_fft_block_gradient():
    m = model()
    worst = grad_check(lambda x: probe(m.fft_block(x, "decoder.block0"), 0), T.Tensor(rand(5, 8)))
    assert worst < 1e-5
    params = [m.params[k] for k in m.params if k.startswith("decoder.block0")]
    worst = grad_check(lambda *ps: probe(m.fft_block(T.Tensor(rand(5, 8)), "decoder.block0"), 1),
                       params, max_coords=6)
    assert worst < 1e-5


def test_encode_phonemes():
    m = model()
    assert m.encode_phonemes([5]).shape == (1, 8)
    a = m.encode_phonemes([3, 9, 12]).data
    b = m.encode_phonemes([12, 9, 3]).data
    assert not np.allclose(a[::-1], b)  # positions matter
    assert a.tobytes() == m.encode_phonemes([3, 9, 12]).data.tobytes()
    with pytest.raises(IndexError):
        m.encode_phonemes([70])


def test_style_vector_range_and_length_error():
    m = model()
    s = m.style_from_input(rand(20, 80)).data
    assert s.shape == (1, 8) and np.all(np.abs(s) < 1)
    with pytest.raises(ValueError):
        m.style_encode([T.Tensor(rand(1, 8))])


def dup(x):
    return np.repeat(x, 2, axis=0)


def test_style_duplication_properties():
    m = model(style_source="features", style_input_dim=6)
    x = rand(10, 6)
    enc = lambda f: m.style_encode([T.Tensor(f)]).data
    # max-pool over duplicated pairs returns each original frame once
    head = lambda v: np.tanh(np.maximum(v @ m.params["style_encoder.fc1.w"].data.T
                                        + m.params["style_encoder.fc1.b"].data, 0)
                             @ m.params["style_encoder.fc2.w"].data.T + m.params["style_encoder.fc2.b"].data)
    np.testing.assert_allclose(enc(dup(x)), head(x.mean(axis=0, keepdims=True)), atol=1e-12)
    np.testing.assert_allclose(enc(dup(dup(x))), enc(dup(x)), atol=1e-12)


def test_zero_features_give_bias_path():
    m = model(style_source="features", style_input_dim=6)
    a = m.style_encode([T.Tensor(np.zeros((4, 6)))]).data
    b = m.style_encode([T.Tensor(np.zeros((30, 6)))]).data
    ref = np.tanh(np.maximum(m.params["style_encoder.fc1.b"].data, 0) @ m.params["style_encoder.fc2.w"].data.T
                  + m.params["style_encoder.fc2.b"].data)
    np.testing.assert_allclose(a, b)
    np.testing.assert_allclose(a.reshape(-1), ref, atol=1e-12)


def test_variance_adapt():
    content = T.Tensor(rand(3, 8))
    d = [2, 1, 3]
    zero = Backbone.variance_adapt(content, d, T.Tensor(np.zeros((1, 8)))).data
    np.testing.assert_array_equal(zero, np.repeat(content.data, d, axis=0))
    s1, s2 = T.Tensor(rand(1, 8, seed=1)), T.Tensor(rand(1, 8, seed=2))
    diff = Backbone.variance_adapt(content, d, s1).data - Backbone.variance_adapt(content, d, s2).data
    np.testing.assert_allclose(diff, np.repeat(s1.data - s2.data, 6, axis=0), atol=1e-12)


def test_stage1_shapes_and_gradient():
    m = model()
    ids, d, mel = [1, 20, 4], [1, 2, 1], rand(4, 80, seed=5)
    out = m.forward_stage1(ids, d, mel)
    assert out.shape == (4, 80)
    target = rand(4, 80, seed=6)
    params = [m.params[k] for k in sorted(m.trainable(1))]
    worst = grad_check(lambda *ps: loss_stage1(m.forward_stage1(ids, d, mel), target), params,
                       max_coords=3, seed=1)
    assert worst < 1e-5


def test_stage2_output_is_linear_in_head():
    m = model(stage=2)
    out = m.forward_stage2([1, 2, 3], [1, 1, 1], rand(6, 80))
    w, b = m.params["head_s2.fc2.w"].data, m.params["head_s2.fc2.b"].data
    assert out.frames.shape == (3, 36)
    np.testing.assert_allclose(out.frames.data, out.hidden.data @ w.T + b, atol=1e-12)
    m.params["head_s2.fc2.w"].data = 2.5 * w
    m.params["head_s2.fc2.b"].data = 2.5 * b
    scaled = m.forward_stage2([1, 2, 3], [1, 1, 1], rand(6, 80)).frames.data
    np.testing.assert_allclose(scaled, 2.5 * out.frames.data, atol=1e-12)


def test_stage2_gradient():
    m = model(stage=2)
    mel = rand(6, 80, seed=2)
    params = [m.params[k] for k in sorted(m.trainable(2))]
    f = lambda *ps: probe(m.forward_stage2([1, 5, 9], [1, 1, 1], mel).frames, 4)
    assert grad_check(f, params, max_coords=3, seed=2) < 1e-5


def test_stage_transition():
    m = model()
    assert "head_s1.w" in m.params
    m.to_stage2(12, mean_pose=np.arange(36.0))
    assert "head_s1.w" not in m.params and m.n_vertices == 12
    np.testing.assert_array_equal(m.params["head_s2.fc2.b"].data, np.arange(36.0))
    assert np.abs(m.params["head_s2.fc2.w"].data).max() <= 0.01


def test_freeze_partition():
    m = model(stage=2)
    trainable, frozen = set(m.trainable()), set(m.frozen())
    assert trainable | frozen == set(m.params) and not trainable & frozen
    assert {Backbone.group_of(k) for k in frozen} == {"phoneme_encoder"}
    assert STAGE_TRAINABLE[2] == ("style_encoder", "decoder", "head_s2")
    assert m.freeze_flags() == {"phoneme_encoder": True, "style_encoder": False, "decoder": False,
                                "head_s2": False}


def test_frozen_params_get_no_update():
    m = model(stage=2)
    trainable = _prepare(m, 2)
    before = {k: v.data.copy() for k, v in m.frozen().items()}
    with T.Tape() as tape:
        loss = T.sum_all(m.forward_stage2([1, 2], [2, 2], rand(6, 80), training=True).frames)
    T.backward(tape, loss)
    for k, v in m.frozen().items():
        assert v.grad is None or not np.any(v.grad)
    adam_step(m.params, {k: p.grad for k, p in trainable.items()}, OptimizerState(), 1e-2)
    for k, v in m.frozen().items():
        assert v.data.tobytes() == before[k].tobytes()


def test_style_does_not_change_timing():
    m = model(stage=2)
    a = m.animate([1, 2, 3, 4], [3, 4, 5, 3], rand(10, 80, seed=1), fps=30)
    b = m.animate([1, 2, 3, 4], [3, 4, 5, 3], rand(40, 80, seed=2) + 3, fps=30)
    assert a.shape == b.shape and not np.allclose(a, b)


def test_dropout_only_in_training():
    m = model()
    x = T.Tensor(rand(6, 8))
    a = m.fft_block(x, "decoder.block0", training=True).data
    b = m.fft_block(x, "decoder.block0", training=True).data
    assert not np.allclose(a, b)


def test_resample_needs_four_frames():
    with pytest.raises(ValueError):
        resample_to_fps(np.zeros((3, 36)), 30)


def test_config_validation():
    with pytest.raises(ConfigError):
        tiny_backbone_config(hidden=9).validate()
    with pytest.raises(ConfigError):
        tiny_backbone_config(style_dim=16).validate()
    with pytest.raises(ConfigError):
        tiny_backbone_config(conv_kernels=(4, 1)).validate()
