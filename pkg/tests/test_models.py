"""Architecture wiring: schemas, receptive fields (closed form vs impulse
oracle), causality, stage refinement, and head behavior."""

import numpy as np
import pytest

from stimseq.data import FeatureSequence
from stimseq.errors import ConfigError, DataError
from stimseq.models import (
    ModelConfig,
    build_model,
    dual_dilation_layer,
    forward_batch,
    forward_clip,
    forward_features,
    parameter_count,
    parameter_schema,
    receptive_field,
)
from stimseq.tensor import Tensor, concat, conv1d_dilated, relu, add


def small_config(kind, **kw):
    base = dict(kind=kind, input_dim=4, hidden_channels=6, lstm_hidden=5,
                lstm_layers=2, kernel_size=3, levels_per_block=3, num_stages=2,
                head_hidden=7)
    base.update(kw)
    return ModelConfig(**base)


def measured_receptive_field(config, seed=0):
    """Impulse-propagation oracle: support width of the output difference
    caused by poking frame 0."""
    params = build_model(config, seed=seed, dtype=np.float64)
    t_len = receptive_field(config) + 20
    zeros = np.zeros((t_len, config.input_dim))
    base, _ = forward_features(config, params, Tensor(zeros, dtype=np.float64))
    poked = zeros.copy()
    poked[0, :] = 1.0
    probe, _ = forward_features(config, params, Tensor(poked, dtype=np.float64))
    per_frame = np.abs(probe.data - base.data).max(axis=1)
    support = np.flatnonzero(per_frame > 0)
    assert support.size and support[0] == 0
    return int(support[-1]) + 1


# ----------------------------------------------------------------- config

def test_config_defaults_follow_kind():
    lstm = ModelConfig(kind="lstm", input_dim=10)
    assert (lstm.lstm_hidden, lstm.lstm_layers, lstm.head_hidden) == (512, 3, 128)
    tcn = ModelConfig(kind="tcn", input_dim=10)
    assert (tcn.kernel_size, tcn.levels_per_block, tcn.head_hidden) == (5, 5, 256)
    mstcn = ModelConfig(kind="mstcn", input_dim=10)
    assert (mstcn.num_stages, mstcn.stage_count) == (5, 5)
    assert ModelConfig(kind="tcn", input_dim=10).stage_count == 1


def test_config_rejects_bad_values():
    with pytest.raises(ConfigError):
        ModelConfig(kind="gru", input_dim=4)
    with pytest.raises(ConfigError):
        ModelConfig(kind="tcn", input_dim=0)
    with pytest.raises(ConfigError):
        ModelConfig(kind="tcn", input_dim=4, temporal_pooling="max")
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"kind": "tcn", "input_dim": 4, "bogus": 1})


def test_tcn_default_schema_names():
    names = [n for n, _ in parameter_schema(ModelConfig(kind="tcn", input_dim=64))]
    expected = ["stage0/in_proj/weight", "stage0/in_proj/bias"]
    for l in range(5):
        expected += [
            f"stage0/layer{l}/conv/weight", f"stage0/layer{l}/conv/bias",
            f"stage0/layer{l}/proj/weight", f"stage0/layer{l}/proj/bias",
        ]
    expected += ["head/fc1/weight", "head/fc1/bias", "head/fc2/weight", "head/fc2/bias"]
    assert names == expected


def test_mstcn_default_has_five_stages_of_five_layers():
    names = [n for n, _ in parameter_schema(ModelConfig(kind="mstcn", input_dim=64))]
    stages = {n.split("/")[0] for n in names if n.startswith("stage")}
    assert stages == {f"stage{s}" for s in range(5)}
    for s in range(5):
        layers = {n.split("/")[1] for n in names if n.startswith(f"stage{s}/layer")}
        assert layers == {f"layer{l}" for l in range(5)}
        assert f"stage{s}/out_proj/weight" in names


def test_schema_shapes_stage_chaining():
    schema = dict(parameter_schema(ModelConfig(kind="mstcn", input_dim=32)))
    assert schema["stage0/in_proj/weight"] == (64, 32, 1)
    # later stages consume the 3-class softmax of the previous stage
    assert schema["stage1/in_proj/weight"] == (64, 3, 1)
    assert schema["stage4/out_proj/weight"] == (3, 64, 1)


def test_build_model_deterministic():
    cfg = small_config("mstcn_pp")
    a = build_model(cfg, seed=9)
    b = build_model(cfg, seed=9)
    c = build_model(cfg, seed=10)
    assert list(a) == list(b)
    assert all(np.array_equal(a[k].data, b[k].data) for k in a)
    assert any(not np.array_equal(a[k].data, c[k].data) for k in a)


def test_biases_zero_weights_bounded():
    cfg = small_config("tcn")
    params = build_model(cfg, seed=0)
    for name, p in params.items():
        if name.endswith("bias") or name.endswith("/b"):
            assert np.all(p.data == 0)
        else:
            assert np.abs(p.data).max() <= 1.0


# ------------------------------------------------------- receptive field

def test_receptive_field_closed_form_defaults():
    assert receptive_field(ModelConfig(kind="tcn", input_dim=8)) == 125
    assert receptive_field(ModelConfig(kind="mstcn", input_dim=8)) == 621
    assert receptive_field(ModelConfig(kind="tcn", input_dim=8, kernel_size=1)) == 1
    assert receptive_field(
        ModelConfig(kind="mstcn", input_dim=8, kernel_size=1, num_stages=7)) == 1
    # dual-dilation analog: per layer the wider branch dominates
    assert receptive_field(ModelConfig(kind="mstcn_pp", input_dim=8)) == \
        1 + 5 * 4 * (16 + 8 + 4 + 8 + 16)
    with pytest.raises(ConfigError):
        receptive_field(ModelConfig(kind="lstm", input_dim=8))


@pytest.mark.parametrize("kind", ["tcn", "mstcn", "mstcn_pp"])
def test_receptive_field_impulse_oracle_small(kind):
    cfg = small_config(kind)
    assert measured_receptive_field(cfg) == receptive_field(cfg)


def test_receptive_field_impulse_oracle_default_tcn():
    cfg = ModelConfig(kind="tcn", input_dim=8)
    assert receptive_field(cfg) == 125
    assert measured_receptive_field(cfg) == 125


def test_receptive_field_gradient_oracle_deep_defaults():
    # the forward impulse difference under-measures 25-layer stacks (the
    # far-edge delta is absorbed below float resolution); the input-gradient
    # support is exact at any depth
    from conftest import gradient_receptive_field

    for kind, expected in (("mstcn", 621), ("mstcn_pp", 1041)):
        cfg = ModelConfig(kind=kind, input_dim=8)
        assert receptive_field(cfg) == expected
        assert gradient_receptive_field(cfg) == expected


# ------------------------------------------------------------ dual layer

def test_dual_layer_center_is_symmetric():
    # odd L, middle layer: both branches share dilation 2^((L-1)/2)
    cfg = ModelConfig(kind="mstcn_pp", input_dim=6, hidden_channels=6,
                      levels_per_block=3, num_stages=1)
    params = build_model(cfg, seed=4)
    pre = "stage0/layer1"
    # force identical branch weights, then the concat halves are duplicates
    params[f"{pre}/conv_far/weight"].data[:] = params[f"{pre}/conv_near/weight"].data
    params[f"{pre}/conv_far/bias"].data[:] = params[f"{pre}/conv_near/bias"].data
    rng = np.random.default_rng(0)
    x = Tensor(rng.standard_normal((10, 6)).astype(np.float32))
    y = dual_dilation_layer(x, params, pre, 1, 3).data

    branch = conv1d_dilated(x, params[f"{pre}/conv_near/weight"],
                            params[f"{pre}/conv_near/bias"], dilation=2)
    merged = conv1d_dilated(concat([branch, branch], axis=-1),
                            params[f"{pre}/merge/weight"], params[f"{pre}/merge/bias"])
    out = conv1d_dilated(relu(merged), params[f"{pre}/proj/weight"],
                         params[f"{pre}/proj/bias"])
    np.testing.assert_array_equal(y, add(x, out).data)


def test_dual_layer_zero_projection_is_identity():
    cfg = ModelConfig(kind="mstcn_pp", input_dim=6, hidden_channels=6,
                      levels_per_block=4, num_stages=1)
    params = build_model(cfg, seed=4)
    pre = "stage0/layer0"
    params[f"{pre}/proj/weight"].data[:] = 0
    params[f"{pre}/proj/bias"].data[:] = 0
    rng = np.random.default_rng(1)
    x = Tensor(rng.standard_normal((8, 6)).astype(np.float32))
    y = dual_dilation_layer(x, params, pre, 0, 4)
    np.testing.assert_array_equal(y.data, x.data)


def test_dual_layer_impulse_matches_wider_branch():
    levels = 4
    cfg = ModelConfig(kind="mstcn_pp", input_dim=6, hidden_channels=6,
                      kernel_size=3, levels_per_block=levels, num_stages=1)
    params = build_model(cfg, seed=6, dtype=np.float64)
    for l in (0, levels - 1):
        pre = f"stage0/layer{l}"
        wider = max(2 ** l, 2 ** (levels - 1 - l))
        t_len = (cfg.kernel_size - 1) * wider + 10
        zeros = np.zeros((t_len, 6))
        poked = zeros.copy()
        poked[0, :] = 1.0
        base = dual_dilation_layer(Tensor(zeros, dtype=np.float64), params, pre, l, levels).data
        probe = dual_dilation_layer(Tensor(poked, dtype=np.float64), params, pre, l, levels).data
        support = np.flatnonzero(np.abs(probe - base).max(axis=1) > 0)
        assert support[-1] + 1 == 1 + (cfg.kernel_size - 1) * wider


# -------------------------------------------------------------- forward

def test_zeroed_head_gives_uniform_log_probs():
    for kind in ("tcn", "mstcn", "lstm", "mstcn_pp"):
        cfg = small_config(kind)
        params = build_model(cfg, seed=2)
        params["head/fc2/weight"].data[:] = 0
        params["head/fc2/bias"].data[:] = 0
        seq = FeatureSequence(np.random.default_rng(0).standard_normal((9, 4)).astype(np.float32))
        pred = forward_clip(cfg, params, seq)
        np.testing.assert_allclose(pred.log_probs, np.log(1 / 3), atol=1e-6)


def test_forward_clip_shapes_and_stage_outputs():
    cfg = small_config("mstcn")
    params = build_model(cfg, seed=1)
    rng = np.random.default_rng(3)
    seq = FeatureSequence(rng.standard_normal((10, 4)).astype(np.float32))
    pred = forward_clip(cfg, params, seq)
    assert pred.log_probs.shape == (3,)
    assert len(pred.per_stage_log_probs) == cfg.num_stages
    assert abs(np.exp(pred.log_probs).sum() - 1) < 1e-5
    for stage_lp in pred.per_stage_log_probs:
        assert abs(np.exp(stage_lp).sum() - 1) < 1e-5
    assert pred.predicted_label == int(np.argmax(pred.log_probs))

    doubled = FeatureSequence(np.concatenate([seq.values, seq.values]))
    pred2 = forward_clip(cfg, params, doubled)
    assert pred2.log_probs.shape == (3,)  # shape is T-invariant; the label may move

    plain = forward_clip(small_config("tcn"), build_model(small_config("tcn"), 1), seq)
    assert plain.per_stage_log_probs is None


def test_forward_clip_dimension_mismatch():
    cfg = small_config("tcn")
    params = build_model(cfg, seed=0)
    seq = FeatureSequence(np.zeros((5, 3), dtype=np.float32) + 1.0)
    with pytest.raises(DataError):
        forward_clip(cfg, params, seq)


def test_forward_clip_pure_and_deterministic():
    cfg = small_config("mstcn_pp")
    params = build_model(cfg, seed=5)
    before = {k: p.data.copy() for k, p in params.items()}
    seq = FeatureSequence(np.random.default_rng(4).standard_normal((12, 4)).astype(np.float32))
    p1 = forward_clip(cfg, params, seq)
    p2 = forward_clip(cfg, params, seq)
    assert np.array_equal(p1.log_probs, p2.log_probs)
    for k in params:
        assert np.array_equal(params[k].data, before[k])


def test_batched_forward_matches_single_for_lstm():
    cfg = small_config("lstm")
    params = build_model(cfg, seed=8)
    rng = np.random.default_rng(5)
    clips = rng.standard_normal((3, 7, 4)).astype(np.float32)
    batched, _ = forward_batch(cfg, params, Tensor(clips))
    for i in range(3):
        single, _ = forward_batch(cfg, params, Tensor(clips[i]))
        np.testing.assert_allclose(batched.data[i], single.data, atol=1e-5)


# ------------------------------------------------------------- causality

@pytest.mark.parametrize("kind", ["tcn", "mstcn", "mstcn_pp"])
def test_appending_frames_preserves_earlier_activations(kind):
    cfg = small_config(kind)
    params = build_model(cfg, seed=3)
    rng = np.random.default_rng(6)
    x = rng.standard_normal((30, 4)).astype(np.float32)
    full_feats, full_logits = forward_features(cfg, params, Tensor(x))
    for t_len in (12, 21):
        feats, logits = forward_features(cfg, params, Tensor(x[:t_len].copy()))
        assert np.array_equal(feats.data, full_feats.data[:t_len])
        for a, b in zip(logits, full_logits):
            assert np.array_equal(a.data, b.data[:t_len])


@pytest.mark.parametrize("kind", ["tcn", "mstcn", "mstcn_pp"])
def test_prefix_unchanged_by_later_perturbation(kind):
    cfg = small_config(kind)
    params = build_model(cfg, seed=3)
    rng = np.random.default_rng(7)
    x = rng.standard_normal((24, 4)).astype(np.float32)
    base, base_logits = forward_features(cfg, params, Tensor(x))
    for cut in (5, 13, 23):
        poked = x.copy()
        poked[cut:] += rng.standard_normal((24 - cut, 4)).astype(np.float32)
        feats, logits = forward_features(cfg, params, Tensor(poked))
        assert np.array_equal(feats.data[:cut], base.data[:cut])
        for a, b in zip(logits, base_logits):
            assert np.array_equal(a.data[:cut], b.data[:cut])


def test_acausal_config_sees_the_future():
    cfg = small_config("tcn", causal=False)
    params = build_model(cfg, seed=3)
    rng = np.random.default_rng(8)
    x = rng.standard_normal((24, 4)).astype(np.float32)
    base, _ = forward_features(cfg, params, Tensor(x))
    poked = x.copy()
    poked[20:] += 1.0
    feats, _ = forward_features(cfg, params, Tensor(poked))
    assert not np.array_equal(feats.data[:20], base.data[:20])


# ------------------------------------------------------ stage refinement

def test_every_stage_feeds_the_final_prediction():
    cfg = small_config("mstcn", num_stages=3)
    rng = np.random.default_rng(9)
    seq = FeatureSequence(rng.standard_normal((10, 4)).astype(np.float32))
    for s in range(3):
        params = build_model(cfg, seed=11)
        base = forward_clip(cfg, params, seq).log_probs
        # bias shift travels the residual path, so relu gating cannot hide it
        params[f"stage{s}/in_proj/bias"].data[:] += 0.5
        moved = forward_clip(cfg, params, seq).log_probs
        assert not np.array_equal(base, moved), f"stage {s} disconnected"


def test_parameter_count_ordering():
    d = 64
    lstm = parameter_count(ModelConfig(kind="lstm", input_dim=d))
    mstcn = parameter_count(ModelConfig(kind="mstcn", input_dim=d))
    tcn = parameter_count(ModelConfig(kind="tcn", input_dim=d))
    assert lstm > mstcn > tcn
