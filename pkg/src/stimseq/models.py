"""The four temporal classifiers over per-frame feature sequences.

All four map a (T, D) feature sequence to 3-way action log-probabilities:

* lstm      - 3 bidirectional LSTM layers (512 units each direction),
              mean-over-time, Dense(128)+relu, Dense(C)+log-softmax.
* tcn       - one dilated residual block: 1x1 input projection to H_c
              channels, then L layers with dilation doubling per layer
              (1, 2, 4, ...), each `dilated conv -> relu -> 1x1 conv ->
              residual add`; head Dense(256)+relu, Dense(C)+log-softmax.
* mstcn     - S such blocks chained into stages; every stage emits
              per-frame class logits through a 1x1 projection and the next
              stage refines the softmax of those logits.
* mstcn_pp  - same staging, but each layer runs two parallel convolutions
              with dilations 2^l and 2^(L-1-l) (near/far), merged by a 1x1
              convolution, so early layers already see long context.

Convolutions are causal by default, which keeps every TCN variant usable on
a live stream; the bidirectional LSTM is never frame-causal.
"""

from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np

from .errors import ConfigError, DataError
from .tensor import (
    Tensor,
    add,
    assert_finite,
    concat,
    conv1d_dilated,
    dense,
    log_softmax,
    lstm_layer,
    relu,
    softmax,
    time_pool,
)

KINDS = ("lstm", "tcn", "mstcn", "mstcn_pp")


@dataclass
class ModelConfig:
    kind: str
    input_dim: int
    num_classes: int = 3
    kernel_size: int = 5
    levels_per_block: int = 5
    num_stages: int = 5
    hidden_channels: int = 64
    lstm_hidden: int = 512
    lstm_layers: int = 3
    head_hidden: Optional[int] = None
    causal: bool = True
    temporal_pooling: str = "mean"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}, expected one of {KINDS}")
        for name in ("input_dim", "num_classes", "kernel_size", "levels_per_block",
                     "num_stages", "hidden_channels", "lstm_hidden", "lstm_layers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.temporal_pooling not in ("mean", "last"):
            raise ConfigError(f"temporal_pooling must be 'mean' or 'last', got {self.temporal_pooling!r}")
        if self.head_hidden is None:
            self.head_hidden = 128 if self.kind == "lstm" else 256
        elif self.head_hidden < 1:
            raise ConfigError(f"head_hidden must be positive, got {self.head_hidden}")

    @property
    def stage_count(self):
        if self.kind == "lstm":
            return 0
        return 1 if self.kind == "tcn" else self.num_stages

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in cls.__dataclass_fields__.values()}
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Prediction:
    log_probs: np.ndarray
    predicted_label: int
    per_stage_log_probs: Optional[list] = None


def _layer_dilations(config, layer_index):
    near = 2 ** layer_index
    if config.kind == "mstcn_pp":
        far = 2 ** (config.levels_per_block - 1 - layer_index)
        return near, far
    return near, None


def parameter_schema(config):
    """Deterministic (name, shape) list; the same config always produces
    the same parameter set."""
    schema = []
    if config.kind == "lstm":
        h = config.lstm_hidden
        din = config.input_dim
        for j in range(config.lstm_layers):
            for direction in ("fwd", "rev"):
                schema.append((f"lstm{j}/{direction}/w_x", (4 * h, din)))
                schema.append((f"lstm{j}/{direction}/w_h", (4 * h, h)))
                schema.append((f"lstm{j}/{direction}/b", (4 * h,)))
            din = 2 * h
        head_in = 2 * h
    else:
        hc = config.hidden_channels
        k = config.kernel_size
        c = config.num_classes
        feat_in = config.input_dim
        for s in range(config.stage_count):
            pre = f"stage{s}"
            schema.append((f"{pre}/in_proj/weight", (hc, feat_in, 1)))
            schema.append((f"{pre}/in_proj/bias", (hc,)))
            for l in range(config.levels_per_block):
                lp = f"{pre}/layer{l}"
                if config.kind == "mstcn_pp":
                    schema.append((f"{lp}/conv_near/weight", (hc, hc, k)))
                    schema.append((f"{lp}/conv_near/bias", (hc,)))
                    schema.append((f"{lp}/conv_far/weight", (hc, hc, k)))
                    schema.append((f"{lp}/conv_far/bias", (hc,)))
                    schema.append((f"{lp}/merge/weight", (hc, 2 * hc, 1)))
                    schema.append((f"{lp}/merge/bias", (hc,)))
                else:
                    schema.append((f"{lp}/conv/weight", (hc, hc, k)))
                    schema.append((f"{lp}/conv/bias", (hc,)))
                schema.append((f"{lp}/proj/weight", (hc, hc, 1)))
                schema.append((f"{lp}/proj/bias", (hc,)))
            if config.kind != "tcn":
                schema.append((f"{pre}/out_proj/weight", (c, hc, 1)))
                schema.append((f"{pre}/out_proj/bias", (c,)))
            feat_in = c
        head_in = config.hidden_channels
    schema.append(("head/fc1/weight", (config.head_hidden, head_in)))
    schema.append(("head/fc1/bias", (config.head_hidden,)))
    schema.append(("head/fc2/weight", (config.num_classes, config.head_hidden)))
    schema.append(("head/fc2/bias", (config.num_classes,)))
    return schema


def parameter_count(config):
    return sum(int(np.prod(shape)) for _, shape in parameter_schema(config))


def build_model(config, seed, dtype=np.float32):
    """Initialize parameters deterministically from `seed`.

    Fan-in-scaled uniform for convolution/dense/input weights, plain
    1/sqrt(H) uniform for recurrent matrices, zeros for biases.
    """
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_schema(config):
        if len(shape) == 1:
            data = np.zeros(shape)
        else:
            if name.endswith("/w_h"):
                fan_in = shape[1]
            elif len(shape) == 3:
                fan_in = shape[1] * shape[2]
            else:
                fan_in = shape[1]
            bound = 1.0 / np.sqrt(fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(data, requires_grad=True, dtype=dtype, name=name)
    return params


def receptive_field(config):
    """Past frames (current one included) that can influence the final
    frame's output, in closed form."""
    if config.kind == "lstm":
        raise ConfigError("receptive_field is only defined for TCN-family models")
    k = config.kernel_size
    span = 0
    for l in range(config.levels_per_block):
        near, far = _layer_dilations(config, l)
        span += (k - 1) * (near if far is None else max(near, far))
    return 1 + config.stage_count * span


def _residual_layer(x, params, prefix, dilation, causal):
    h = conv1d_dilated(x, params[f"{prefix}/conv/weight"], params[f"{prefix}/conv/bias"],
                       dilation=dilation, causal=causal)
    h = relu(h)
    h = conv1d_dilated(h, params[f"{prefix}/proj/weight"], params[f"{prefix}/proj/bias"],
                       dilation=1, causal=causal)
    return add(x, h)


def dual_dilation_layer(x, params, prefix, layer_index, total_levels, causal=True):
    """Near branch (dilation 2^l) and far branch (dilation 2^(L-1-l)) run in
    parallel, concatenate on channels, 1x1 merge, relu, 1x1 projection,
    residual add."""
    if not 0 <= layer_index < total_levels:
        raise ConfigError(f"layer_index {layer_index} outside [0, {total_levels})")
    near = 2 ** layer_index
    far = 2 ** (total_levels - 1 - layer_index)
    a = conv1d_dilated(x, params[f"{prefix}/conv_near/weight"], params[f"{prefix}/conv_near/bias"],
                       dilation=near, causal=causal)
    b = conv1d_dilated(x, params[f"{prefix}/conv_far/weight"], params[f"{prefix}/conv_far/bias"],
                       dilation=far, causal=causal)
    h = concat([a, b], axis=-1)
    h = conv1d_dilated(h, params[f"{prefix}/merge/weight"], params[f"{prefix}/merge/bias"],
                       dilation=1, causal=causal)
    h = relu(h)
    h = conv1d_dilated(h, params[f"{prefix}/proj/weight"], params[f"{prefix}/proj/bias"],
                       dilation=1, causal=causal)
    return add(x, h)


def _stage_features(x, params, config, stage):
    pre = f"stage{stage}"
    h = conv1d_dilated(x, params[f"{pre}/in_proj/weight"], params[f"{pre}/in_proj/bias"],
                       dilation=1, causal=config.causal)
    for l in range(config.levels_per_block):
        if config.kind == "mstcn_pp":
            h = dual_dilation_layer(h, params, f"{pre}/layer{l}", l,
                                    config.levels_per_block, causal=config.causal)
        else:
            h = _residual_layer(h, params, f"{pre}/layer{l}", 2 ** l, config.causal)
    return h


def forward_features(config, params, x):
    """Per-frame representations before pooling.

    Returns (features, stage_logits): features is (.., T, F) where F is
    2*lstm_hidden or hidden_channels; stage_logits is a list of per-frame
    class logits, one per stage (empty for lstm/tcn).
    """
    if config.kind == "lstm":
        h = x
        for j in range(config.lstm_layers):
            h = lstm_layer(
                h,
                params[f"lstm{j}/fwd/w_x"], params[f"lstm{j}/fwd/w_h"], params[f"lstm{j}/fwd/b"],
                params[f"lstm{j}/rev/w_x"], params[f"lstm{j}/rev/w_h"], params[f"lstm{j}/rev/b"],
            )
        return h, []

    stage_logits = []
    inp = x
    feats = None
    for s in range(config.stage_count):
        feats = _stage_features(inp, params, config, s)
        if config.kind != "tcn":
            logits = conv1d_dilated(
                feats,
                params[f"stage{s}/out_proj/weight"], params[f"stage{s}/out_proj/bias"],
                dilation=1, causal=config.causal,
            )
            stage_logits.append(logits)
            inp = softmax(logits)
    return feats, stage_logits


def forward_batch(config, params, x):
    """Pooled classification of a (B, T, D) or (T, D) input.

    Returns (log_probs, per_stage_log_probs); the second is None unless the
    model is multi-stage.
    """
    feats, stage_logits = forward_features(config, params, x)
    pooled = time_pool(feats, config.temporal_pooling)
    h = relu(dense(pooled, params["head/fc1/weight"], params["head/fc1/bias"]))
    log_probs = log_softmax(dense(h, params["head/fc2/weight"], params["head/fc2/bias"]))
    per_stage = None
    if stage_logits:
        per_stage = [
            log_softmax(time_pool(sl, config.temporal_pooling)) for sl in stage_logits
        ]
    return log_probs, per_stage


def forward_clip(config, params, features):
    """Classify one FeatureSequence; pure function of (config, params, features)."""
    values = features.values
    if values.shape[1] != config.input_dim:
        raise DataError(
            f"feature dimension {values.shape[1]} does not match model input_dim {config.input_dim}"
        )
    dtype = next(iter(params.values())).data.dtype
    x = Tensor(values[None], dtype=dtype)
    log_probs, per_stage = forward_batch(config, params, x)
    assert_finite(log_probs.data, "prediction log-probs")
    lp = log_probs.data[0].copy()
    return Prediction(
        log_probs=lp,
        predicted_label=int(np.argmax(lp)),
        per_stage_log_probs=[p.data[0].copy() for p in per_stage] if per_stage else None,
    )
