"""Minibatch training with Adam and checkpoint serialization.

Checkpoint container: 8-byte magic "SSCKPT1\\n", uint32-LE header length,
JSON header (format version, model config, parameter name/shape table,
writer id), then every parameter as float32-LE in header order. The writer
id is the only metadata, so identical (config, params) produce identical
bytes.
"""

import json
import struct
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import __version__
from .data import _atomic_write_bytes, load_dataset
from .errors import CheckpointError, ConfigError, TrainingError
from .models import ModelConfig, build_model, forward_batch, parameter_schema
from .optim import adam_init, adam_step
from .tensor import Tensor, add, average, cross_entropy, scale

_CKPT_MAGIC = b"SSCKPT1\n"
_CKPT_VERSION = 1


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 16
    learning_rate: float = 1e-3
    seed: int = 0
    stage_supervision: bool = True
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate < 0:
            raise ConfigError(
                f"epochs, batch_size must be >= 1 and learning_rate >= 0, got "
                f"{self.epochs}, {self.batch_size}, {self.learning_rate}"
            )
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in cls.__dataclass_fields__.values()}
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_weighted_f1: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def _batch_loss(model_config, params, dataset, indices, stage_supervision):
    """Loss over one minibatch; clips are grouped by frame count so each
    group runs as one batched forward."""
    groups = {}
    for i in indices:
        groups.setdefault(dataset[i][0].n_frames, []).append(i)
    total = None
    n = len(indices)
    for idxs in groups.values():
        x = Tensor(np.stack([dataset[i][0].values for i in idxs]))
        labels = np.array([dataset[i][1] for i in idxs])
        log_probs, per_stage = forward_batch(model_config, params, x)
        term = cross_entropy(log_probs, labels)
        if stage_supervision and per_stage:
            term = add(term, average([cross_entropy(p, labels) for p in per_stage]))
        term = scale(term, len(idxs) / n)
        total = term if total is None else add(total, term)
    return total


def train(model_config, train_config, train_records, val_records=None, root="."):
    """Optimize a fresh model on the manifest records; returns
    (params, TrainHistory). Deterministic in train_config.seed."""
    if not train_records:
        raise ConfigError("training manifest is empty")
    dataset = load_dataset(train_records, root)
    for (seq, _), rec in zip(dataset, train_records):
        if seq.dim != model_config.input_dim:
            raise ConfigError(
                f"clip {rec.clip_id} has dim {seq.dim}, model expects {model_config.input_dim}"
            )
    val_dataset = load_dataset(val_records, root) if val_records else None

    params = build_model(model_config, train_config.seed)
    state = adam_init(params, train_config.learning_rate)
    history = TrainHistory()
    n = len(dataset)
    bs = train_config.batch_size
    supervise_stages = train_config.stage_supervision and model_config.kind in ("mstcn", "mstcn_pp")

    for epoch in range(train_config.epochs):
        started = time.perf_counter()
        if train_config.shuffle:
            order = np.random.default_rng([train_config.seed, epoch]).permutation(n)
        else:
            order = np.arange(n)
        loss_sum = 0.0
        for b0 in range(0, n, bs):
            batch = order[b0:b0 + bs]
            for p in params.values():
                p.zero_grad()
            loss = _batch_loss(model_config, params, dataset, batch, supervise_stages)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {b0 // bs}"
                )
            loss.backward()
            adam_step(params, state)
            loss_sum += value * len(batch)
        history.train_loss.append(loss_sum / n)
        if val_dataset is not None:
            from .evaluation import weighted_f1
            from .models import forward_clip

            true = [label for _, label in val_dataset]
            pred = [forward_clip(model_config, params, seq).predicted_label
                    for seq, _ in val_dataset]
            history.val_weighted_f1.append(
                weighted_f1(true, pred, model_config.num_classes).weighted_f1
            )
        history.epoch_seconds.append(time.perf_counter() - started)
    return params, history


def save_checkpoint(path, model_config, params):
    table = [{"name": name, "shape": list(p.shape)} for name, p in params.items()]
    header = {
        "format_version": _CKPT_VERSION,
        "writer": f"stimseq {__version__}",
        "model_config": model_config.to_dict(),
        "params": table,
    }
    hjson = json.dumps(header, sort_keys=True).encode()
    payload = b"".join(
        np.ascontiguousarray(p.data, dtype="<f4").tobytes() for p in params.values()
    )
    _atomic_write_bytes(path, _CKPT_MAGIC + struct.pack("<I", len(hjson)) + hjson + payload)


def load_checkpoint(path, expect_kind=None):
    """Read a checkpoint; returns (ModelConfig, params). The parameter
    table must match the config's schema exactly."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < len(_CKPT_MAGIC) + 4 or raw[:len(_CKPT_MAGIC)] != _CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a stimseq checkpoint")
    (hlen,) = struct.unpack_from("<I", raw, len(_CKPT_MAGIC))
    off = len(_CKPT_MAGIC) + 4
    try:
        header = json.loads(raw[off:off + hlen])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
    if header.get("format_version") != _CKPT_VERSION:
        raise CheckpointError(
            f"{path}: format version {header.get('format_version')} unsupported "
            f"(expected {_CKPT_VERSION})"
        )
    config = ModelConfig.from_dict(header["model_config"])
    if expect_kind is not None and config.kind != expect_kind:
        raise CheckpointError(
            f"{path}: checkpoint holds a {config.kind!r} model, expected {expect_kind!r}"
        )

    stored = {entry["name"]: tuple(entry["shape"]) for entry in header["params"]}
    expected = dict(parameter_schema(config))
    for name, shape in expected.items():
        if name not in stored:
            raise CheckpointError(f"{path}: missing parameter {name!r}")
        if stored[name] != shape:
            raise CheckpointError(
                f"{path}: parameter {name!r} has shape {stored[name]}, schema wants {shape}"
            )
    for name in stored:
        if name not in expected:
            raise CheckpointError(f"{path}: unexpected parameter {name!r}")

    params = {}
    cursor = off + hlen
    for entry in header["params"]:
        name, shape = entry["name"], tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 4
        if cursor + nbytes > len(raw):
            raise CheckpointError(f"{path}: payload truncated at parameter {name!r}")
        data = np.frombuffer(raw, dtype="<f4", count=count, offset=cursor).reshape(shape)
        params[name] = Tensor(data.copy(), requires_grad=True, name=name)
        cursor += nbytes
    if cursor != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - cursor} trailing bytes after payload")
    return config, params
