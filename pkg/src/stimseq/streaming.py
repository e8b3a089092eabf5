"""Sliding-window streaming inference over an unbounded frame stream.

Frames enter a FIFO buffer of the W most recent frames; once full, the
current window is classified every `hop` frames through exactly the same
single-clip forward path batch evaluation uses, so an emitted prediction is
bit-identical to classifying that window offline. Inference runs inside
push(), so ingestion can never outrun classification (the backpressure
contract collapses to synchronous execution).

Note: a bidirectional LSTM checkpoint works here because each window is
fully buffered before inference, but its predictions are not frame-causal
within the window.
"""

import json
import time
from collections import deque
from dataclasses import dataclass

import numpy as np

from .data import FeatureSequence, read_features
from .errors import ConfigError, StreamError
from .models import forward_clip


@dataclass
class StreamConfig:
    window_size: int = 50
    hop: int = 1
    emit_policy: str = "every_hop"

    def __post_init__(self):
        if not 1 <= self.hop <= self.window_size:
            raise ConfigError(
                f"need 1 <= hop <= window_size, got hop={self.hop}, window={self.window_size}"
            )
        if self.emit_policy not in ("every_hop", "on_change"):
            raise ConfigError(f"emit_policy must be every_hop or on_change, got {self.emit_policy!r}")


@dataclass
class WindowResult:
    end_frame: int
    prediction: object
    latency_ms: float


@dataclass
class LatencyStats:
    count: int
    mean_ms: float
    p50_ms: float
    p95_ms: float
    max_ms: float
    frames: int
    total_s: float
    throughput_fps: float


class StreamEngine:
    def __init__(self, model_config, params, stream_config=None):
        self.model_config = model_config
        self.params = params
        self.config = stream_config or StreamConfig()
        self._buffer = deque(maxlen=self.config.window_size)
        self._pushed = 0
        self._last_emitted_label = None

    @classmethod
    def from_checkpoint(cls, path, stream_config=None):
        from .training import load_checkpoint

        config, params = load_checkpoint(path)
        return cls(config, params, stream_config)

    @property
    def frames_pushed(self):
        return self._pushed

    def push(self, frame_features, arrival_time=None):
        """Append one frame; returns a WindowResult when a window fires."""
        arrival = time.perf_counter() if arrival_time is None else arrival_time
        frame = np.asarray(frame_features, dtype=np.float32).reshape(-1)
        if frame.shape[0] != self.model_config.input_dim:
            raise StreamError(
                f"frame dimension {frame.shape[0]} does not match model "
                f"input_dim {self.model_config.input_dim}"
            )
        self._buffer.append(frame)
        self._pushed += 1
        w = self.config.window_size
        if self._pushed < w or (self._pushed - w) % self.config.hop != 0:
            return None
        window = FeatureSequence(np.stack(self._buffer))
        prediction = forward_clip(self.model_config, self.params, window)
        result = WindowResult(
            end_frame=self._pushed - 1,
            prediction=prediction,
            latency_ms=(time.perf_counter() - arrival) * 1e3,
        )
        if self.config.emit_policy == "on_change":
            if prediction.predicted_label == self._last_emitted_label:
                return None
            self._last_emitted_label = prediction.predicted_label
        return result


def nearest_rank(sorted_values, pct):
    """Nearest-rank percentile of an ascending list."""
    rank = max(1, int(np.ceil(pct / 100.0 * len(sorted_values))))
    return sorted_values[rank - 1]


def latency_stats(results, frames, total_s):
    if not results:
        raise StreamError("latency statistics need at least one emission")
    lat = sorted(r.latency_ms for r in results)
    return LatencyStats(
        count=len(lat),
        mean_ms=float(np.mean(lat)),
        p50_ms=float(nearest_rank(lat, 50)),
        p95_ms=float(nearest_rank(lat, 95)),
        max_ms=float(lat[-1]),
        frames=frames,
        total_s=total_s,
        throughput_fps=frames / total_s if total_s > 0 else float("inf"),
    )


def stream_file(engine, path):
    """Replay a feature file through push(); returns (results, LatencyStats
    or None when nothing was emitted)."""
    seq = read_features(path)
    if seq.dim != engine.model_config.input_dim:
        raise StreamError(
            f"{path}: feature dimension {seq.dim} does not match model "
            f"input_dim {engine.model_config.input_dim}"
        )
    results = []
    started = time.perf_counter()
    for frame in seq.values:
        out = engine.push(frame)
        if out is not None:
            results.append(out)
    total = time.perf_counter() - started
    stats = latency_stats(results, seq.n_frames, total) if results else None
    return results, stats


def latency_report(stats):
    """(human_text, json_dict) rendering of LatencyStats."""
    doc = {
        "count": stats.count,
        "mean_ms": stats.mean_ms,
        "p50_ms": stats.p50_ms,
        "p95_ms": stats.p95_ms,
        "max_ms": stats.max_ms,
        "frames": stats.frames,
        "total_s": stats.total_s,
        "throughput_fps": stats.throughput_fps,
    }
    text = (
        f"windows: {stats.count}  latency mean {stats.mean_ms:.2f} ms, "
        f"p50 {stats.p50_ms:.2f} ms, p95 {stats.p95_ms:.2f} ms, max {stats.max_ms:.2f} ms; "
        f"{stats.frames} frames in {stats.total_s:.3f} s ({stats.throughput_fps:.1f} fps)"
    )
    return text, doc


def parse_latency_report(doc):
    known = {"count", "mean_ms", "p50_ms", "p95_ms", "max_ms", "frames", "total_s",
             "throughput_fps"}
    unknown = set(doc) - known
    if unknown:
        raise StreamError(f"unknown latency report keys: {sorted(unknown)}")
    return LatencyStats(**doc)


def window_result_to_json(result, label_names=None):
    pred = result.prediction
    doc = {
        "end_frame": result.end_frame,
        "label": pred.predicted_label,
        "log_probs": [float(v) for v in pred.log_probs],
        "latency_ms": result.latency_ms,
    }
    if label_names is not None:
        doc["label_name"] = label_names[pred.predicted_label]
    return json.dumps(doc, sort_keys=True)
