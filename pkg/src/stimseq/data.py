"""Feature files, manifests, crops, the toy extractor, and synthetic data.

On-disk formats (all writes are atomic: temp file + rename):

* feature file: 4 ASCII bytes "FSQ1", uint32-LE frame count T, uint32-LE
  feature dimension D, then T*D IEEE-754 float32-LE values, frame-major.
* manifest: newline-delimited JSON records with fields clip_id, subject_id,
  label, feature_path, n_frames, source_note.
* crop records: JSON array of {frame_index, bbox: [x, y, w, h], confidence}.
"""

import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DataError, FormatError

LABELS = ("arm_flapping", "headbanging", "spinning")
LABEL_TO_INDEX = {name: i for i, name in enumerate(LABELS)}

_FEATURE_MAGIC = b"FSQ1"
_HEADER = struct.Struct("<4sII")


@dataclass
class FeatureSequence:
    values: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.values, dtype=np.float32)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DataError(f"feature sequence must be T x D with T,D >= 1, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise DataError("feature sequence contains non-finite values")
        self.values = arr

    @property
    def n_frames(self):
        return self.values.shape[0]

    @property
    def dim(self):
        return self.values.shape[1]


@dataclass
class ClipRecord:
    clip_id: str
    subject_id: str
    label: str
    feature_path: str
    n_frames: int
    source_note: Optional[str] = None

    def __post_init__(self):
        if self.label not in LABELS:
            raise DataError(f"label {self.label!r} not in vocabulary {LABELS}")

    @property
    def label_index(self):
        return LABEL_TO_INDEX[self.label]


@dataclass
class CropRecord:
    frame_index: int
    bbox: tuple
    confidence: float

    def __post_init__(self):
        self.bbox = tuple(float(v) for v in self.bbox)
        if len(self.bbox) != 4:
            raise DataError(f"bbox must be (x, y, w, h), got {self.bbox}")
        if not 0.0 <= self.confidence <= 1.0:
            raise DataError(f"confidence {self.confidence} outside [0, 1]")

    @property
    def area(self):
        return self.bbox[2] * self.bbox[3]


def _atomic_write_bytes(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_features(path, seq):
    header = _HEADER.pack(_FEATURE_MAGIC, seq.n_frames, seq.dim)
    _atomic_write_bytes(path, header + seq.values.astype("<f4", copy=False).tobytes())


def read_features(path):
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read feature file {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header, file ends at byte {len(raw)}")
    magic, t, d = _HEADER.unpack_from(raw, 0)
    if magic != _FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic at byte 0: {magic!r}")
    if t < 1 or d < 1:
        raise FormatError(f"{path}: invalid dimensions T={t}, D={d} in header at byte 4")
    expected = t * d * 4
    actual = len(raw) - _HEADER.size
    if actual != expected:
        raise FormatError(
            f"{path}: payload at byte {_HEADER.size} should hold {expected} bytes "
            f"(T*D*4), found {actual}"
        )
    values = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(t, d).copy()
    bad = ~np.isfinite(values.reshape(-1))
    if bad.any():
        idx = int(np.flatnonzero(bad)[0])
        raise FormatError(
            f"{path}: non-finite value at byte {_HEADER.size + 4 * idx}"
        )
    return FeatureSequence(values)


def write_manifest(path, records):
    lines = [json.dumps(asdict(r), sort_keys=True) for r in records]
    _atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())


def read_manifest(path):
    records = []
    seen = set()
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            try:
                rec = ClipRecord(**doc)
            except TypeError as exc:
                raise FormatError(f"{path}:{lineno}: bad record fields: {exc}") from exc
            if rec.clip_id in seen:
                raise DataError(f"{path}:{lineno}: duplicate clip_id {rec.clip_id!r}")
            seen.add(rec.clip_id)
            records.append(rec)
    return records


def read_crop_records(path):
    try:
        with open(path, encoding="utf-8") as fh:
            docs = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read crop records {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(docs, list):
        raise FormatError(f"{path}: crop records must be a JSON array")
    return [
        CropRecord(frame_index=d["frame_index"], bbox=tuple(d["bbox"]),
                   confidence=d["confidence"])
        for d in docs
    ]


def resolve_feature_path(record, root):
    p = Path(record.feature_path)
    return p if p.is_absolute() else Path(root) / p


def load_dataset(records, root="."):
    """Read every clip's features; returns [(FeatureSequence, label_index)]."""
    out = []
    for rec in records:
        seq = read_features(resolve_feature_path(rec, root))
        if seq.n_frames != rec.n_frames:
            raise DataError(
                f"clip {rec.clip_id}: manifest says {rec.n_frames} frames, "
                f"file holds {seq.n_frames}"
            )
        out.append((seq, rec.label_index))
    return out


def sample_keyframes(total_frames, n=20):
    """Uniform floor-indexed keyframes; repeats indices when total < n."""
    if total_frames < 1:
        raise DataError(f"total_frames must be >= 1, got {total_frames}")
    if n < 1:
        raise DataError(f"keyframe count must be >= 1, got {n}")
    return [i * total_frames // n for i in range(n)]


def select_target_box(detections):
    """Highest confidence wins; ties broken by larger area, then list order."""
    if not detections:
        raise DataError("no detections for frame")
    best = min(enumerate(detections), key=lambda kv: (-kv[1].confidence, -kv[1].area, kv[0]))
    return best[1]


def _bilinear_resize(img, out_h, out_w):
    # align-corners sampling: corner pixels map exactly onto corner pixels
    in_h, in_w = img.shape[:2]
    src = img.astype(np.float32)
    ys = np.linspace(0, in_h - 1, out_h) if out_h > 1 else np.zeros(1)
    xs = np.linspace(0, in_w - 1, out_w) if out_w > 1 else np.zeros(1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0).astype(np.float32)
    wx = (xs - x0).astype(np.float32)
    if img.ndim == 3:
        wy = wy[:, None, None]
        wx = wx[None, :, None]
    else:
        wy = wy[:, None]
        wx = wx[None, :]
    top = src[y0][:, x0] * (1 - wx) + src[y0][:, x1] * wx
    bottom = src[y1][:, x0] * (1 - wx) + src[y1][:, x1] * wx
    return top * (1 - wy) + bottom * wy


def apply_crop(frame, crop, margin_fraction=0.1, out_size=64):
    """Crop `frame` around the (margin-expanded, clamped) bbox and resize to
    an out_size square with bilinear interpolation."""
    if margin_fraction < 0:
        raise DataError(f"margin_fraction must be >= 0, got {margin_fraction}")
    frame = np.asarray(frame)
    h, w = frame.shape[:2]
    x, y, bw, bh = crop.bbox
    x0 = max(0.0, x - bw * margin_fraction)
    y0 = max(0.0, y - bh * margin_fraction)
    x1 = min(float(w), x + bw * (1 + margin_fraction))
    y1 = min(float(h), y + bh * (1 + margin_fraction))
    ix0, iy0 = int(math.floor(x0)), int(math.floor(y0))
    ix1, iy1 = min(int(math.ceil(x1)), w), min(int(math.ceil(y1)), h)
    if ix1 <= ix0 or iy1 <= iy0:
        raise DataError(f"bbox {crop.bbox} is empty after clamping to {w}x{h} frame")
    return _bilinear_resize(frame[iy0:iy1, ix0:ix1], out_size, out_size)


def toy_extract(frames, grid=4):
    """Pooled brightness plus frame-difference features, D = 2 * grid^2.

    Per frame: average-pool the grayscale image to grid x grid, concatenate
    with the absolute difference from the previous pooled frame (zeros for
    frame 0). Integer images are scaled by 1/255 so values stay in [0, 1].
    """
    frames = list(frames)
    if not frames:
        raise DataError("toy_extract needs at least one frame")
    shape = np.asarray(frames[0]).shape
    pooled_prev = None
    rows = []
    for t, frame in enumerate(frames):
        arr = np.asarray(frame)
        if arr.shape != shape:
            raise DataError(f"frame {t} shape {arr.shape} differs from frame 0 shape {shape}")
        if arr.ndim != 2:
            raise DataError(f"toy_extract expects grayscale frames, got shape {arr.shape}")
        if arr.shape[0] < grid or arr.shape[1] < grid:
            raise DataError(f"frame {arr.shape} smaller than pooling grid {grid}x{grid}")
        arr = arr.astype(np.float32)
        if np.issubdtype(np.asarray(frame).dtype, np.integer):
            arr /= 255.0
        pooled = _pool_grid(arr, grid)
        diff = np.zeros_like(pooled) if pooled_prev is None else np.abs(pooled - pooled_prev)
        rows.append(np.concatenate([pooled.reshape(-1), diff.reshape(-1)]))
        pooled_prev = pooled
    return FeatureSequence(np.stack(rows))


def _pool_grid(arr, g):
    h, w = arr.shape
    out = np.empty((g, g), dtype=np.float32)
    for i in range(g):
        for j in range(g):
            cell = arr[i * h // g:(i + 1) * h // g, j * w // g:(j + 1) * w // g]
            out[i, j] = cell.mean()
    return out


@dataclass
class SynthSpec:
    n_subjects: int
    clips_per_subject: int
    n_frames: int = 20
    dim: int = 64
    noise_sigma: float = 0.1
    subject_effect_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("n_subjects", "clips_per_subject", "n_frames", "dim"):
            if getattr(self, name) < 1:
                raise DataError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.noise_sigma < 0 or self.subject_effect_sigma < 0:
            raise DataError("noise sigmas must be >= 0")

    def to_dict(self):
        return asdict(self)


# one sinusoidal motif per class, frequencies distinct by construction
_MOTIF_CYCLES = (1.0, 2.0, 3.0)


def class_motif(label_index, n_frames):
    t = (np.arange(n_frames) + 0.5) / n_frames
    return np.sin(2 * np.pi * _MOTIF_CYCLES[label_index] * t)


def generate_synthetic(spec, out_dir):
    """Write a three-class synthetic dataset under `out_dir`.

    Each class has a fixed unit direction in feature space and a sinusoidal
    motif; a clip is motif x direction + per-subject offset + white noise.
    Labels rotate round-robin so the histogram stays balanced within one.
    Returns (records, manifest_path); everything is deterministic in seed.
    """
    out_dir = Path(out_dir)
    rng = np.random.default_rng(spec.seed)
    directions = rng.standard_normal((len(LABELS), spec.dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    motifs = np.stack([class_motif(i, spec.n_frames) for i in range(len(LABELS))])

    records = []
    clip_counter = 0
    for s in range(spec.n_subjects):
        subject_id = f"subj{s:03d}"
        offset = rng.normal(0.0, spec.subject_effect_sigma, size=spec.dim)
        for c in range(spec.clips_per_subject):
            label_idx = clip_counter % len(LABELS)
            noise = rng.normal(0.0, spec.noise_sigma, size=(spec.n_frames, spec.dim))
            values = motifs[label_idx][:, None] * directions[label_idx] + offset + noise
            clip_id = f"{subject_id}_clip{c:03d}"
            rel_path = f"features/{clip_id}.fsq"
            seq = FeatureSequence(values.astype(np.float32))
            write_features(out_dir / rel_path, seq)
            records.append(ClipRecord(
                clip_id=clip_id,
                subject_id=subject_id,
                label=LABELS[label_idx],
                feature_path=rel_path,
                n_frames=spec.n_frames,
                source_note="synthetic",
            ))
            clip_counter += 1
    manifest_path = out_dir / "manifest.jsonl"
    write_manifest(manifest_path, records)
    return records, manifest_path
