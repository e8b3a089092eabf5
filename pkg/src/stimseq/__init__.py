"""Temporal classification of stereotypical motor behaviors (arm flapping,
headbanging, spinning) from per-frame feature sequences, with subject-wise
cross-validation and FIFO sliding-window streaming inference."""

__version__ = "0.1.0"

from .data import FeatureSequence, ClipRecord, SynthSpec, LABELS
from .models import ModelConfig, Prediction, build_model, forward_clip, receptive_field
from .training import TrainConfig, train, save_checkpoint, load_checkpoint
from .evaluation import weighted_f1, make_folds, cross_validate
from .streaming import StreamConfig, StreamEngine, stream_file

__all__ = [
    "FeatureSequence", "ClipRecord", "SynthSpec", "LABELS",
    "ModelConfig", "Prediction", "build_model", "forward_clip", "receptive_field",
    "TrainConfig", "train", "save_checkpoint", "load_checkpoint",
    "weighted_f1", "make_folds", "cross_validate",
    "StreamConfig", "StreamEngine", "stream_file",
    "__version__",
]
