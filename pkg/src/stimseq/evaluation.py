"""Support-weighted F1, subject-wise fold planning, and cross-validation."""

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .data import load_dataset
from .errors import ConfigError, MetricsError
from .models import forward_clip


@dataclass
class MetricsReport:
    confusion: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    weights: np.ndarray
    support: np.ndarray
    weighted_f1: float

    def to_dict(self):
        return {
            "confusion": self.confusion.tolist(),
            "per_class": [
                {
                    "class": i,
                    "precision": float(self.precision[i]),
                    "recall": float(self.recall[i]),
                    "f1": float(self.f1[i]),
                    "weight": float(self.weights[i]),
                    "support": int(self.support[i]),
                }
                for i in range(len(self.support))
            ],
            "weighted_f1": self.weighted_f1,
        }


def weighted_f1(true_labels, predicted_labels, num_classes):
    """Per-class precision/recall/F1 and their support-weighted mean.

    Zero-division conventions: precision is 0 when the class is never
    predicted, F1 is 0 when precision + recall is 0, and a class with no
    support contributes weight 0.
    """
    true = np.asarray(true_labels)
    pred = np.asarray(predicted_labels)
    if true.size == 0:
        raise MetricsError("weighted_f1 called with no samples")
    if true.shape != pred.shape or true.ndim != 1:
        raise MetricsError(f"label lists must be equal-length 1-D, got {true.shape} vs {pred.shape}")
    for name, arr in (("true", true), ("predicted", pred)):
        if arr.min() < 0 or arr.max() >= num_classes:
            raise MetricsError(f"{name} labels outside [0, {num_classes})")

    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (true, pred), 1)
    tp = np.diag(confusion).astype(np.float64)
    support = confusion.sum(axis=1)
    predicted = confusion.sum(axis=0)
    precision = np.divide(tp, predicted, out=np.zeros(num_classes), where=predicted > 0)
    recall = np.divide(tp, support, out=np.zeros(num_classes), where=support > 0)
    pr = precision + recall
    f1 = np.divide(2 * precision * recall, pr, out=np.zeros(num_classes), where=pr > 0)
    weights = support / true.size
    return MetricsReport(
        confusion=confusion,
        precision=precision,
        recall=recall,
        f1=f1,
        weights=weights,
        support=support,
        weighted_f1=float((f1 * weights).sum()),
    )


@dataclass
class FoldPlan:
    num_folds: int
    seed: int
    fold_subjects: list

    def fold_of(self, subject_id):
        for i, subjects in enumerate(self.fold_subjects):
            if subject_id in subjects:
                return i
        raise ConfigError(f"subject {subject_id!r} not in fold plan")

    def to_dict(self):
        return {
            "num_folds": self.num_folds,
            "seed": self.seed,
            "fold_subjects": [sorted(s) for s in self.fold_subjects],
        }


def make_folds(records, num_folds=5, seed=0):
    """Subject-disjoint folds, sizes balanced greedily by clip count.

    Subjects are placed largest-first into the currently smallest fold;
    among equally small folds a seed-keyed priority permutation breaks the
    tie, so the plan is deterministic in (records, num_folds, seed) and
    independent of manifest row order.
    """
    counts = {}
    for rec in records:
        counts[rec.subject_id] = counts.get(rec.subject_id, 0) + 1
    if len(counts) < num_folds:
        raise ConfigError(
            f"need at least {num_folds} subjects for {num_folds} folds, have {len(counts)}"
        )
    order = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    priority = np.random.default_rng([seed, num_folds]).permutation(num_folds)
    fold_clip_counts = [0] * num_folds
    fold_subjects = [set() for _ in range(num_folds)]
    for subject_id, clip_count in order:
        target = min(range(num_folds), key=lambda i: (fold_clip_counts[i], priority[i]))
        fold_subjects[target].add(subject_id)
        fold_clip_counts[target] += clip_count
    return FoldPlan(num_folds=num_folds, seed=seed, fold_subjects=fold_subjects)


def split_fold(records, plan, fold):
    """(train_records, test_records) for one fold, both sorted by clip_id."""
    held = plan.fold_subjects[fold]
    train = sorted((r for r in records if r.subject_id not in held), key=lambda r: r.clip_id)
    test = sorted((r for r in records if r.subject_id in held), key=lambda r: r.clip_id)
    return train, test


def evaluate_records(model_config, params, records, root="."):
    """Per-clip predictions through the single-clip forward path."""
    dataset = load_dataset(records, root)
    true = [label for _, label in dataset]
    pred = [forward_clip(model_config, params, seq).predicted_label for seq, _ in dataset]
    return weighted_f1(true, pred, model_config.num_classes)


@dataclass
class CVResult:
    per_fold: list
    mean_weighted_f1: float
    std_weighted_f1: float
    wall_time_s: float
    model_config: dict = field(default_factory=dict)
    train_config: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "model_config": self.model_config,
            "train_config": self.train_config,
            "per_fold": [
                {"fold": i, **report.to_dict()} for i, report in enumerate(self.per_fold)
            ],
            "mean_weighted_f1": self.mean_weighted_f1,
            "std_weighted_f1": self.std_weighted_f1,
            "wall_time_s": self.wall_time_s,
        }


def _run_fold(model_config, train_config, records, plan, fold, root):
    from .training import train

    train_records, test_records = split_fold(records, plan, fold)
    fold_config = replace(train_config, seed=train_config.seed + fold)
    try:
        params, _ = train(model_config, fold_config, train_records, root=root)
    except Exception as exc:
        raise type(exc)(f"fold {fold}: {exc}") from exc
    return evaluate_records(model_config, params, test_records, root)


_worker_thread_limiter = None


def _limit_worker_threads():
    # each parallel fold keeps BLAS single-threaded so jobs workers do not
    # oversubscribe the cores; the limiter must outlive this function
    global _worker_thread_limiter
    try:
        from threadpoolctl import threadpool_limits

        _worker_thread_limiter = threadpool_limits(limits=1)
    except ImportError:
        pass


def cross_validate(model_config, train_config, records, plan, root=".", jobs=1):
    """Train and score every fold; each fold seeds itself from
    (train_config.seed + fold), so results do not depend on `jobs`."""
    started = time.perf_counter()
    if jobs > 1:
        import concurrent.futures as cf
        import multiprocessing as mp

        try:
            ctx = mp.get_context("fork")
        except ValueError:
            ctx = mp.get_context("spawn")
        with cf.ProcessPoolExecutor(max_workers=jobs, mp_context=ctx,
                                    initializer=_limit_worker_threads) as pool:
            futures = [
                pool.submit(_run_fold, model_config, train_config, records, plan, fold, root)
                for fold in range(plan.num_folds)
            ]
            reports = [f.result() for f in futures]
    else:
        reports = [
            _run_fold(model_config, train_config, records, plan, fold, root)
            for fold in range(plan.num_folds)
        ]
    scores = np.array([r.weighted_f1 for r in reports])
    return CVResult(
        per_fold=reports,
        mean_weighted_f1=float(scores.mean()),
        std_weighted_f1=float(scores.std()),
        wall_time_s=time.perf_counter() - started,
        model_config=model_config.to_dict(),
        train_config=train_config.to_dict(),
    )
