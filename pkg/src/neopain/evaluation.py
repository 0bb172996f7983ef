"""Evaluation protocols (leave-one-subject-out, 80/20 split) and metrics."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import asdict, dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

PROTOCOLS = ("loso", "split")

# published results, kept for reference only; not reproducible without the clinical data
REFERENCE_RESULTS = {
    "facial_intensity": [
        # (approach, pretrain, retrain, mse, mae)
        ("VGG16", "VGGFace2", "COPE", 0.4170, 0.5412),
        ("VGG16", "VGGFace2", "Acute", 0.1979, 0.4035),
        ("VGG16", "VGGFace2", "Post-Op", 0.3606, 0.5155),
        ("VGG16", "Acute", "Post-Op", 0.3716, 0.5211),
        ("Bilinear VGG16", "VGGFace2, ImageNet", "COPE", 0.4272, 0.5208),
        ("Bilinear VGG16", "VGGFace2, ImageNet", "Acute", 0.1917, 0.3458),
        ("Bilinear VGG16", "VGGFace2, ImageNet", "Post-Op", 0.2955, 0.4575),
        ("Bilinear VGG16", "Acute", "Post-Op", 0.2695, 0.4173),
    ],
    "sequence_intensity": [
        # (approach, mse, mae)
        ("VGG16 + LSTM", 4.8612, 1.7274),
        ("Bilinear VGG16 + LSTM", 3.999, 1.5565),
    ],
}


@dataclass(frozen=True)
class Metrics:
    mse: float
    mae: float
    count: int
    folds: int = 1

    def to_record(self, **extra) -> dict:
        return {**extra, **asdict(self)}


@dataclass(frozen=True)
class FoldSpec:
    """Event ids per partition. ``name`` is the held-out subject for LOSO."""

    name: str
    train: Tuple[str, ...]
    val: Tuple[str, ...]
    test: Tuple[str, ...]


def evaluate_predictions(pred, target) -> Metrics:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    target = np.asarray(target, dtype=np.float64).ravel()
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    if pred.size == 0:
        raise ValueError("cannot evaluate an empty fold")
    err = pred - target
    return Metrics(mse=float(np.mean(err ** 2)), mae=float(np.mean(np.abs(err))), count=int(pred.size))


def evaluate_sequences(pred, targets) -> Dict[str, Metrics]:
    """Metrics for (N, T) sequence outputs against one label per event.

    ``per_timestep`` scores every output against its event label;
    ``per_event_mean`` scores each event's mean output.
    """
    pred = np.asarray(pred, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if pred.ndim != 2 or targets.shape != (pred.shape[0],):
        raise ValueError(f"expected (N, T) predictions and (N,) targets, got {pred.shape} and {targets.shape}")
    return {
        "per_timestep": evaluate_predictions(pred, np.repeat(targets[:, None], pred.shape[1], axis=1)),
        "per_event_mean": evaluate_predictions(pred.mean(axis=1), targets),
    }


def aggregate(metrics: Sequence[Metrics]) -> Metrics:
    """Unweighted mean over folds."""
    if not metrics:
        raise ValueError("no folds to aggregate")
    return Metrics(mse=float(np.mean([m.mse for m in metrics])), mae=float(np.mean([m.mae for m in metrics])),
                   count=int(sum(m.count for m in metrics)), folds=len(metrics))


def _holdout(ids: Sequence[str], fraction: float, rng: np.random.Generator) -> Tuple[List[str], List[str]]:
    """Seeded (kept, held) split of ``ids``; holds out round(fraction * n), keeping at least one."""
    ids = list(ids)
    n_held = min(int(round(fraction * len(ids))), len(ids) - 1)
    order = rng.permutation(len(ids))
    held = sorted(ids[k] for k in order[:n_held])
    kept = sorted(ids[k] for k in order[n_held:])
    return kept, held


def stratified_holdout(items: Sequence[Tuple[str, str]], fraction: float,
                       rng: np.random.Generator) -> Tuple[List[str], List[str]]:
    """Hold out ``fraction`` of events within each subject."""
    by_subject = defaultdict(list)
    for event_id, subject in items:
        by_subject[subject].append(event_id)
    kept, held = [], []
    for subject in sorted(by_subject):
        k, h = _holdout(by_subject[subject], fraction, rng)
        kept += k
        held += h
    return sorted(kept), sorted(held)


def make_folds(items: Sequence[Tuple[str, str]], protocol: str, seed: int = 0, val_fraction: float = 0.1,
               test_fraction: float = 0.2) -> List[FoldSpec]:
    """Folds over ``(event_id, subject_id)`` pairs.

    ``loso`` tests each subject once, with a subject-stratified validation
    holdout from the remaining subjects. ``split`` is one seeded random
    train/test partition of events, validation carved from the train part.
    """
    items = [(str(e), str(s)) for e, s in items]
    if not items:
        raise ValueError("cannot build folds from an empty dataset")
    if len({e for e, _ in items}) != len(items):
        raise ValueError("duplicate event ids")
    rng = np.random.default_rng(seed)
    if protocol == "loso":
        subjects = sorted({s for _, s in items})
        if len(subjects) < 2:
            raise ValueError(f"leave-one-subject-out needs at least 2 subjects, got {len(subjects)}")
        folds = []
        for subject in subjects:
            rest = [(e, s) for e, s in items if s != subject]
            train, val = stratified_holdout(rest, val_fraction, rng)
            test = sorted(e for e, s in items if s == subject)
            folds.append(FoldSpec(subject, tuple(train), tuple(val), tuple(test)))
        return folds
    if protocol == "split":
        if len(items) < 3:
            raise ValueError(f"split protocol needs at least 3 events, got {len(items)}")
        pool, test = _holdout([e for e, _ in items], test_fraction, rng)
        train, val = _holdout(pool, val_fraction, rng)
        return [FoldSpec("split", tuple(train), tuple(val), tuple(test))]
    raise ValueError(f"protocol must be one of {PROTOCOLS}, got {protocol!r}")
