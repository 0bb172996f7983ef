"""Pipeline stages behind the command-line interface.

Directory layout produced by the stages::

    synth       <out>/manifest.tsv, frames/<event>/%04d.png, boxes/<event>.txt
    preprocess  <out>/clips.tsv
    features    <out>/features.json, backbone/, base/<event>.bten (32, D),
                aug/<event>.bten (K, D), augment.jsonl, single/, single_aug/
    train-*     <out>/manifest.json + tensor files, history.jsonl, metrics.jsonl
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from multiprocessing import get_context
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import Tensor, load_tensor, no_grad, save_tensor
from .backbone import BackboneSpec, TwoStreamBackbone
from .bilinear import BilinearHead, describe_batch
from .checkpoint import load_checkpoint, save_checkpoint
from .data.clips import KeyFrameClip, preprocess, read_clips, write_clips
from .data.events import read_manifest
from .data.frames import augment_clip
from .data.synth import N_SUBJECTS, event_rng, write_fixture
from .evaluation import (FoldSpec, Metrics, aggregate, evaluate_predictions, evaluate_sequences, make_folds,
                         stratified_holdout)
from .layers import Module, prefixed
from .temporal import SEQUENCE_LENGTH, TemporalModel
from .train import Dataset, TrainConfig, TrainResult, predict_dataset, train

logger = logging.getLogger(__name__)

FEATURES_META = "features.json"
SOURCES = ("bilinear", "single-stream")
VAL_FRACTION = 0.1


def write_jsonl(path, records: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_jsonl(path) -> List[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _model_rng(seed: int, role: str) -> np.random.Generator:
    return event_rng(seed, "model:" + role)


# ---------------------------------------------------------------------------
# synth / preprocess


def run_synth(out_dir: str, seed: int = 0, subjects: int = N_SUBJECTS, max_events: Optional[int] = None) -> dict:
    manifest = write_fixture(out_dir, seed=seed, n_subjects=subjects, max_events=max_events)
    events = read_manifest(manifest)
    return {"manifest": os.path.relpath(manifest, out_dir), "events": len(events),
            "pain": sum(e.pain_class == "pain" for e in events),
            "no_pain": sum(e.pain_class == "no-pain" for e in events)}


def run_preprocess(manifest: str, out_dir: str, balance: bool = False, seed: int = 0) -> dict:
    clips = preprocess(read_manifest(manifest), balance=balance, seed=seed)
    if not clips:
        raise ValueError("no events left after segmentation")
    os.makedirs(out_dir, exist_ok=True)
    write_clips(os.path.join(out_dir, "clips.tsv"), clips)
    levels: Dict[str, int] = {}
    for c in clips:
        levels[str(c.npass_intensity)] = levels.get(str(c.npass_intensity), 0) + SEQUENCE_LENGTH
    return {"clips": "clips.tsv", "events": len(clips), "keyframes": len(clips) * SEQUENCE_LENGTH,
            "level_frames": dict(sorted(levels.items()))}


# ---------------------------------------------------------------------------
# features


def backbone_state(backbone: TwoStreamBackbone) -> Dict[str, np.ndarray]:
    return {f"backbone.{k}": v for k, v in backbone.state_dict().items()}


def build_backbone(spec: dict, state: Optional[Dict[str, np.ndarray]] = None) -> TwoStreamBackbone:
    backbone = TwoStreamBackbone(BackboneSpec(**spec))
    if state:
        sub = {k[len("backbone."):]: v for k, v in state.items() if k.startswith("backbone.")}
        if sub:
            backbone.load_state_dict(sub)
    return backbone


def spec_dict(spec: BackboneSpec) -> dict:
    d = asdict(spec)
    d["channels"] = list(d["channels"])
    return d


def augmented_frames(frames: np.ndarray, seed: int, event_id: str, count: int,
                     per_clip: bool = False) -> Tuple[np.ndarray, List[dict]]:
    """``count`` randomly chosen key-frames of a clip, augmented (deterministic per event)."""
    count = min(count, len(frames))
    if count <= 0:
        return frames[:0], []
    rng = event_rng(seed, "augment:" + event_id)
    idx = np.sort(rng.choice(len(frames), size=count, replace=False))
    out, params = augment_clip([frames[k] for k in idx], rng, per_clip=per_clip)
    meta = [{"event_id": event_id, "frame": int(k), **p.to_dict()} for k, p in zip(idx, params)]
    return np.stack(out).astype(frames.dtype), meta


def frame_features(backbone: TwoStreamBackbone, frames: np.ndarray, single_stream: bool,
                   batch_size: int = 32, dtype=np.float32) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Bilinear descriptors and, optionally, flattened stream-A maps for (N, H, W, 3) frames."""
    frames = backbone.check_frames(frames)
    desc, flat = [], []
    with no_grad():
        for lo in range(0, len(frames), batch_size):
            xa, xb = backbone.feature_maps(frames[lo:lo + batch_size].astype(dtype, copy=False))
            desc.append(describe_batch(xa, xb).data)
            if single_stream:
                flat.append(xa.data.reshape(len(xa.data), -1))
    return np.concatenate(desc), (np.concatenate(flat) if single_stream else None)


def run_features(clips_path: str, out_dir: str, seed: int = 0, augment_frames: int = 8, per_clip: bool = False,
                 spec: Optional[BackboneSpec] = None, bilinear_checkpoint: Optional[str] = None,
                 single_stream: bool = False, batch_size: int = 32) -> dict:
    clips = read_clips(clips_path)
    if not clips:
        raise ValueError(f"{clips_path}: no clips")
    spec = spec or BackboneSpec()
    state = None
    if bilinear_checkpoint:
        kind, config, state = load_checkpoint(bilinear_checkpoint)
        if kind != "bilinear":
            raise ValueError(f"{bilinear_checkpoint}: expected a bilinear checkpoint, got {kind!r}")
        spec = BackboneSpec(**config["backbone"])
    backbone = build_backbone(spec_dict(spec), state)
    dirs = ["base", "aug"] + (["single", "single_aug"] if single_stream else [])
    for d in dirs:
        os.makedirs(os.path.join(out_dir, d), exist_ok=True)
    aug_meta: List[dict] = []
    for clip in clips:
        frames = clip.load_frames(spec.input_size)
        desc, flat = frame_features(backbone, frames, single_stream, batch_size)
        save_tensor(os.path.join(out_dir, "base", clip.event_id + ".bten"), desc)
        aug, meta = augmented_frames(frames, seed, clip.event_id, augment_frames, per_clip)
        aug_meta += meta
        if single_stream:
            save_tensor(os.path.join(out_dir, "single", clip.event_id + ".bten"), flat)
        if len(aug):
            aug_desc, aug_flat = frame_features(backbone, aug, single_stream, batch_size)
            save_tensor(os.path.join(out_dir, "aug", clip.event_id + ".bten"), aug_desc)
            if single_stream:
                save_tensor(os.path.join(out_dir, "single_aug", clip.event_id + ".bten"), aug_flat)
    save_checkpoint(os.path.join(out_dir, "backbone"), backbone_state(backbone), "backbone",
                    {"backbone": spec_dict(spec)})
    write_jsonl(os.path.join(out_dir, "augment.jsonl"), aug_meta)
    meta = {
        "clips": os.path.relpath(os.path.abspath(clips_path), os.path.abspath(out_dir)),
        "backbone": spec_dict(spec), "seed": seed, "augment_frames": augment_frames, "per_clip": per_clip,
        "single_stream": single_stream, "descriptor_dim": spec.descriptor_dim,
        "events": [c.event_id for c in clips],
    }
    with open(os.path.join(out_dir, FEATURES_META), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return {"events": len(clips), "descriptor_dim": spec.descriptor_dim,
            "augmented_frames": len(aug_meta), "single_stream": single_stream}


@dataclass
class FeatureStore:
    """Per-event descriptors written by the features stage."""

    root: str
    meta: dict
    clips: Dict[str, KeyFrameClip]
    cache: Dict[Tuple[str, str], np.ndarray] = field(default_factory=dict)

    @classmethod
    def open(cls, root: str) -> "FeatureStore":
        path = os.path.join(root, FEATURES_META)
        if not os.path.isfile(path):
            raise FileNotFoundError(f"{root}: no {FEATURES_META}; run the features stage first")
        with open(path, encoding="utf-8") as fh:
            meta = json.load(fh)
        clips = {c.event_id: c for c in read_clips(os.path.join(root, meta["clips"]))}
        missing = [e for e in meta["events"] if e not in clips]
        if missing:
            raise ValueError(f"{root}: events {missing[:3]} missing from the clip list")
        return cls(root, meta, {e: clips[e] for e in meta["events"]})

    @property
    def event_ids(self) -> List[str]:
        return list(self.clips)

    def items(self, phase: Optional[str] = None) -> List[Tuple[str, str]]:
        return [(e, c.subject_id) for e, c in self.clips.items() if phase is None or c.event.phase == phase]

    def array(self, kind: str, event_id: str) -> np.ndarray:
        key = (kind, event_id)
        if key not in self.cache:
            path = os.path.join(self.root, kind, event_id + ".bten")
            if not os.path.isfile(path):
                hint = " (rerun features with --single-stream)" if kind.startswith("single") else ""
                raise FileNotFoundError(f"{path}: missing feature file{hint}")
            self.cache[key] = load_tensor(path)
        return self.cache[key]

    def backbone(self) -> Tuple[TwoStreamBackbone, Dict[str, np.ndarray]]:
        _, config, state = load_checkpoint(os.path.join(self.root, "backbone"))
        return build_backbone(config["backbone"], state), state


# ---------------------------------------------------------------------------
# models


class BilinearRegressor(Module):
    """Trainable backbone tail + bilinear pooling + head, fed cached activations
    entering block ``start`` of both streams."""

    def __init__(self, backbone: TwoStreamBackbone, head: BilinearHead, start: int):
        self.backbone = backbone
        self.head = head
        self.start = start
        backbone.set_freeze_prefix(start)

    def named_parameters(self):
        yield from prefixed("backbone", self.backbone)
        yield from prefixed("head", self.head)

    def forward(self, x, train: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
        xa, xb = self.backbone.feature_maps(x, start=self.start)
        return self.head(describe_batch(xa, xb), train=train, rng=rng)


class JointSequenceModel(Module):
    """Backbone tail + bilinear pooling + temporal model over (B, T, ...) cached activations."""

    def __init__(self, backbone: TwoStreamBackbone, temporal: TemporalModel, start: int):
        self.backbone = backbone
        self.temporal = temporal
        self.start = start
        backbone.set_freeze_prefix(start)

    def named_parameters(self):
        yield from prefixed("backbone", self.backbone)
        yield from prefixed("temporal", self.temporal)

    def forward(self, x, train: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
        xa, xb = (np.asarray(getattr(v, "data", v)) for v in x)
        b, t = xa.shape[:2]
        fa, fb = self.backbone.feature_maps((xa.reshape(b * t, *xa.shape[2:]), xb.reshape(b * t, *xb.shape[2:])),
                                            start=self.start)
        desc = describe_batch(fa, fb)
        seq = desc.reshape((b, t, desc.shape[-1]))
        return self.temporal.forward(seq, train=train, rng=rng)


class HeadRegressor(Module):
    """Adapter giving the head the ``forward`` signature the trainer expects."""

    def __init__(self, head: BilinearHead):
        self.head = head

    def named_parameters(self):
        yield from prefixed("head", self.head)

    def forward(self, x, train: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
        return self.head(x, train=train, rng=rng)


# ---------------------------------------------------------------------------
# stage data


def _prefix_activations(store: FeatureStore, backbone: TwoStreamBackbone, event_ids: Sequence[str], stop: int,
                        augmented: bool) -> Tuple[np.ndarray, np.ndarray, List[int]]:
    """Cached stream activations entering block ``stop`` for every key-frame
    (and augmented frame) of the events; also returns frames per event."""
    meta = store.meta
    size = meta["backbone"]["input_size"]
    xa, xb, counts = [], [], []
    for eid in event_ids:
        frames = store.clips[eid].load_frames(size)
        if augmented and meta["augment_frames"] > 0:
            aug, _ = augmented_frames(frames, meta["seed"], eid, meta["augment_frames"], meta["per_clip"])
            frames = np.concatenate([frames, aug])
        a, b = backbone.prefix(frames.astype(np.float32), stop)
        xa.append(a.astype(np.float32))
        xb.append(b.astype(np.float32))
        counts.append(len(frames))
    return np.concatenate(xa), np.concatenate(xb), counts


def stage1_dataset(store: FeatureStore, event_ids: Sequence[str], augmented: bool,
                   source: str = "bilinear") -> Dataset:
    """Per-frame descriptors (or stream-A maps) with facial intensity targets."""
    augmented = augmented and store.meta["augment_frames"] > 0
    base, aug = ("base", "aug") if source == "bilinear" else ("single", "single_aug")
    xs, ys = [], []
    for eid in event_ids:
        parts = [store.array(base, eid)] + ([store.array(aug, eid)] if augmented else [])
        x = np.concatenate(parts)
        xs.append(x)
        ys.append(np.full(len(x), store.clips[eid].facial_intensity, dtype=np.float64))
    return Dataset(np.concatenate(xs), np.concatenate(ys))


def stage2_dataset(store: FeatureStore, event_ids: Sequence[str]) -> Dataset:
    """(N, 32, D) descriptor sequences with the event's N-PASS level at every step."""
    x = np.stack([store.array("base", e) for e in event_ids])
    y = np.array([[store.clips[e].npass_intensity] * SEQUENCE_LENGTH for e in event_ids], dtype=np.float64)
    return Dataset(x, y)


# ---------------------------------------------------------------------------
# training


@dataclass
class StageOutcome:
    model: Module
    result: TrainResult
    fold: FoldSpec
    metrics: Dict[str, Metrics]
    checkpoint_state: Dict[str, np.ndarray]
    checkpoint_config: dict


def _history(result: TrainResult, stage: str, fold: str) -> List[dict]:
    return [{"stage": stage, "fold": fold, **rec} for rec in result.history]


def _empty(ids: Sequence[str]) -> bool:
    return len(ids) == 0


def fit_bilinear(store: FeatureStore, fold: FoldSpec, config: TrainConfig, source: str = "bilinear",
                 freeze_prefix: Optional[int] = None, hidden=(64, 64), dropout: float = 0.5) -> StageOutcome:
    """Train the facial-intensity regressor on one fold."""
    if source not in SOURCES:
        raise ValueError(f"input source must be one of {SOURCES}, got {source!r}")
    backbone, _ = store.backbone()
    n_layers = backbone.spec.n_layers
    start = n_layers if freeze_prefix is None else freeze_prefix
    if not 0 <= start <= n_layers:
        raise ValueError(f"freeze_prefix {start} outside [0, {n_layers}]")
    if start < n_layers and source != "bilinear":
        raise ValueError("fine-tuning the backbone requires bilinear input")
    clamp = (0.0, 1.0)
    if start < n_layers:
        dim = backbone.spec.descriptor_dim
        head = BilinearHead(dim, hidden, dropout, _model_rng(config.seed, "head"), clamp)
        model: Module = BilinearRegressor(backbone, head, start)

        def data(ids, augmented):
            xa, xb, counts = _prefix_activations(store, backbone, ids, start, augmented)
            y = np.concatenate([[store.clips[e].facial_intensity] * n for e, n in zip(ids, counts)])
            return Dataset((xa, xb), y)
    else:
        train_set = stage1_dataset(store, fold.train, True, source)
        head = BilinearHead(train_set.inputs.shape[1], hidden, dropout, _model_rng(config.seed, "head"), clamp)
        model = HeadRegressor(head)

        def data(ids, augmented):
            return train_set if augmented else stage1_dataset(store, ids, False, source)
    train_data = data(fold.train, True)
    val_data = None if _empty(fold.val) else data(fold.val, False)
    result = train(model, train_data, val_data, config)
    metrics = {}
    for part, ids in (("val", fold.val), ("test", fold.test)):
        if not _empty(ids):
            d = val_data if part == "val" else data(ids, False)
            metrics[part] = evaluate_predictions(np.clip(predict_dataset(model, d, dtype=config.dtype), *clamp),
                                                 d.targets)
    state = {**{f"head.{k}": v for k, v in head.state_dict().items()}, **backbone_state(backbone)}
    ckpt_config = {"input": source, "in_dim": head.in_dim, "hidden": list(hidden), "dropout": dropout,
                   "clamp": list(clamp), "backbone": spec_dict(backbone.spec), "train": config.to_dict()}
    return StageOutcome(model, result, fold, metrics, state, ckpt_config)


def fit_lstm(store: FeatureStore, fold: FoldSpec, config: TrainConfig, joint: bool = False,
             freeze_prefix: Optional[int] = None) -> StageOutcome:
    """Train the sequence regressor on one fold of postoperative events."""
    backbone, _ = store.backbone()
    n_layers = backbone.spec.n_layers
    dim = backbone.spec.descriptor_dim
    temporal = TemporalModel(dim, seed=int(_model_rng(config.seed, "lstm").integers(2 ** 31)))
    base_train = stage2_dataset(store, fold.train)
    temporal.fit_input_scaling(base_train.inputs)
    temporal.fit_output_scaling(base_train.targets)
    clamp = temporal.clamp
    if joint:
        start = n_layers - 1 if freeze_prefix is None else freeze_prefix
        if not 0 <= start < n_layers:
            raise ValueError(f"joint training needs freeze_prefix in [0, {n_layers - 1}], got {start}")
        model: Module = JointSequenceModel(backbone, temporal, start)

        def data(ids):
            xa, xb, _ = _prefix_activations(store, backbone, ids, start, False)
            t = SEQUENCE_LENGTH
            y = np.array([[store.clips[e].npass_intensity] * t for e in ids], dtype=np.float64)
            return Dataset((xa.reshape(len(ids), t, *xa.shape[1:]), xb.reshape(len(ids), t, *xb.shape[1:])), y)
    else:
        model = temporal

        def data(ids):
            return base_train if ids == fold.train else stage2_dataset(store, ids)
    val_data = None if _empty(fold.val) else data(fold.val)
    result = train(model, data(fold.train), val_data, config)
    metrics = {}
    for part, ids in (("val", fold.val), ("test", fold.test)):
        if not _empty(ids):
            d = val_data if part == "val" else data(ids)
            pred = np.clip(predict_dataset(model, d, batch_size=16, dtype=config.dtype), *clamp)
            for variant, m in evaluate_sequences(pred, d.targets[:, 0]).items():
                metrics[f"{part}.{variant}"] = m
    state = {**{f"temporal.{k}": v for k, v in temporal.state_dict().items()}, **backbone_state(backbone)}
    ckpt_config = {"input_dim": dim, "clamp": list(clamp), "joint": joint,
                   "backbone": spec_dict(backbone.spec), "train": config.to_dict()}
    return StageOutcome(model, result, fold, metrics, state, ckpt_config)


def _fit_fold(args) -> Tuple[str, Dict[str, Metrics], List[dict]]:
    root, stage, fold, config, options = args
    store = FeatureStore.open(root)
    fit = fit_lstm if stage == "lstm" else fit_bilinear
    outcome = fit(store, fold, config, **options)
    return fold.name, outcome.metrics, _history(outcome.result, stage, fold.name)


def parallel_map(fn: Callable, items: Sequence, jobs: int = 1) -> List:
    """Ordered map; ``jobs > 1`` uses forked worker processes."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items)), mp_context=get_context("fork")) as pool:
        return list(pool.map(fn, items))


def stage_items(store: FeatureStore, stage: str) -> List[Tuple[str, str]]:
    items = store.items("postoperative" if stage == "lstm" else None)
    if not items:
        raise ValueError(f"no events available for the {stage} stage")
    return items


def run_train_bilinear(features: str, out_dir: str, config: TrainConfig, source: str = "bilinear",
                       freeze_prefix: Optional[int] = None) -> Tuple[List[dict], List[dict]]:
    """80/20 event split; validation carved from the 80 %. Returns (history, metric records)."""
    store = FeatureStore.open(features)
    fold = make_folds(stage_items(store, "bilinear"), "split", config.seed, VAL_FRACTION)[0]
    outcome = fit_bilinear(store, fold, config, source, freeze_prefix)
    history = _history(outcome.result, "bilinear", fold.name)
    records = [m.to_record(stage="bilinear", fold=fold.name, partition=part, input=source)
               for part, m in outcome.metrics.items()]
    records.append({"stage": "bilinear", "fold": fold.name, "best_epoch": outcome.result.best_epoch,
                    "stopped_epoch": outcome.result.stopped_epoch, "initial_val_mse": outcome.result.initial_val_mse,
                    "best_val_mse": outcome.result.best_val_mse, "train_events": len(fold.train),
                    "val_events": len(fold.val), "test_events": len(fold.test)})
    _write_run(out_dir, outcome, "bilinear", history, records)
    return history, records


def run_train_lstm(features: str, out_dir: str, config: TrainConfig, joint: bool = False,
                   freeze_prefix: Optional[int] = None) -> Tuple[List[dict], List[dict]]:
    """Train on every postoperative event with a subject-stratified validation holdout."""
    store = FeatureStore.open(features)
    train_ids, val_ids = stratified_holdout(stage_items(store, "lstm"), VAL_FRACTION,
                                            np.random.default_rng(config.seed))
    fold = FoldSpec("all", tuple(train_ids), tuple(val_ids), ())
    outcome = fit_lstm(store, fold, config, joint, freeze_prefix)
    history = _history(outcome.result, "lstm", fold.name)
    records = [m.to_record(stage="lstm", fold=fold.name, partition=name.split(".")[0],
                           variant=name.split(".")[1]) for name, m in outcome.metrics.items()]
    records.append({"stage": "lstm", "fold": fold.name, "best_epoch": outcome.result.best_epoch,
                    "stopped_epoch": outcome.result.stopped_epoch, "initial_val_mse": outcome.result.initial_val_mse,
                    "best_val_mse": outcome.result.best_val_mse, "train_events": len(fold.train),
                    "val_events": len(fold.val)})
    _write_run(out_dir, outcome, "lstm", history, records)
    return history, records


def _write_run(out_dir, outcome: StageOutcome, kind: str, history, records) -> None:
    save_checkpoint(out_dir, outcome.checkpoint_state, kind, outcome.checkpoint_config)
    write_jsonl(os.path.join(out_dir, "history.jsonl"), history)
    write_jsonl(os.path.join(out_dir, "metrics.jsonl"), records)


def run_evaluate(features: str, protocol: str, stage: str, config: TrainConfig, jobs: int = 1,
                 options: Optional[dict] = None) -> Tuple[List[dict], List[dict]]:
    """Train and test one model per fold. Returns (history, metric records);
    the last records hold the mean over folds."""
    if stage not in ("lstm", "bilinear"):
        raise ValueError(f"stage must be 'lstm' or 'bilinear', got {stage!r}")
    store = FeatureStore.open(features)
    folds = make_folds(stage_items(store, stage), protocol, config.seed, VAL_FRACTION)
    tasks = [(os.path.abspath(features), stage, fold, config, dict(options or {})) for fold in folds]
    results = parallel_map(_fit_fold, tasks, jobs)
    history: List[dict] = []
    records: List[dict] = []
    per_variant: Dict[str, List[Metrics]] = {}
    for name, metrics, hist in results:
        history += hist
        for key, m in metrics.items():
            if not key.startswith("test"):
                continue
            variant = key.split(".", 1)[1] if "." in key else "per_frame"
            records.append(m.to_record(stage=stage, protocol=protocol, fold=name, variant=variant))
            per_variant.setdefault(variant, []).append(m)
    for variant, ms in per_variant.items():
        records.append(aggregate(ms).to_record(stage=stage, protocol=protocol, fold="mean", variant=variant))
    return history, records


# ---------------------------------------------------------------------------
# prediction


def load_clip(path: str, size: int = 224) -> np.ndarray:
    clip = load_tensor(path)
    if clip.shape != (SEQUENCE_LENGTH, size, size, 3):
        raise ValueError(f"{path}: clip must be ({SEQUENCE_LENGTH}, {size}, {size}, 3), got {clip.shape}")
    if not np.all(np.isfinite(clip)) or clip.min() < 0.0 or clip.max() > 1.0:
        raise ValueError(f"{path}: clip values must lie in [0, 1]")
    return clip


def run_predict(checkpoint: str, clip_path: str) -> np.ndarray:
    """32 clamped intensities: N-PASS level for an lstm checkpoint,
    per-frame facial intensity for a bilinear checkpoint."""
    kind, config, state = load_checkpoint(checkpoint)
    backbone = build_backbone(config["backbone"], state)
    clip = load_clip(clip_path, backbone.spec.input_size)
    if kind == "lstm":
        desc, _ = frame_features(backbone, clip, False)
        model = TemporalModel(config["input_dim"], clamp=tuple(config["clamp"]))
        model.load_state_dict({k[len("temporal."):]: v for k, v in state.items() if k.startswith("temporal.")})
        return model.predict(desc.astype(np.float64))
    if kind == "bilinear":
        desc, flat = frame_features(backbone, clip, config["input"] == "single-stream")
        head = BilinearHead(config["in_dim"], tuple(config["hidden"]), config["dropout"],
                            clamp=tuple(config["clamp"]))
        head.load_state_dict({k[len("head."):]: v for k, v in state.items() if k.startswith("head.")})
        x = flat if config["input"] == "single-stream" else desc
        return head.predict(x.astype(np.float64))
    raise ValueError(f"{checkpoint}: cannot predict with a {kind!r} checkpoint")
