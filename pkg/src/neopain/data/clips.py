"""Fixed-length key-frame clips built from annotated events."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterable, List, Tuple

import numpy as np

from .events import (MANIFEST_FIELDS, ManifestError, PainEvent, balance_events, event_from_fields,
                     event_to_fields, read_rows, segment_events)
from .frames import CLIP_LENGTH, INPUT_SIZE, crop_resize, frame_paths, keyframe_indices, load_frame, read_boxes


@dataclass(frozen=True)
class KeyFrameClip:
    """An event and the indices of its 32 key-frames (temporal order)."""

    event: PainEvent
    frame_indices: Tuple[int, ...]

    def __post_init__(self):
        if len(self.frame_indices) != CLIP_LENGTH:
            raise ValueError(f"{self.event.event_id}: clip needs {CLIP_LENGTH} frames, got {len(self.frame_indices)}")
        if list(self.frame_indices) != sorted(self.frame_indices):
            raise ValueError(f"{self.event.event_id}: key-frames out of temporal order")

    @property
    def event_id(self) -> str:
        return self.event.event_id

    @property
    def subject_id(self) -> str:
        return self.event.subject_id

    @property
    def facial_intensity(self) -> int:
        return self.event.facial_intensity

    @property
    def npass_intensity(self) -> int:
        return self.event.npass_total

    def load_frames(self, size: int = INPUT_SIZE, dtype=np.float32) -> np.ndarray:
        """(32, size, size, 3) face crops in [0, 1]."""
        paths = frame_paths(self.event.frame_pattern)
        boxes = read_boxes(self.event.box_file) if self.event.box_file else None
        out = np.empty((CLIP_LENGTH, size, size, 3), dtype=dtype)
        cache = {}
        for k, idx in enumerate(self.frame_indices):
            if idx not in cache:
                if idx >= len(paths):
                    raise ValueError(f"{self.event_id}: frame {idx} missing ({len(paths)} frames on disk)")
                box = boxes[idx] if boxes is not None else None
                cache[idx] = crop_resize(load_frame(paths[idx]), box, size)
            out[k] = cache[idx]
        return out


def build_clip(event: PainEvent) -> KeyFrameClip:
    paths = frame_paths(event.frame_pattern)
    if not paths:
        raise ValueError(f"{event.event_id}: no frames match {event.frame_pattern}")
    frames = [load_frame(p) for p in paths]
    if event.box_file:
        n_boxes = len(read_boxes(event.box_file))
        if n_boxes != len(frames):
            raise ValueError(f"{event.event_id}: {n_boxes} face boxes for {len(frames)} frames")
    return KeyFrameClip(event, tuple(keyframe_indices(frames)))


def preprocess(events: Iterable[PainEvent], balance: bool = False, seed: int = 0) -> List[KeyFrameClip]:
    """Segment (drop short events), optionally balance classes, cut 32-frame clips."""
    kept = segment_events(events)
    if balance:
        kept = balance_events(kept, seed)
    return [build_clip(ev) for ev in kept]


CLIP_FIELDS = MANIFEST_FIELDS + ("keyframes",)


def write_clips(path, clips: Iterable[KeyFrameClip]) -> None:
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# " + "\t".join(CLIP_FIELDS) + "\n")
        for clip in clips:
            fields = event_to_fields(clip.event, base) + [",".join(map(str, clip.frame_indices))]
            fh.write("\t".join(fields) + "\n")


def read_clips(path) -> List[KeyFrameClip]:
    base = os.path.dirname(os.path.abspath(path))
    clips = []
    for lineno, parts in read_rows(path, (11,)):
        try:
            clips.append(KeyFrameClip(event_from_fields(parts[:10], base),
                                      tuple(int(v) for v in parts[10].split(","))))
        except ValueError as exc:
            raise ManifestError(f"{path}:{lineno}: {exc}") from None
    return clips


def level_frame_counts(clips: Iterable[KeyFrameClip]) -> dict:
    """Key-frames per N-PASS level."""
    counts: dict = {}
    for clip in clips:
        counts[clip.npass_intensity] = counts.get(clip.npass_intensity, 0) + CLIP_LENGTH
    return dict(sorted(counts.items()))
