"""Event annotations, key-frame clips, augmentation and the synthetic corpus."""

from .clips import KeyFrameClip, build_clip, level_frame_counts, preprocess, read_clips, write_clips
from .events import (PainEvent, balance_events, map_labels, read_manifest, segment_events,
                     write_manifest)
from .frames import (AugmentParams, augment, augment_clip, apply_augment, crop_resize, keyframe_indices,
                     sample_augment_params, select_keyframes)
from .synth import synth_fixture, write_fixture

__all__ = [
    "AugmentParams", "KeyFrameClip", "PainEvent", "apply_augment", "augment", "augment_clip", "balance_events",
    "build_clip", "crop_resize", "keyframe_indices", "level_frame_counts", "map_labels", "preprocess",
    "read_clips", "read_manifest", "sample_augment_params", "segment_events", "select_keyframes",
    "synth_fixture", "write_clips", "write_fixture", "write_manifest",
]
