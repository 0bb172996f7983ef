"""Synthetic postoperative corpus with a planted intensity cue.

Events reproduce the published corpus shape: 101 pain and 86 no-pain
events over 9 subjects, with per-level event counts that give the published
key-frame histogram once every event is cut to 32 key-frames. Each frame is a
small RGB image holding a face-like ellipse. A dark region in the lower face
grows linearly with the event's N-PASS level and pulses over time. Skin tone,
brightness and face placement vary per subject.
"""

from __future__ import annotations

import os
import zlib
from typing import Dict, List, Optional, Tuple

import numpy as np
from PIL import Image

from .events import PainEvent, with_paths, write_manifest
from .frames import write_boxes

# events per N-PASS level; x32 key-frames -> 1728/160/512/352/928/960/352/992
LEVEL_EVENT_COUNTS: Dict[int, int] = {0: 54, 1: 5, 2: 16, 3: 11, 4: 29, 5: 30, 6: 11, 7: 31}
PAIN_LEVEL = 4
N_SUBJECTS = 9
FRAME_SIZE = 64
FPS = 4.0
MIN_DURATION, MAX_DURATION = 9.0, 14.0


def event_rng(seed: int, key: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(key.encode())])


def cue_fraction(level: float) -> float:
    """Fraction of the face box covered by the dark region at a given level."""
    return 0.03 + 0.04 * level


def synth_fixture(seed: int = 0, n_subjects: int = N_SUBJECTS, max_events: Optional[int] = None) -> List[PainEvent]:
    """Event records (no frame paths yet), deterministic in ``seed``.

    ``max_events`` keeps only the first events of the shuffled corpus, for
    quick runs; the full corpus has the published level counts.
    """
    rng = np.random.default_rng(seed)
    levels = np.array([lvl for lvl, n in sorted(LEVEL_EVENT_COUNTS.items()) for _ in range(n)])
    levels = levels[rng.permutation(len(levels))]
    if max_events is not None:
        if max_events < 1:
            raise ValueError(f"max_events must be positive, got {max_events}")
        levels = levels[:max_events]
    subjects = [f"S{k + 1:02d}" for k in range(n_subjects)]
    clock = {s: 0.0 for s in subjects}
    events = []
    for k, level in enumerate(levels):
        subject = subjects[k % n_subjects]
        pain = level >= PAIN_LEVEL
        facial = (2 if rng.random() < 0.15 else 1) if pain else 0
        duration = MIN_DURATION if rng.random() < 0.05 else round(float(rng.uniform(MIN_DURATION, MAX_DURATION)), 1)
        start = round(clock[subject] + float(rng.uniform(5.0, 60.0)), 1)
        clock[subject] = start + duration
        events.append(PainEvent(
            subject_id=subject, event_id=f"E{k + 1:04d}", phase="postoperative",
            pain_class="pain" if pain else "no-pain", facial_score_raw=facial, npass_total=int(level),
            start_s=start, end_s=round(start + duration, 1),
        ))
    return events


def _subject_look(seed: int, subject: str) -> dict:
    rng = event_rng(seed, "look:" + subject)
    return {
        "skin": np.array([0.86, 0.66, 0.55]) * rng.uniform(0.85, 1.08, size=3),
        "brightness": rng.uniform(0.85, 1.1),
        "face": int(rng.integers(40, 49)),
        "cx": rng.uniform(-4, 4),
        "cy": rng.uniform(-4, 4),
    }


def _ellipse(yy, xx, cy, cx, ry, rx) -> np.ndarray:
    """Soft (about 1 px edge) filled ellipse mask."""
    d = np.sqrt(((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2)
    return np.clip((1.0 - d) * min(rx, ry) + 0.5, 0.0, 1.0)


def render_event(event: PainEvent, seed: int) -> Tuple[List[np.ndarray], List[Tuple[int, int, int, int]]]:
    """uint8 (H, W, 3) frames and per-frame face boxes for one event."""
    look = _subject_look(seed, event.subject_id)
    rng = event_rng(seed, event.event_id)
    n = int(round(event.duration * FPS))
    size = look["face"]
    yy, xx = np.mgrid[0:FRAME_SIZE, 0:FRAME_SIZE].astype(np.float64)
    background = 0.25 + 0.15 * (yy / FRAME_SIZE)[..., None] + 0.05 * rng.standard_normal((FRAME_SIZE, FRAME_SIZE, 1))
    area = cue_fraction(event.npass_total)
    phase = rng.uniform(0, 2 * np.pi)
    period = rng.uniform(6, 14)
    cx0 = FRAME_SIZE / 2 + look["cx"]
    cy0 = FRAME_SIZE / 2 + look["cy"]
    jitter = np.zeros(2)
    frames, boxes = [], []
    for t in range(n):
        if rng.random() < 0.35:
            jitter = np.clip(jitter + rng.integers(-2, 3, size=2), -3, 3)
        cy, cx = cy0 + jitter[0], cx0 + jitter[1]
        half = size / 2
        face = _ellipse(yy, xx, cy, cx, half, half * 0.85)
        shade = 1.0 - 0.15 * (yy - cy) / size
        img = background * (1 - face[..., None]) + (look["skin"] * shade[..., None]) * face[..., None]
        for ex in (-0.2, 0.2):
            eye = _ellipse(yy, xx, cy - 0.15 * size, cx + ex * size, 0.05 * size, 0.08 * size)
            img = img * (1 - eye[..., None]) + 0.1 * eye[..., None]
        frac = area * (1.0 + 0.1 * np.sin(2 * np.pi * t / period + phase))
        rx = np.sqrt(frac * size * size / (np.pi * 0.6))
        cue = _ellipse(yy, xx, cy + 0.2 * size, cx, 0.6 * rx, rx)
        img = img * (1 - cue[..., None]) + np.array([0.3, 0.1, 0.1]) * cue[..., None]
        img = img * look["brightness"] + 0.01 * rng.standard_normal(img.shape)
        frames.append((np.clip(img, 0.0, 1.0) * 255).round().astype(np.uint8))
        x0 = int(np.clip(round(cx - half), 0, FRAME_SIZE - size))
        y0 = int(np.clip(round(cy - half), 0, FRAME_SIZE - size))
        boxes.append((x0, y0, size, size))
    return frames, boxes


def write_fixture(out_dir: str, seed: int = 0, n_subjects: int = N_SUBJECTS,
                  events: Optional[List[PainEvent]] = None, max_events: Optional[int] = None) -> str:
    """Render all events as PNG frames plus box files and write ``manifest.tsv``."""
    events = synth_fixture(seed, n_subjects, max_events) if events is None else events
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for ev in events:
        frames, boxes = render_event(ev, seed)
        frame_dir = os.path.join(out_dir, "frames", ev.event_id)
        os.makedirs(frame_dir, exist_ok=True)
        for t, frame in enumerate(frames):
            Image.fromarray(frame).save(os.path.join(frame_dir, f"{t:04d}.png"), optimize=False)
        box_path = os.path.join(out_dir, "boxes", f"{ev.event_id}.txt")
        os.makedirs(os.path.dirname(box_path), exist_ok=True)
        write_boxes(box_path, boxes)
        written.append(with_paths(ev, os.path.join(frame_dir, "%04d.png"), box_path))
    manifest = os.path.join(out_dir, "manifest.tsv")
    write_manifest(manifest, written)
    return manifest
