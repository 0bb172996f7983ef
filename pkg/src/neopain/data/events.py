"""Annotated pain events: label mapping, segmentation, balancing, manifests."""

from __future__ import annotations

import logging
import os
from collections import defaultdict
from dataclasses import dataclass, replace
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

PHASES = ("acute", "postoperative")
CLASSES = ("pain", "no-pain")
MIN_EVENT_SECONDS = 9.0
NPASS_RANGE = (0, 7)
FACIAL_RAW = (0, 1, 2)

MANIFEST_FIELDS = ("subject_id", "event_id", "phase", "class", "facial_score_raw", "npass_total",
                   "start_s", "end_s", "frame_path_pattern", "box_file")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class PainEvent:
    subject_id: str
    event_id: str
    phase: str
    pain_class: str
    facial_score_raw: int
    npass_total: int
    start_s: float
    end_s: float
    frame_pattern: str = ""
    box_file: Optional[str] = None

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ValueError(f"{self.event_id}: phase must be one of {PHASES}, got {self.phase!r}")
        if self.pain_class not in CLASSES:
            raise ValueError(f"{self.event_id}: class must be one of {CLASSES}, got {self.pain_class!r}")
        map_labels(self.facial_score_raw, self.npass_total)

    @property
    def duration(self) -> float:
        return self.end_s - self.start_s

    @property
    def facial_intensity(self) -> int:
        return map_labels(self.facial_score_raw, self.npass_total)[0]


def map_labels(facial_raw: int, npass_raw: int) -> Tuple[int, int]:
    """Facial score 0/1/2 -> 0/1 (moderate and strong merge into pain);
    N-PASS total passes through."""
    if facial_raw not in FACIAL_RAW or isinstance(facial_raw, bool):
        raise ValueError(f"facial score must be one of {FACIAL_RAW}, got {facial_raw!r}")
    lo, hi = NPASS_RANGE
    if int(npass_raw) != npass_raw or not lo <= npass_raw <= hi:
        raise ValueError(f"N-PASS intensity must be an integer in [{lo}, {hi}], got {npass_raw!r}")
    return (0 if facial_raw == 0 else 1), int(npass_raw)


def segment_events(annotations: Iterable[PainEvent], min_seconds: float = MIN_EVENT_SECONDS) -> List[PainEvent]:
    """Keep events lasting at least ``min_seconds`` (boundary inclusive)."""
    annotations = list(annotations)
    by_subject = defaultdict(list)
    for ev in annotations:
        if ev.end_s <= ev.start_s:
            raise ValueError(f"{ev.event_id}: end {ev.end_s} <= start {ev.start_s}")
        by_subject[ev.subject_id].append(ev)
    for subject, evs in by_subject.items():
        evs = sorted(evs, key=lambda e: e.start_s)
        for a, b in zip(evs, evs[1:]):
            if b.start_s < a.end_s:
                raise ValueError(f"subject {subject}: events {a.event_id} and {b.event_id} overlap")
    kept = []
    for ev in annotations:
        if ev.duration < min_seconds:
            logger.info("dropping %s: %.2f s shorter than %.1f s", ev.event_id, ev.duration, min_seconds)
            continue
        kept.append(ev)
    return kept


def balance_events(events: Sequence[PainEvent], seed: int) -> List[PainEvent]:
    """Randomly under-sample the majority class down to the minority count.

    The retained events keep their input order.
    """
    groups = {c: [k for k, ev in enumerate(events) if ev.pain_class == c] for c in CLASSES}
    empty = [c for c, idx in groups.items() if not idx]
    if empty:
        raise ValueError(f"cannot balance: no {empty[0]!r} events")
    target = min(len(idx) for idx in groups.values())
    rng = np.random.default_rng(seed)
    keep = set()
    for c in CLASSES:
        idx = groups[c]
        if len(idx) > target:
            idx = sorted(rng.choice(idx, size=target, replace=False).tolist())
        keep.update(idx)
    return [ev for k, ev in enumerate(events) if k in keep]


# ---------------------------------------------------------------------------
# manifest files


def _resolve(base: str, path: str) -> str:
    return path if not path or os.path.isabs(path) else os.path.join(base, path)


def event_from_fields(parts: Sequence[str], base: str) -> PainEvent:
    """Build an event from the first 9-10 manifest fields."""
    return PainEvent(
        subject_id=parts[0], event_id=parts[1], phase=parts[2], pain_class=parts[3],
        facial_score_raw=int(parts[4]), npass_total=int(parts[5]),
        start_s=float(parts[6]), end_s=float(parts[7]),
        frame_pattern=_resolve(base, parts[8]),
        box_file=_resolve(base, parts[9]) if len(parts) > 9 and parts[9] else None,
    )


def event_to_fields(ev: PainEvent, base: str) -> List[str]:
    def rel(p):
        return os.path.relpath(os.path.abspath(p), base) if p else ""

    return [ev.subject_id, ev.event_id, ev.phase, ev.pain_class, str(ev.facial_score_raw),
            str(ev.npass_total), f"{ev.start_s:.3f}", f"{ev.end_s:.3f}", rel(ev.frame_pattern),
            rel(ev.box_file)]


def read_rows(path, n_fields: Tuple[int, ...]):
    """Yield (lineno, fields) for data lines of a tab-separated file."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) not in n_fields:
                raise ManifestError(f"{path}:{lineno}: expected {' or '.join(map(str, n_fields))} "
                                    f"tab-separated fields, got {len(parts)}")
            yield lineno, parts


def read_manifest(path) -> List[PainEvent]:
    """Parse a tab-separated manifest; relative paths resolve against its directory."""
    base = os.path.dirname(os.path.abspath(path))
    events = []
    for lineno, parts in read_rows(path, (9, 10)):
        try:
            events.append(event_from_fields(parts, base))
        except ValueError as exc:
            raise ManifestError(f"{path}:{lineno}: {exc}") from None
    ids = [ev.event_id for ev in events]
    if len(set(ids)) != len(ids):
        raise ManifestError(f"{path}: duplicate event ids")
    return events


def write_manifest(path, events: Iterable[PainEvent]) -> None:
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# " + "\t".join(MANIFEST_FIELDS) + "\n")
        for ev in events:
            fh.write("\t".join(event_to_fields(ev, base)) + "\n")


def with_paths(ev: PainEvent, frame_pattern: str, box_file: Optional[str]) -> PainEvent:
    return replace(ev, frame_pattern=frame_pattern, box_file=box_file)
