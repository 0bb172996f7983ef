"""Frame-level processing: key-frame selection, face crops, augmentation."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image
from scipy import ndimage

from ..autodiff import load_tensor

CLIP_LENGTH = 32
INPUT_SIZE = 224
MAX_ROTATION_DEG = 30.0
BRIGHTNESS_RANGE = (0.75, 1.25)
FLIP_PROBABILITY = 0.5


# ---------------------------------------------------------------------------
# frame files


def frame_paths(pattern: str) -> List[str]:
    """Existing files for a printf-style pattern (``frames/%04d.png``), counting from 0."""
    paths = []
    while True:
        path = pattern % len(paths)
        if not os.path.exists(path):
            return paths
        paths.append(path)


def load_frame(path) -> np.ndarray:
    """Image file -> uint8 (H, W, 3); ``.bten`` tensor file -> float (H, W, 3) in [0, 1]."""
    if str(path).endswith(".bten"):
        arr = load_tensor(path)
    else:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"))
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"{path}: expected an (H, W, 3) frame, got {arr.shape}")
    return arr


def read_boxes(path) -> List[Tuple[int, int, int, int]]:
    """One ``x y w h`` line per frame."""
    boxes = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 'x y w h', got {line.strip()!r}")
            boxes.append(tuple(int(p) for p in parts))
    return boxes


def write_boxes(path, boxes: Sequence[Tuple[int, int, int, int]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for box in boxes:
            fh.write(" ".join(str(int(v)) for v in box) + "\n")


def to_unit(frame: np.ndarray) -> np.ndarray:
    """uint8 -> float in [0, 1]; float input is returned as float64."""
    frame = np.asarray(frame)
    if frame.dtype == np.uint8:
        return frame.astype(np.float64) / 255.0
    return frame.astype(np.float64, copy=False)


# ---------------------------------------------------------------------------
# key-frames


def motion_scores(frames: Sequence[np.ndarray]) -> np.ndarray:
    """Mean absolute difference of each frame from its predecessor; frame 0 scores 0."""
    scores = np.zeros(len(frames))
    for k in range(1, len(frames)):
        scores[k] = np.mean(np.abs(to_unit(frames[k]) - to_unit(frames[k - 1])))
    return scores


def keyframe_indices(frames: Sequence[np.ndarray], count: int = CLIP_LENGTH) -> List[int]:
    """Indices of ``count`` key-frames, in temporal order.

    Frames with nonzero motion score are candidates; the top ``count`` by score
    are taken (earlier frame wins ties). Any shortfall is filled by uniform
    temporal sampling of the remaining frames, then by repeating the last frame.
    """
    n = len(frames)
    if n == 0:
        raise ValueError("cannot select key-frames from an empty event")
    scores = motion_scores(frames)
    candidates = [k for k in np.argsort(-scores, kind="stable") if scores[k] > 0]
    chosen = sorted(int(k) for k in candidates[:count])
    if len(chosen) < count:
        taken = set(chosen)
        rest = [k for k in range(n) if k not in taken]
        need = min(count - len(chosen), len(rest))
        if need:
            picks = np.unique(np.round(np.linspace(0, len(rest) - 1, need)).astype(int))
            chosen = sorted(chosen + [rest[p] for p in picks])
    chosen += [n - 1] * (count - len(chosen))
    return chosen


def select_keyframes(frames: Sequence[np.ndarray], count: int = CLIP_LENGTH) -> List[np.ndarray]:
    return [frames[k] for k in keyframe_indices(frames, count)]


# ---------------------------------------------------------------------------
# crop + resize


def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling with pixel-center alignment and edge clamping."""
    image = np.asarray(image, dtype=np.float64)
    in_h, in_w = image.shape[:2]

    def axis(n_in, n_out):
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0.0, n_in - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    y0, y1, wy = axis(in_h, out_h)
    x0, x1, wx = axis(in_w, out_w)
    wy = wy[:, None, None] if image.ndim == 3 else wy[:, None]
    wx = wx[None, :, None] if image.ndim == 3 else wx[None, :]
    top = image[y0][:, x0] * (1 - wx) + image[y0][:, x1] * wx
    bottom = image[y1][:, x0] * (1 - wx) + image[y1][:, x1] * wx
    return top * (1 - wy) + bottom * wy


def crop_resize(frame: np.ndarray, box: Optional[Tuple[int, int, int, int]] = None,
                size: int = INPUT_SIZE) -> np.ndarray:
    """Crop ``box`` (x, y, w, h) from the frame (whole frame when None) and
    resample to (size, size, 3) floats in [0, 1]."""
    img = to_unit(frame)
    if box is not None:
        x, y, w, h = (int(v) for v in box)
        if w <= 0 or h <= 0:
            raise ValueError(f"degenerate face box {box}")
        fh, fw = img.shape[:2]
        if x < 0 or y < 0 or x + w > fw or y + h > fh:
            raise ValueError(f"face box {box} outside {fw}x{fh} frame")
        img = img[y:y + h, x:x + w]
    if img.shape[:2] == (size, size):
        return np.clip(img, 0.0, 1.0)
    return np.clip(bilinear_resize(img, size, size), 0.0, 1.0)


# ---------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class AugmentParams:
    angle_deg: float = 0.0
    flip: bool = False
    brightness: float = 1.0

    def to_dict(self) -> dict:
        return asdict(self)


def sample_augment_params(rng: np.random.Generator) -> AugmentParams:
    return AugmentParams(
        angle_deg=float(rng.uniform(-MAX_ROTATION_DEG, MAX_ROTATION_DEG)),
        flip=bool(rng.random() < FLIP_PROBABILITY),
        brightness=float(rng.uniform(*BRIGHTNESS_RANGE)),
    )


def apply_augment(frame: np.ndarray, params: AugmentParams) -> np.ndarray:
    """Rotate about the center (edge pixels replicated), flip, scale brightness, clip."""
    out = to_unit(frame)
    if params.angle_deg:
        out = ndimage.rotate(out, params.angle_deg, axes=(1, 0), reshape=False, order=1, mode="nearest")
    if params.flip:
        out = out[:, ::-1]
    return np.clip(out * params.brightness, 0.0, 1.0)


def augment(frame: np.ndarray, rng: np.random.Generator) -> Tuple[np.ndarray, AugmentParams]:
    params = sample_augment_params(rng)
    return apply_augment(frame, params), params


def augment_clip(frames: Sequence[np.ndarray], rng: np.random.Generator,
                 per_clip: bool = False) -> Tuple[List[np.ndarray], List[AugmentParams]]:
    """Augment each frame independently, or with one parameter draw for the whole clip."""
    if per_clip:
        params = [sample_augment_params(rng)] * len(frames)
    else:
        params = [sample_augment_params(rng) for _ in frames]
    return [apply_augment(f, p) for f, p in zip(frames, params)], params
