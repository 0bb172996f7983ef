"""Per-frame, per-stream convolutional feature extractors.

The stand-in CNN keeps the spatial geometry of a VGG-style conv trunk (a 224
input becomes a 14x14 grid) at a fraction of the cost. Precomputed feature
maps from any other network can be imported through tensor files instead.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .autodiff import Tensor, TensorFormatError, load_tensor, no_grad, save_tensor
from .autodiff import ops
from .bilinear import STREAMS, FeatureMap, describe_batch
from .layers import Module

KINDS = ("standin-cnn", "feature-file")


@dataclass
class BackboneSpec:
    kind: str = "standin-cnn"
    input_size: int = 224
    channels: Tuple[int, ...] = (8, 16, 32, 32)
    freeze_prefix: int = 4
    seed: int = 0

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if self.kind not in KINDS:
            raise ValueError(f"backbone kind must be one of {KINDS}, got {self.kind!r}")
        if not 0 <= self.freeze_prefix <= self.n_layers:
            raise ValueError(f"freeze_prefix {self.freeze_prefix} outside [0, {self.n_layers}]")
        if self.input_size % (2 ** self.n_layers):
            raise ValueError(f"input size {self.input_size} not divisible by 2**{self.n_layers}")

    @property
    def n_layers(self) -> int:
        return len(self.channels)

    @property
    def grid(self) -> int:
        return self.input_size // (2 ** self.n_layers)

    @property
    def out_channels(self) -> int:
        return self.channels[-1]

    @property
    def descriptor_dim(self) -> int:
        return self.out_channels * self.out_channels


def stream_seed(seed: int, stream: str) -> int:
    return zlib.crc32(f"{seed}:{stream}".encode())


class StandinCNN(Module):
    """Blocks of 3x3 conv (padding 1) + relu + 2x2 max-pool, channels-last."""

    def __init__(self, spec: BackboneSpec, stream: str = "A", rng: Optional[np.random.Generator] = None):
        if stream not in STREAMS:
            raise ValueError(f"stream must be one of {STREAMS}, got {stream!r}")
        self.spec = spec
        self.stream = stream
        rng = np.random.default_rng(stream_seed(spec.seed, stream)) if rng is None else rng
        self.weights = []
        self.biases = []
        c_in = 3
        for k, c_out in enumerate(spec.channels):
            std = np.sqrt(2.0 / (9 * c_in))
            frozen = k < spec.freeze_prefix
            self.weights.append(Tensor(rng.normal(0.0, std, size=(3, 3, c_in, c_out)), requires_grad=not frozen))
            self.biases.append(Tensor(np.zeros(c_out), requires_grad=not frozen))
            c_in = c_out

    def named_parameters(self):
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            yield f"conv{k + 1}.weight", w
            yield f"conv{k + 1}.bias", b

    def set_freeze_prefix(self, n: int) -> None:
        if not 0 <= n <= len(self.weights):
            raise ValueError(f"freeze_prefix {n} outside [0, {len(self.weights)}]")
        self.spec.freeze_prefix = n
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            w.requires_grad = b.requires_grad = k >= n

    def __call__(self, x, start: int = 0, stop: Optional[int] = None) -> Tensor:
        """Run blocks ``start:stop`` on (N, H, W, C) input."""
        x = ops.as_tensor(x)
        for w, b in zip(self.weights[start:stop], self.biases[start:stop]):
            if not w.requires_grad:
                # frozen blocks run at the input's precision
                w, b = w.data.astype(x.dtype, copy=False), b.data.astype(x.dtype, copy=False)
            x = ops.maxpool2d(ops.relu(ops.conv2d(x, w, b, padding=1)), 2)
        return x


class TwoStreamBackbone(Module):
    """Independent stream A and stream B networks (no shared weights)."""

    def __init__(self, spec: Optional[BackboneSpec] = None):
        self.spec = spec or BackboneSpec()
        if self.spec.kind != "standin-cnn":
            raise ValueError("TwoStreamBackbone only builds stand-in CNNs; use load_feature_file for imports")
        self.streams = {s: StandinCNN(self.spec, s) for s in STREAMS}

    def named_parameters(self):
        for s in STREAMS:
            for name, p in self.streams[s].named_parameters():
                yield f"stream_{s}.{name}", p

    def set_freeze_prefix(self, n: int) -> None:
        for net in self.streams.values():
            net.set_freeze_prefix(n)

    def check_frames(self, frames: np.ndarray) -> np.ndarray:
        frames = np.asarray(frames)
        size = self.spec.input_size
        if frames.ndim == 3:
            frames = frames[None]
        if frames.ndim != 4 or frames.shape[1:] != (size, size, 3):
            raise ValueError(f"frames must be ({size}, {size}, 3) images, got shape {frames.shape}")
        return frames

    def feature_maps(self, frames, start: int = 0) -> Tuple[Tensor, Tensor]:
        """Both streams' outputs for a batch, from block ``start`` onward.

        With ``start == 0`` ``frames`` is (N, H, W, 3); otherwise it is a
        pair of cached activations entering block ``start``.
        """
        if start == 0:
            frames = self.check_frames(frames)
            return self.streams["A"](frames), self.streams["B"](frames)
        xa, xb = frames
        return self.streams["A"](xa, start=start), self.streams["B"](xb, start=start)

    def prefix(self, frames, stop: int) -> Tuple[np.ndarray, np.ndarray]:
        """Activations after the first ``stop`` blocks (no graph)."""
        frames = self.check_frames(frames)
        with no_grad():
            return (self.streams["A"](frames, stop=stop).data, self.streams["B"](frames, stop=stop).data)

    def describe(self, frames, batch_size: int = 32, dtype=np.float32) -> np.ndarray:
        """Normalized bilinear descriptors (N, C*C) for (N, H, W, 3) frames."""
        frames = self.check_frames(frames)
        out = []
        with no_grad():
            for lo in range(0, len(frames), batch_size):
                chunk = frames[lo:lo + batch_size].astype(dtype, copy=False)
                xa, xb = self.feature_maps(chunk)
                out.append(describe_batch(xa, xb).data)
        return np.concatenate(out, axis=0)


def extract_features(backbone: TwoStreamBackbone, frame, stream: str) -> FeatureMap:
    """FeatureMap of one (H, W, 3) frame in [0, 1] for ``stream``."""
    frame = np.asarray(frame)
    size = backbone.spec.input_size
    if frame.shape != (size, size, 3):
        raise ValueError(f"frame must be ({size}, {size}, 3), got {frame.shape}")
    if stream not in STREAMS:
        raise ValueError(f"stream must be one of {STREAMS}, got {stream!r}")
    with no_grad():
        values = backbone.streams[stream](frame[None]).data[0]
    return FeatureMap(stream, Tensor(values))


def load_feature_file(path, stream: str = "A") -> FeatureMap:
    """Import a precomputed (Hf, Wf, C) feature map from a tensor file."""
    values = load_tensor(path)
    if values.ndim != 3:
        raise TensorFormatError(f"rank {values.ndim} feature file, expected rank 3 (Hf, Wf, C)")
    return FeatureMap(stream, Tensor(values))


def save_feature_file(path, fmap: FeatureMap, dtype=None) -> None:
    save_tensor(path, fmap.values.data, dtype=dtype)
