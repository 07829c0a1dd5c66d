"""Shared data model: videos, labels, activation records, schedules and configs."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from leaps.errors import DimensionError, FormatError, NonFiniteError, RangeError, ShapeError, VersionError

DEFAULT_RANGE = (-3.0, 3.0)
DISTANCES = ("l2", "l1", "cosine", "jvs")


@dataclass(frozen=True)
class VideoTensor:
    """A C x T x H x W video with the interval its values must lie in."""

    data: torch.Tensor
    value_range: tuple[float, float] = DEFAULT_RANGE

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return tuple(self.data.shape)  # type: ignore[return-value]

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def frames(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[2]

    @property
    def width(self) -> int:
        return self.data.shape[3]

    def clamped(self) -> "VideoTensor":
        lo, hi = self.value_range
        return replace(self, data=self.data.clamp(lo, hi))


@dataclass(frozen=True)
class ClassLabel:
    index: int
    name: str = ""


@dataclass(frozen=True)
class ActivationRecord:
    """One captured layer representation with its per-channel statistics.

    ``tensor`` carries a leading batch axis: ``(B, C', T', H', W')`` for
    ``conv_volume`` records and ``(B, token_dim, num_tokens)`` for
    ``patch_tokens`` records. ``channel_mean``/``channel_var`` are ``(B, C')``
    where C' is the row count of the channel axis (axis 1).
    """

    layer_id: str
    kind: str
    tensor: torch.Tensor
    channel_mean: torch.Tensor
    channel_var: torch.Tensor
    patch: tuple[int, int, int] | None = None
    grid: tuple[int, int, int] | None = None

    @classmethod
    def from_tensor(cls, layer_id: str, tensor: torch.Tensor, kind: str = "conv_volume",
                    patch: tuple[int, int, int] | None = None,
                    grid: tuple[int, int, int] | None = None) -> "ActivationRecord":
        if kind not in ("conv_volume", "patch_tokens"):
            raise ValueError(f"unknown record kind {kind!r}")
        if kind == "patch_tokens":
            if patch is None or grid is None:
                raise ShapeError("patch_tokens records need patch size and token grid")
            vol = math.prod(patch)
            if tensor.dim() != 3 or tensor.shape[1] % vol or tensor.shape[2] != math.prod(grid):
                raise ShapeError(
                    f"token tensor {tuple(tensor.shape)} incompatible with patch {patch} and grid {grid}")
        mean, var = channel_stats(tensor)
        return cls(layer_id, kind, tensor, mean, var, patch, grid)

    @property
    def channels(self) -> int:
        return self.tensor.shape[1]


def channel_stats(t: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-sample channel mean and population variance over every axis past 1."""
    flat = t.flatten(2)
    return flat.mean(-1), flat.var(-1, unbiased=False)


@dataclass(frozen=True)
class PrimingSchedule:
    """Ordered priming layers with linearly interpolated weights.

    The first ``floor(subset_fraction * L)`` layers are active; the remaining
    layers keep their weights but drop out of the priming sum.
    """

    layer_ids: tuple[str, ...]
    lambda_first: float = 1.0
    lambda_last: float = 1.0
    subset_fraction: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "layer_ids", tuple(self.layer_ids))
        if not self.layer_ids:
            raise ValueError("priming schedule needs at least one layer")
        for name, lam in (("lambda_first", self.lambda_first), ("lambda_last", self.lambda_last)):
            if not 0.0 < lam <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {lam}")
        if not 0.0 < self.subset_fraction <= 1.0:
            raise ValueError(f"subset_fraction must lie in (0, 1], got {self.subset_fraction}")
        if self.num_active == 0:
            raise ValueError(
                f"subset_fraction={self.subset_fraction} retains no layers out of {len(self.layer_ids)}")

    @property
    def num_layers(self) -> int:
        return len(self.layer_ids)

    @property
    def weights(self) -> tuple[float, ...]:
        n = self.num_layers
        if n == 1:
            return (self.lambda_first,)
        step = (self.lambda_last - self.lambda_first) / (n - 1)
        return tuple(self.lambda_first + i * step for i in range(n))

    @property
    def num_active(self) -> int:
        # small epsilon guards against 0.6 * 5 landing on 2.999...
        return int(math.floor(self.subset_fraction * self.num_layers + 1e-9))

    @property
    def active(self) -> tuple[tuple[str, float], ...]:
        return tuple(zip(self.layer_ids, self.weights))[: self.num_active]


@dataclass(frozen=True)
class ObjectiveConfig:
    distance: str = "jvs"
    delta: float = 1.0
    reg_scale: float = 5e-3
    enable_priming: bool = True
    enable_coherence: bool = True
    enable_diversity: bool = True
    enable_ce: bool = True
    num_iterations: int = 2000
    base_lr: float = 0.2
    snapshot_every: int = 0  # 0 means every 10% of num_iterations

    def __post_init__(self):
        if self.distance not in DISTANCES:
            raise ValueError(f"distance must be one of {DISTANCES}, got {self.distance!r}")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        if self.reg_scale < 0:
            raise ValueError("reg_scale must be non-negative")
        if not (self.enable_priming or self.enable_coherence or self.enable_diversity or self.enable_ce):
            raise ValueError("at least one loss term must be enabled")
        if self.num_iterations < 1:
            raise ValueError("num_iterations must be >= 1")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if self.snapshot_every < 0:
            raise ValueError("snapshot_every must be >= 0")

    @property
    def snapshot_interval(self) -> int:
        return self.snapshot_every or max(1, self.num_iterations // 10)


@dataclass
class RunRecord:
    run_id: str
    config: dict[str, Any]
    seed: int
    loss_trace: dict[str, list[float]]
    score_trace: list[float]
    snapshots: list[tuple[int, VideoTensor]]
    final_video: VideoTensor
    lr_trace: list[float] = field(default_factory=list)
    metrics: dict[str, Any] = field(default_factory=dict)
    failed: str | None = None

    @property
    def num_recorded(self) -> int:
        return len(self.loss_trace.get("total", []))


def validate_video(v: VideoTensor) -> None:
    """Raise unless ``v`` is a finite, in-range C x T x H x W tensor."""
    d = v.data
    if d.dim() != 4 or any(s < 1 for s in d.shape):
        raise DimensionError(f"video must be C x T x H x W with all dims >= 1, got {tuple(d.shape)}")
    if not torch.isfinite(d).all():
        raise NonFiniteError("video contains NaN or Inf")
    lo, hi = v.value_range
    if d.min().item() < lo or d.max().item() > hi:
        raise RangeError(
            f"video values [{d.min().item():.4g}, {d.max().item():.4g}] outside range [{lo}, {hi}]")


def resample_video(v: VideoTensor | torch.Tensor, T: int, H: int, W: int):
    """Corner-aligned trilinear resampling over (T, H, W).

    Accepts a VideoTensor, a 4-D tensor, or a batched 5-D tensor and returns the
    same kind. Matching sizes return the input unchanged.
    """
    if min(T, H, W) < 1:
        raise DimensionError(f"target size must be >= 1 per axis, got {(T, H, W)}")
    data = v.data if isinstance(v, VideoTensor) else v
    if data.dim() not in (4, 5):
        raise DimensionError(f"expected a 4-D or 5-D tensor, got {data.dim()}-D")
    if tuple(data.shape[-3:]) == (T, H, W):
        return v
    x = data if data.dim() == 5 else data.unsqueeze(0)
    out = F.interpolate(x, size=(T, H, W), mode="trilinear", align_corners=True)
    if data.dim() == 4:
        out = out.squeeze(0)
    if isinstance(v, VideoTensor):
        return replace(v, data=out)
    return out


_VID_MAGIC = b"LEAPSVID"
_VID_VERSION = 1


def write_video(path: str | Path, v: VideoTensor | torch.Tensor) -> None:
    data = v.data if isinstance(v, VideoTensor) else v
    arr = data.detach().cpu().numpy().astype("<f4", copy=False)
    if arr.ndim != 4:
        raise DimensionError("only single C x T x H x W videos can be written")
    with open(path, "wb") as f:
        f.write(_VID_MAGIC)
        f.write(struct.pack("<5I", _VID_VERSION, *arr.shape))
        f.write(np.ascontiguousarray(arr).tobytes())


def read_video(path: str | Path, value_range: Sequence[float] = DEFAULT_RANGE) -> VideoTensor:
    raw = Path(path).read_bytes()
    if len(raw) < 28 or raw[:8] != _VID_MAGIC:
        raise FormatError(f"{path}: not a LEAPSVID file")
    version, c, t, h, w = struct.unpack_from("<5I", raw, 8)
    if version != _VID_VERSION:
        raise VersionError(f"{path}: unsupported video version {version}")
    n = c * t * h * w
    if len(raw) != 28 + 4 * n:
        raise FormatError(f"{path}: expected {n} floats, file holds {(len(raw) - 28) / 4:g}")
    arr = np.frombuffer(raw, dtype="<f4", offset=28).reshape(c, t, h, w)
    return VideoTensor(torch.from_numpy(arr.copy()), tuple(value_range))
