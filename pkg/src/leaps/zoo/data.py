"""Procedural moving-shapes videos with temporal class semantics."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import torch

CLASS_NAMES = (
    "square-moving-right",
    "square-moving-left",
    "circle-moving-up",
    "circle-moving-down",
    "square-growing",
    "square-rotating",
)


@dataclass(frozen=True)
class SyntheticVideoSpec:
    num_classes: int = 6
    frames: int = 8
    size: int = 32
    channels: int = 3
    speed: float = 2.0          # mean pixels/frame for the motion classes
    speed_jitter: float = 0.75  # per-step speed factor drawn from 1 +- jitter
    noise: float = 0.05

    def __post_init__(self):
        if self.num_classes != len(CLASS_NAMES):
            raise ValueError(f"the generator defines exactly {len(CLASS_NAMES)} classes")
        if self.channels != 3:
            raise ValueError("videos are RGB")


@dataclass(frozen=True)
class ClipParams:
    """Per-frame geometry of one clip; arrays have one entry per frame."""

    shape: str                # "square" | "circle"
    cy: np.ndarray
    cx: np.ndarray
    side: np.ndarray          # square side / circle diameter
    angle: np.ndarray         # radians
    fg: np.ndarray
    bg: np.ndarray

    def reversed(self) -> "ClipParams":
        return replace(self, cy=self.cy[::-1].copy(), cx=self.cx[::-1].copy(),
                       side=self.side[::-1].copy(), angle=self.angle[::-1].copy())


def _speed_profile(rng, spec):
    steps = spec.speed * rng.uniform(1 - spec.speed_jitter, 1 + spec.speed_jitter, spec.frames - 1)
    return np.concatenate([[0.0], np.cumsum(steps)])


def sample_params(label: int, rng: np.random.Generator, spec: SyntheticVideoSpec) -> ClipParams:
    T, S = spec.frames, spec.size
    fg = rng.uniform(0.6, 1.0, 3)
    bg = rng.uniform(0.05, 0.4, 3)
    zeros = np.zeros(T)
    name = CLASS_NAMES[label]
    if label in (0, 1, 2, 3):
        shape = "square" if label < 2 else "circle"
        side = np.full(T, rng.uniform(7.0, 10.0))
        m = side[0] / 2 + 1
        path = _speed_profile(rng, spec)
        room = S - 2 * m
        u = rng.uniform()
        if path[-1] >= room:
            # fast draws are compressed to fit the frame; the start is then forced
            path = path * (room / path[-1])
            start = m if name.endswith(("right", "down")) else S - m
        elif name.endswith(("right", "down")):
            # start positions are chosen so per-frame marginals of the two directions coincide
            start = m + u * (S - m - path[-1] - m)
        else:
            start = m + path[-1] + u * (S - m - (m + path[-1]))
        along = start + path if name.endswith(("right", "down")) else start - path
        across = np.full(T, rng.uniform(m, S - m))
        cy, cx = (across, along) if label < 2 else (along, across)
        angle = zeros if shape == "circle" else np.full(T, rng.uniform(0, 0.2))
        return ClipParams(shape, cy, cx, side, angle, fg, bg)
    centre = rng.uniform(12.0, S - 12.0, 2)
    cy, cx = np.full(T, centre[0]), np.full(T, centre[1])
    if name == "square-growing":
        growth = rng.uniform(0.8, 1.8, T - 1)
        side = rng.uniform(4.0, 6.0) + np.concatenate([[0.0], np.cumsum(growth)])
        return ClipParams("square", cy, cx, side, np.full(T, rng.uniform(0, 0.2)), fg, bg)
    turn = rng.uniform(0.1, 0.2, T - 1)
    angle = rng.uniform(0, np.pi / 2) + np.concatenate([[0.0], np.cumsum(turn)])
    return ClipParams("square", cy, cx, np.full(T, rng.uniform(9.0, 12.0)), angle, fg, bg)


def label_of(p: ClipParams) -> int | None:
    """Recover the class from clip geometry; None if it matches no class."""
    dx, dy = np.diff(p.cx), np.diff(p.cy)
    ds, da = np.diff(p.side), np.diff(p.angle)
    eps = 1e-6
    moving = np.abs(dx).max() > eps or np.abs(dy).max() > eps
    if not moving:
        if p.shape != "square":
            return None
        if (ds > eps).all() and np.abs(da).max() <= eps:
            return 4
        if (da > eps).all() and np.abs(ds).max() <= eps:
            return 5
        return None
    if np.abs(ds).max() > eps or np.abs(da).max() > eps:
        return None
    if p.shape == "square" and np.abs(dy).max() <= eps:
        if (dx > eps).all():
            return 0
        if (dx < -eps).all():
            return 1
    if p.shape == "circle" and np.abs(dx).max() <= eps:
        if (dy < -eps).all():
            return 2
        if (dy > eps).all():
            return 3
    return None


def render(p: ClipParams, spec: SyntheticVideoSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """Render to a float32 (3, T, H, W) array in [0, 1] with antialiased edges."""
    S = spec.size
    yy, xx = np.meshgrid(np.arange(S) + 0.5, np.arange(S) + 0.5, indexing="ij")
    frames = []
    for t in range(spec.frames):
        dy, dx = yy - p.cy[t], xx - p.cx[t]
        if p.shape == "circle":
            dist = np.hypot(dy, dx)
            cover = np.clip(p.side[t] / 2 - dist + 0.5, 0.0, 1.0)
        else:
            c, s = np.cos(p.angle[t]), np.sin(p.angle[t])
            u, v = c * dx + s * dy, -s * dx + c * dy
            cover = np.clip(p.side[t] / 2 - np.maximum(np.abs(u), np.abs(v)) + 0.5, 0.0, 1.0)
        frames.append(cover)
    cover = np.stack(frames)[None]                      # 1, T, H, W
    clip = p.bg[:, None, None, None] * (1 - cover) + p.fg[:, None, None, None] * cover
    if rng is not None and spec.noise > 0:
        clip = clip + rng.normal(0.0, spec.noise, clip.shape)
    return np.clip(clip, 0.0, 1.0).astype(np.float32)


@dataclass
class SyntheticDataset:
    """Train/val clips in [0, 1] plus per-channel standardisation from the train split."""

    spec: SyntheticVideoSpec
    seed: int
    train_raw: torch.Tensor
    train_labels: torch.Tensor
    val_raw: torch.Tensor
    val_labels: torch.Tensor
    mean: torch.Tensor = field(init=False)
    std: torch.Tensor = field(init=False)

    def __post_init__(self):
        per_channel = self.train_raw.transpose(0, 1).flatten(1)
        self.mean = per_channel.mean(1)
        self.std = per_channel.std(1, unbiased=False)

    def normalize(self, raw: torch.Tensor) -> torch.Tensor:
        shape = (-1, 1, 1, 1)
        return (raw - self.mean.view(shape)) / self.std.view(shape)

    def denormalize(self, x: torch.Tensor) -> torch.Tensor:
        shape = (-1, 1, 1, 1)
        return x * self.std.view(shape) + self.mean.view(shape)

    @property
    def train_x(self) -> torch.Tensor:
        return self.normalize(self.train_raw)

    @property
    def val_x(self) -> torch.Tensor:
        return self.normalize(self.val_raw)

    @property
    def clamp_bounds(self) -> tuple[torch.Tensor, torch.Tensor]:
        """Per-channel normalised images of the pixel interval [0, 1]."""
        return -self.mean / self.std, (1 - self.mean) / self.std

    @property
    def value_range(self) -> tuple[float, float]:
        lo, hi = self.clamp_bounds
        return float(lo.min()), float(hi.max())

    @property
    def class_names(self) -> tuple[str, ...]:
        return CLASS_NAMES[: self.spec.num_classes]

    def stimuli_for(self, label: int) -> list[int]:
        return torch.nonzero(self.val_labels == label).flatten().tolist()


def _balanced_labels(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    return rng.permutation(np.arange(n) % k)


def generate_clips(labels: np.ndarray, spec: SyntheticVideoSpec, rng: np.random.Generator) -> np.ndarray:
    return np.stack([render(sample_params(int(y), rng, spec), spec, rng) for y in labels])


def generate_dataset(spec: SyntheticVideoSpec | None = None, seed: int = 0,
                     n_train: int = 600, n_val: int = 120) -> SyntheticDataset:
    if n_train < 1 or n_val < 1:
        raise ValueError("n_train and n_val must be >= 1")
    spec = spec or SyntheticVideoSpec()
    rng = np.random.default_rng(seed)
    ytr = _balanced_labels(n_train, spec.num_classes, rng)
    yva = _balanced_labels(n_val, spec.num_classes, rng)
    xtr = generate_clips(ytr, spec, rng)
    xva = generate_clips(yva, spec, rng)
    return SyntheticDataset(spec, seed, torch.from_numpy(xtr), torch.from_numpy(ytr).long(),
                            torch.from_numpy(xva), torch.from_numpy(yva).long())
