"""Desk-scale video classifiers: a 3D conv net with batch norm and a patch-token transformer."""
from __future__ import annotations

import math

import torch
import torch.nn as nn


class ConvBlock(nn.Module):
    def __init__(self, cin, cout, stride):
        super().__init__()
        self.conv = nn.Conv3d(cin, cout, 3, stride=stride, padding=1, bias=False)
        self.bn = nn.BatchNorm3d(cout)
        self.relu = nn.ReLU()

    def forward(self, x):
        return self.relu(self.bn(self.conv(x)))


class GlobalPool(nn.Module):
    """Space-time average that keeps a (B, C, 1, 1, 1) volume so it can be captured."""

    def forward(self, x):
        return x.mean(dim=(2, 3, 4), keepdim=True)


class ToyConv3d(nn.Module):
    kind = "conv3d"
    input_size = None  # accepts any spatiotemporal size

    def __init__(self, num_classes: int = 6, widths=(16, 32, 64, 64),
                 strides=((1, 2, 2), (1, 2, 2), (2, 2, 2), (1, 1, 1))):
        super().__init__()
        self.config = {"num_classes": num_classes, "widths": list(widths),
                       "strides": [list(s) for s in strides]}
        cin = 3
        for i, (w, s) in enumerate(zip(widths, strides), 1):
            self.add_module(f"block{i}", ConvBlock(cin, w, tuple(s)))
            cin = w
        self.num_blocks = len(widths)
        self.pool = GlobalPool()
        self.head = nn.Linear(cin, num_classes)

    @property
    def capture_layers(self) -> list[str]:
        return [f"block{i}" for i in range(1, self.num_blocks + 1)] + ["pool"]

    @property
    def bn_layers(self) -> list[str]:
        return [f"block{i}.bn" for i in range(1, self.num_blocks + 1)]

    @property
    def coherence_layer(self) -> str:
        return f"block{self.num_blocks}"

    def layer_geometry(self, name: str) -> dict:
        return {"kind": "conv_volume"}

    def features(self, x):
        for i in range(1, self.num_blocks + 1):
            x = getattr(self, f"block{i}")(x)
        return self.pool(x).flatten(1)

    def forward(self, x):
        return self.head(self.features(x))


class AttentionBlock(nn.Module):
    def __init__(self, dim, heads, mlp_dim):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, mlp_dim), nn.GELU(), nn.Linear(mlp_dim, dim))

    def forward(self, x):
        h = self.norm1(x)
        x = x + self.attn(h, h, h, need_weights=False)[0]
        return x + self.mlp(self.norm2(x))


class ToyVideoTransformer(nn.Module):
    """Tubelet-embedding transformer over P = (pt, ph, pw) patches with a token-mean head."""

    kind = "video_transformer"

    def __init__(self, num_classes: int = 6, input_size=(8, 32, 32), patch=(2, 4, 4),
                 dim: int = 64, depth: int = 2, heads: int = 4, mlp_dim: int = 128):
        super().__init__()
        if any(s % p for s, p in zip(input_size, patch)):
            raise ValueError(f"input size {input_size} not divisible by patch {patch}")
        if dim % math.prod(patch):
            raise ValueError(f"token width {dim} must be a multiple of the patch volume {math.prod(patch)}")
        self.config = {"num_classes": num_classes, "input_size": list(input_size), "patch": list(patch),
                       "dim": dim, "depth": depth, "heads": heads, "mlp_dim": mlp_dim}
        self.input_size = tuple(input_size)
        self.patch = tuple(patch)
        self.grid = tuple(s // p for s, p in zip(input_size, patch))
        self.embed = nn.Conv3d(3, dim, kernel_size=self.patch, stride=self.patch)
        self.pos = nn.Parameter(torch.zeros(1, math.prod(self.grid), dim))
        nn.init.trunc_normal_(self.pos, std=0.02)
        self.depth = depth
        for i in range(1, depth + 1):
            self.add_module(f"block{i}", AttentionBlock(dim, heads, mlp_dim))
        self.norm = nn.LayerNorm(dim)
        self.head = nn.Linear(dim, num_classes)

    @property
    def capture_layers(self) -> list[str]:
        return [f"block{i}" for i in range(1, self.depth + 1)] + ["norm"]

    @property
    def bn_layers(self) -> list[str]:
        return []

    @property
    def coherence_layer(self) -> str:
        return "norm"

    def layer_geometry(self, name: str) -> dict:
        if name in self.capture_layers:
            return {"kind": "patch_tokens", "patch": self.patch, "grid": self.grid}
        return {"kind": "conv_volume"}

    def features(self, x):
        x = self.embed(x).flatten(2).transpose(1, 2) + self.pos
        for i in range(1, self.depth + 1):
            x = getattr(self, f"block{i}")(x)
        return self.norm(x).mean(1)

    def forward(self, x):
        return self.head(self.features(x))


ARCHITECTURES = {"conv3d": ToyConv3d, "video_transformer": ToyVideoTransformer}


def build_model(kind: str, **config) -> nn.Module:
    try:
        cls = ARCHITECTURES[kind]
    except KeyError:
        raise ValueError(f"unknown architecture {kind!r}; choose from {sorted(ARCHITECTURES)}") from None
    return cls(**config)


def freeze(model: nn.Module) -> nn.Module:
    model.eval()
    model.requires_grad_(False)
    return model
