"""Named toy models that are trained on first use and cached as checkpoints."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import torch.nn as nn

from leaps.zoo.checkpoint import load_model, save_model
from leaps.zoo.data import SyntheticDataset, SyntheticVideoSpec, generate_dataset
from leaps.zoo.train import ToyModelSpec, train_model

log = logging.getLogger(__name__)

DATASET_SEED = 0


@dataclass(frozen=True)
class ZooEntry:
    spec: ToyModelSpec
    seed: int
    epochs: int
    meta: dict = field(default_factory=dict)


ZOO = {
    "toy_conv": ZooEntry(ToyModelSpec("conv3d"), seed=0, epochs=30),
    "toy_conv_b": ZooEntry(ToyModelSpec("conv3d"), seed=1, epochs=30),
    "toy_vit": ZooEntry(ToyModelSpec("video_transformer", lr=1e-3), seed=0, epochs=40),
}


@lru_cache(maxsize=4)
def toy_dataset(seed: int = DATASET_SEED) -> SyntheticDataset:
    return generate_dataset(SyntheticVideoSpec(), seed=seed)


def zoo_path(zoo_dir: str | Path, name: str) -> Path:
    return Path(zoo_dir) / f"{name}.mdl"


def train_entry(name: str, zoo_dir: str | Path, epochs: int | None = None, seed: int | None = None) -> Path:
    if name not in ZOO:
        raise KeyError(f"unknown zoo model {name!r}; known: {sorted(ZOO)}")
    entry = ZOO[name]
    seed = entry.seed if seed is None else seed
    epochs = entry.epochs if epochs is None else epochs
    model, report = train_model(entry.spec, toy_dataset(), epochs, seed)
    path = zoo_path(zoo_dir, name)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, path, meta={"name": name, "seed": seed, "epochs": epochs, "dataset_seed": DATASET_SEED,
                                  "val_accuracy": report.val_accuracy})
    log.info("trained %s: val accuracy %.3f", name, report.val_accuracy)
    return path


def get_model(name_or_path: str, zoo_dir: str | Path) -> nn.Module:
    """Load a checkpoint path, or a zoo name, training and caching it if missing."""
    p = Path(name_or_path)
    if p.suffix == ".mdl" and p.exists():
        return load_model(p)
    path = zoo_path(zoo_dir, name_or_path)
    if not path.exists():
        if name_or_path not in ZOO:
            raise KeyError(f"unknown model {name_or_path!r}; known: {sorted(ZOO)} or a .mdl path")
        train_entry(name_or_path, zoo_dir)
    return load_model(path)
