from __future__ import annotations

import logging
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from leaps.errors import DivergenceError
from leaps.zoo.data import SyntheticDataset
from leaps.zoo.models import build_model, freeze

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ToyModelSpec:
    kind: str = "conv3d"
    config: dict = field(default_factory=dict)
    lr: float = 2e-3
    batch_size: int = 32
    weight_decay: float = 1e-4
    noise_aug: float = 1.0   # max std (normalised units) of additive noise on half of each batch


@dataclass
class TrainingReport:
    epochs: list[dict] = field(default_factory=list)
    val_accuracy: float = 0.0


@torch.no_grad()
def accuracy(model: nn.Module, x: torch.Tensor, y: torch.Tensor, batch_size: int = 64) -> float:
    was_training = model.training
    model.eval()
    correct = 0
    for i in range(0, len(x), batch_size):
        correct += (model(x[i:i + batch_size]).argmax(1) == y[i:i + batch_size]).sum().item()
    model.train(was_training)
    return correct / len(x)


def fit(model: nn.Module, dataset: SyntheticDataset, epochs: int, seed: int,
        spec: ToyModelSpec | None = None, shuffle_frames: bool = False) -> TrainingReport:
    """Train in place with Adam; ``shuffle_frames`` permutes each clip's frames every batch."""
    spec = spec or ToyModelSpec()
    gen = torch.Generator().manual_seed(seed)
    xtr, ytr = dataset.train_x, dataset.train_labels
    xva, yva = dataset.val_x, dataset.val_labels
    if shuffle_frames:
        xva = _shuffle_frames(xva, torch.Generator().manual_seed(seed + 1))
    opt = torch.optim.AdamW(model.parameters(), lr=spec.lr, weight_decay=spec.weight_decay)
    total_steps = max(1, epochs * -(-len(xtr) // spec.batch_size))
    sched = torch.optim.lr_scheduler.OneCycleLR(opt, max_lr=spec.lr, total_steps=total_steps)
    report = TrainingReport()
    for epoch in range(epochs):
        model.train()
        order = torch.randperm(len(xtr), generator=gen)
        running, seen = 0.0, 0
        for i in range(0, len(xtr), spec.batch_size):
            idx = order[i:i + spec.batch_size]
            xb, yb = xtr[idx], ytr[idx]
            if shuffle_frames:
                xb = _shuffle_frames(xb, gen)
            if spec.noise_aug > 0:
                xb = _add_noise(xb, spec.noise_aug, gen)
            loss = F.cross_entropy(model(xb), yb)
            opt.zero_grad()
            loss.backward()
            opt.step()
            sched.step()
            running += loss.item() * len(idx)
            seen += len(idx)
        acc = accuracy(model, xva, yva)
        report.epochs.append({"epoch": epoch + 1, "loss": running / seen, "val_accuracy": acc})
        log.info("epoch %d loss %.4f val_acc %.3f", epoch + 1, running / seen, acc)
    report.val_accuracy = accuracy(model, xva, yva)
    return report


@torch.no_grad()
def recalibrate_bn(model: nn.Module, x: torch.Tensor, batch_size: int = 32) -> None:
    """Replace BN running statistics with cumulative averages over clean batches of ``x``."""
    bns = [m for m in model.modules() if isinstance(m, nn.modules.batchnorm._BatchNorm)]
    if not bns:
        return
    saved = [m.momentum for m in bns]
    for m in bns:
        m.reset_running_stats()
        m.momentum = None
    model.train()
    for i in range(0, len(x), batch_size):
        model(x[i:i + batch_size])
    model.eval()
    for m, mom in zip(bns, saved):
        m.momentum = mom


def _add_noise(x: torch.Tensor, max_std: float, gen: torch.Generator) -> torch.Tensor:
    B = len(x)
    std = torch.rand(B, generator=gen) * max_std * (torch.rand(B, generator=gen) < 0.5)
    return x + std.view(-1, 1, 1, 1, 1) * torch.randn(x.shape, generator=gen)


def _shuffle_frames(x: torch.Tensor, gen: torch.Generator) -> torch.Tensor:
    T = x.shape[2]
    perms = torch.stack([torch.randperm(T, generator=gen) for _ in range(len(x))])
    index = perms[:, None, :, None, None].expand(-1, x.shape[1], -1, x.shape[3], x.shape[4])
    return torch.gather(x, 2, index)


def train_model(spec: ToyModelSpec, dataset: SyntheticDataset, epochs: int, seed: int,
                shuffle_frames: bool = False) -> tuple[nn.Module, TrainingReport]:
    """Build, train and freeze a toy classifier.

    Raises DivergenceError when a trained (epochs > 0) model stays within 5 points
    of chance on the validation split.
    """
    torch.manual_seed(seed)
    config = dict(spec.config)
    config.setdefault("num_classes", dataset.spec.num_classes)
    model = build_model(spec.kind, **config)
    report = fit(model, dataset, epochs, seed, spec, shuffle_frames=shuffle_frames)
    if spec.noise_aug > 0 and epochs > 0:
        # noisy batches would otherwise leak into the statistics the diversity term matches
        recalibrate_bn(model, dataset.train_x, spec.batch_size)
        report.val_accuracy = accuracy(model, dataset.val_x, dataset.val_labels)
    chance = 1.0 / dataset.spec.num_classes
    if epochs > 0 and report.val_accuracy < chance + 0.05:
        raise DivergenceError(f"validation accuracy {report.val_accuracy:.3f} is at chance level")
    return freeze(model), report
