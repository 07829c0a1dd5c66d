"""Ablation protocols over objective terms, distances, resolution, priming layers and stimulus count.

Every protocol synthesizes one video per sampled validation stimulus, repeats
that over several seeds and reports per-row medians across seeds.
"""
from __future__ import annotations

import logging
import statistics
from dataclasses import dataclass, field, replace

import torch
import torch.nn as nn

from leaps.engine import run_baseline_batch, synthesize_batch
from leaps.metrics import inception_score, top1
from leaps.types import ObjectiveConfig, PrimingSchedule
from leaps.zoo.data import SyntheticDataset

log = logging.getLogger(__name__)

PROTOCOLS = ("objective_terms", "distance_functions", "resolution", "priming_layers", "multi_stimuli")


@dataclass
class Setup:
    dataset: SyntheticDataset
    model: nn.Module
    verifier: nn.Module
    cfg: ObjectiveConfig
    lambda_first: float = 1.0
    lambda_last: float = 0.3
    per_class: int = 2
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    shape: tuple[int, int, int, int] = (3, 8, 32, 32)

    def schedule(self, fraction: float = 1.0) -> PrimingSchedule:
        return PrimingSchedule(tuple(self.model.capture_layers), self.lambda_first, self.lambda_last, fraction)


@dataclass
class Row:
    name: str
    top1_model: list[float] = field(default_factory=list)
    top1_verifier: list[float] = field(default_factory=list)
    inception: list[float] = field(default_factory=list)

    def summary(self) -> dict:
        med = statistics.median
        return {"row": self.name, "top1_model": med(self.top1_model), "top1_verifier": med(self.top1_verifier),
                "is_median": med(self.inception), "seeds": len(self.top1_model),
                "top1_model_per_seed": self.top1_model, "top1_verifier_per_seed": self.top1_verifier}


def sample_stimuli(dataset: SyntheticDataset, per_class: int, seed: int, count: int = 1):
    """Pick ``per_class`` targets per class, each with ``count`` random validation stimuli.

    Returns ``(stimuli, labels)`` where ``stimuli`` is a list of ``count``
    tensors shaped ``(N, C, T, H, W)``.
    """
    g = torch.Generator().manual_seed(10_000 + seed)
    val = dataset.val_x
    ys, picks = [], []
    for c in range(dataset.spec.num_classes):
        idx = torch.as_tensor(dataset.stimuli_for(c))
        for _ in range(per_class):
            ys.append(c)
            picks.append(idx[torch.randperm(len(idx), generator=g)[:count]])
    stimuli = [torch.stack([val[p[k]] for p in picks]) for k in range(count)]
    return stimuli, ys


def _score(row: Row, setup: Setup, videos: torch.Tensor, ys) -> None:
    row.top1_model.append(top1(videos, ys, setup.model))
    row.top1_verifier.append(top1(videos, ys, setup.verifier))
    row.inception.append(inception_score(videos, setup.verifier, min(5, len(videos)))[0])


def _seeds(setup: Setup, seed: int, n: int) -> list[int]:
    return [seed * 1000 + i for i in range(n)]


def run_leaps_row(setup: Setup, name: str, cfg: ObjectiveConfig, fraction: float = 1.0,
                  n_stimuli: int = 1, shape=None) -> Row:
    row = Row(name)
    for seed in setup.seeds:
        stimuli, ys = sample_stimuli(setup.dataset, setup.per_class, seed, n_stimuli)
        recs = synthesize_batch(setup.model, setup.verifier, stimuli, ys, cfg, setup.schedule(fraction),
                                _seeds(setup, seed, len(ys)), shape=shape or setup.shape,
                                clamp_bounds=setup.dataset.clamp_bounds)
        _score(row, setup, torch.stack([r.final_video.data for r in recs]), ys)
        log.info("%s seed %d: m=%.3f v=%.3f", name, seed, row.top1_model[-1], row.top1_verifier[-1])
    return row


def run_baseline_row(setup: Setup, kind: str, alpha_tv: float = 1e-4, alpha_l2: float = 1e-5) -> Row:
    row = Row(kind)
    cfg = replace(setup.cfg, enable_priming=False, enable_coherence=False, enable_diversity=False, enable_ce=True)
    for seed in setup.seeds:
        _, ys = sample_stimuli(setup.dataset, setup.per_class, seed)
        recs = run_baseline_batch(kind, setup.model, ys, cfg, _seeds(setup, seed, len(ys)), alpha_tv, alpha_l2,
                                  shape=setup.shape, clamp_bounds=setup.dataset.clamp_bounds)
        _score(row, setup, torch.stack([r.final_video.data for r in recs]), ys)
    return row


OBJECTIVE_ROWS = {
    "prim": dict(enable_coherence=False, enable_diversity=False),
    "prim+coh": dict(enable_coherence=True, enable_diversity=False),
    "prim+feat": dict(enable_coherence=False, enable_diversity=True),
    "full": dict(enable_coherence=True, enable_diversity=True),
}


def objective_terms(setup: Setup, rows=tuple(OBJECTIVE_ROWS)) -> list[Row]:
    return [run_leaps_row(setup, name, replace(setup.cfg, enable_priming=True, **OBJECTIVE_ROWS[name]))
            for name in rows]


def distance_functions(setup: Setup, kinds=("l2", "l1", "cosine", "jvs")) -> list[Row]:
    return [run_leaps_row(setup, kind, replace(setup.cfg, distance=kind)) for kind in kinds]


def priming_layers(setup: Setup, fractions=(0.2, 0.4, 0.6, 0.8, 1.0)) -> list[Row]:
    return [run_leaps_row(setup, f"{round(100 * f)}%", setup.cfg, fraction=f) for f in fractions]


def resolution(setup: Setup, sizes=((8, 24, 24), (8, 32, 32), (16, 32, 32))) -> list[Row]:
    return [run_leaps_row(setup, f"{t}x{h}^2", setup.cfg, shape=(setup.shape[0], t, h, w)) for t, h, w in sizes]


def multi_stimuli(setup: Setup, counts=(1, 2, 4, 8)) -> list[Row]:
    """Priming with several stimuli and no regularizers, against single-stimulus LEAPS."""
    bare = replace(setup.cfg, enable_coherence=False, enable_diversity=False)
    rows = [run_leaps_row(setup, f"{n} stimuli", bare, n_stimuli=n) for n in counts]
    rows.append(run_leaps_row(setup, "LEAPS (1 stimulus)", setup.cfg))
    return rows


def baselines(setup: Setup, alpha_tv: float = 1e-4, alpha_l2: float = 1e-5) -> list[Row]:
    return [run_baseline_row(setup, "deepdream3d", alpha_tv, alpha_l2),
            run_baseline_row(setup, "am3d", alpha_tv, alpha_l2),
            run_leaps_row(setup, "leaps", setup.cfg)]


def run_protocol(name: str, setup: Setup) -> list[Row]:
    fn = {"objective_terms": objective_terms, "distance_functions": distance_functions,
          "resolution": resolution, "priming_layers": priming_layers, "multi_stimuli": multi_stimuli,
          "baselines": baselines}.get(name)
    if fn is None:
        raise ValueError(f"unknown protocol {name!r}; choose from {PROTOCOLS}")
    return fn(setup)


def format_table(rows: list[Row]) -> str:
    lines = [f"{'row':<20} {'top1(m)':>8} {'top1(v)':>8} {'IS':>6}"]
    for r in rows:
        s = r.summary()
        lines.append(f"{s['row']:<20} {100 * s['top1_model']:8.1f} {100 * s['top1_verifier']:8.1f} "
                     f"{s['is_median']:6.2f}")
    return "\n".join(lines)
