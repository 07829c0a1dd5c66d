"""Adam + cosine-schedule optimisation of noise-initialised videos."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import torch
import torch.nn as nn

from leaps.capture import param_checksum
from leaps.errors import DimensionError, NonFiniteError, RangeError
from leaps.objectives import BaselineObjective, LossBreakdown, Objective
from leaps.types import DEFAULT_RANGE, ClassLabel, ObjectiveConfig, PrimingSchedule, RunRecord, VideoTensor

BETAS = (0.9, 0.999)
EPS = 1e-8
TRACE_TERMS = ("ce", "priming", "coherence", "diversity", "baseline_tv", "baseline_l2", "total")

Bounds = tuple[torch.Tensor, torch.Tensor]


@dataclass
class OptimizerState:
    step: int
    lr: float
    first_moment: torch.Tensor | None
    second_moment: torch.Tensor | None
    beta1: float = BETAS[0]
    beta2: float = BETAS[1]
    epsilon: float = EPS


def cosine_lr(step: int, num_iterations: int, base_lr: float) -> float:
    if not 0 <= step <= num_iterations:
        raise RangeError(f"step {step} outside [0, {num_iterations}]")
    return base_lr * 0.5 * (1 + math.cos(math.pi * step / num_iterations))


def _bounds(value_range=None, clamp_bounds: Bounds | None = None, channels: int = 3) -> Bounds:
    if clamp_bounds is not None:
        lo, hi = clamp_bounds
        return lo.reshape(-1, 1, 1, 1), hi.reshape(-1, 1, 1, 1)
    lo, hi = value_range or DEFAULT_RANGE
    return torch.full((channels, 1, 1, 1), float(lo)), torch.full((channels, 1, 1, 1), float(hi))


def init_input(C: int, T: int, H: int, W: int, seed: int, value_range=DEFAULT_RANGE,
               clamp_bounds: Bounds | None = None) -> VideoTensor:
    """Seeded i.i.d. standard-normal video clamped to the value range."""
    if min(C, T, H, W) < 1:
        raise DimensionError(f"invalid video size {(C, T, H, W)}")
    g = torch.Generator().manual_seed(int(seed))
    data = torch.randn(C, T, H, W, generator=g)
    lo, hi = _bounds(value_range, clamp_bounds, C)
    data = torch.maximum(torch.minimum(data, hi), lo)
    vr = value_range if clamp_bounds is None else (float(clamp_bounds[0].min()), float(clamp_bounds[1].max()))
    return VideoTensor(data, tuple(vr))


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()[:10]


def _optimize(objective: Callable[[torch.Tensor, torch.Tensor], LossBreakdown], x0: torch.Tensor,
              y: torch.Tensor, cfg: ObjectiveConfig, bounds: Bounds, frozen: Sequence[nn.Module],
              seeds: Sequence[int], config: dict, value_range) -> list[RunRecord]:
    """Shared loop: every batch element is an independent run (Adam is elementwise)."""
    B = x0.shape[0]
    lo, hi = bounds
    x = x0.clone().requires_grad_(True)
    opt = torch.optim.Adam([x], lr=cfg.base_lr, betas=BETAS, eps=EPS)
    sums = [param_checksum(m) for m in frozen]
    traces = [{k: [] for k in TRACE_TERMS} for _ in range(B)]
    scores: list[list[float]] = [[] for _ in range(B)]
    logits: list[list[float]] = [[] for _ in range(B)]
    lrs: list[float] = []
    snaps: list[list[tuple[int, VideoTensor]]] = [[] for _ in range(B)]
    every = cfg.snapshot_interval
    failure = None
    N = cfg.num_iterations
    for step in range(N):
        lr = cosine_lr(step, N, cfg.base_lr)
        for group in opt.param_groups:
            group["lr"] = lr
        if step % every == 0:
            for b in range(B):
                snaps[b].append((step, VideoTensor(x[b].detach().clone(), value_range)))
        out = objective(x, y)
        if not torch.isfinite(out.total).all():
            failure = f"non-finite loss at iteration {step}"
            break
        lrs.append(lr)
        for b in range(B):
            for k in TRACE_TERMS:
                traces[b][k].append(float(getattr(out, k)[b].detach()))
            scores[b].append(float(out.target_prob[b].detach()))
            logits[b].append(float(out.target_logit[b].detach()))
        opt.zero_grad(set_to_none=True)
        out.total.sum().backward()
        opt.step()
        with torch.no_grad():
            x.copy_(torch.maximum(torch.minimum(x, hi), lo))
    if failure is None:
        for b in range(B):
            snaps[b].append((N, VideoTensor(x[b].detach().clone(), value_range)))
    for m, s in zip(frozen, sums):
        if param_checksum(m) != s:
            raise RuntimeError("a frozen network was modified during synthesis")
    records = []
    for b in range(B):
        rec = RunRecord(
            run_id=f"{config_hash(config)}-s{seeds[b]}-y{int(y[b])}",
            config=dict(config, target=int(y[b])), seed=int(seeds[b]),
            loss_trace=traces[b], score_trace=scores[b],
            snapshots=snaps[b], final_video=VideoTensor(x[b].detach().clone(), value_range),
            lr_trace=list(lrs), failed=failure)
        rec.metrics["target_logit_trace"] = logits[b]
        records.append(rec)
    if failure is not None:
        err = NonFiniteError(failure)
        err.records = records
        raise err
    return records


def _stack_inputs(shape, seeds, value_range, clamp_bounds, init):
    if init is not None:
        x0 = init.data if isinstance(init, VideoTensor) else init
        return x0.unsqueeze(0) if x0.dim() == 4 else x0
    return torch.stack([init_input(*shape, s, value_range, clamp_bounds).data for s in seeds])


def _targets(y, batch: int) -> torch.Tensor:
    if isinstance(y, ClassLabel):
        y = y.index
    y = torch.as_tensor(y, dtype=torch.long).reshape(-1)
    return y.expand(batch).clone() if y.numel() == 1 else y


def _vr(value_range, clamp_bounds):
    if clamp_bounds is not None:
        return float(clamp_bounds[0].min()), float(clamp_bounds[1].max())
    return tuple(value_range or DEFAULT_RANGE)


def synthesize_batch(model: nn.Module, verifier: nn.Module | None, v_list, y, cfg: ObjectiveConfig,
                     sched: PrimingSchedule | None, seeds: Sequence[int], shape=(3, 8, 32, 32),
                     value_range=None, clamp_bounds: Bounds | None = None, init=None) -> list[RunRecord]:
    """Run one independent synthesis per seed.

    ``v_list`` holds stimuli, each either one video shared by the batch or a
    ``(B, C, T, H, W)`` tensor giving every run its own stimulus; ``y`` is an
    int or a length-B sequence of targets.
    """
    seeds = list(seeds)
    B = len(seeds)
    y = _targets(y, B)
    vr = _vr(value_range, clamp_bounds)
    x0 = _stack_inputs(shape, seeds, vr, clamp_bounds, init)
    objective = Objective(model, verifier, v_list, cfg, sched)
    frozen = [m for m in (model, verifier) if m is not None]
    config = {"method": "leaps", "objective": asdict(cfg),
              "schedule": asdict(sched) if sched is not None else None,
              "shape": list(x0.shape[1:])}
    return _optimize(objective, x0, y, cfg, _bounds(vr, clamp_bounds, x0.shape[1]), frozen, seeds, config, vr)


def synthesize(model, verifier, v_list, y, cfg: ObjectiveConfig, sched: PrimingSchedule | None, seed: int,
               **kwargs) -> RunRecord:
    return synthesize_batch(model, verifier, v_list, y, cfg, sched, [seed], **kwargs)[0]


def run_baseline_batch(kind: str, model: nn.Module, y, cfg: ObjectiveConfig, seeds: Sequence[int],
                       alpha_tv: float = 1e-4, alpha_l2: float = 1e-5, shape=(3, 8, 32, 32),
                       value_range=None, clamp_bounds: Bounds | None = None, init=None) -> list[RunRecord]:
    seeds = list(seeds)
    B = len(seeds)
    y = _targets(y, B)
    vr = _vr(value_range, clamp_bounds)
    x0 = _stack_inputs(shape, seeds, vr, clamp_bounds, init)
    objective = BaselineObjective(kind, model, alpha_tv, alpha_l2)
    config = {"method": kind, "objective": asdict(cfg), "alpha_tv": alpha_tv, "alpha_l2": alpha_l2,
              "shape": list(x0.shape[1:])}
    return _optimize(objective, x0, y, cfg, _bounds(vr, clamp_bounds, x0.shape[1]), [model], seeds, config, vr)


def run_baseline(kind: str, model: nn.Module, y, cfg: ObjectiveConfig, seed: int, **kwargs) -> RunRecord:
    return run_baseline_batch(kind, model, y, cfg, [seed], **kwargs)[0]
