"""Loss terms for stimulus-primed video inversion and the two gradient-ascent baselines.

Every term returns one value per batch element, shape ``(B,)``, so a batch of
independent syntheses can be optimised through the sum of their losses.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, fields

import torch
import torch.nn as nn
import torch.nn.functional as F

from leaps.capture import CaptureSession, capture, prepare_input, read_bn_stats, volume_record
from leaps.errors import (DegenerateInputWarning, EmptyStimuliError, LayerMismatchError, LengthMismatchError,
                          TooFewFramesError, ZeroNormError)
from leaps.types import ActivationRecord, ClassLabel, ObjectiveConfig, PrimingSchedule, VideoTensor


def _as_tensor(a) -> torch.Tensor:
    return a if isinstance(a, torch.Tensor) else torch.as_tensor(a, dtype=torch.float64)


def _check_lengths(a, b):
    if a.shape[-1] != b.shape[-1] or a.shape[-1] < 1:
        raise LengthMismatchError(f"vectors of length {a.shape[-1]} and {b.shape[-1]}")


def jvs_similarity(a, b) -> torch.Tensor:
    """Jaccard vector similarity along the last axis.

    Signed vectors are split into positive and negative parts, ``[a+; a-]``, and
    the similarity is ``sum(min) / sum(max)`` over the doubled vectors. Two zero
    vectors are defined as similarity 1 and trigger a DegenerateInputWarning.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    _check_lengths(a, b)
    a2 = torch.cat([a.clamp(min=0), (-a).clamp(min=0)], -1)
    b2 = torch.cat([b.clamp(min=0), (-b).clamp(min=0)], -1)
    num = torch.minimum(a2, b2).sum(-1)
    den = torch.maximum(a2, b2).sum(-1)
    degenerate = den == 0
    if degenerate.any():
        warnings.warn("JVS of two zero vectors; defined as 1", DegenerateInputWarning, stacklevel=2)
    return torch.where(degenerate, torch.ones_like(den), num / torch.where(degenerate, torch.ones_like(den), den))


def priming_distance(a, b, kind: str = "jvs") -> torch.Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_lengths(a, b)
    if kind == "l2":
        return torch.linalg.vector_norm(a - b, dim=-1)
    if kind == "l1":
        return (a - b).abs().sum(-1)
    if kind == "cosine":
        na, nb = torch.linalg.vector_norm(a, dim=-1), torch.linalg.vector_norm(b, dim=-1)
        if (na == 0).any() or (nb == 0).any():
            raise ZeroNormError("cosine distance of a zero vector")
        return 1 - (a * b).sum(-1) / (na * nb)
    if kind == "jvs":
        return 1 - jvs_similarity(a, b)
    raise ValueError(f"unknown distance {kind!r}")


def priming_from_means(means_x: dict[str, torch.Tensor], means_v: dict[str, torch.Tensor],
                       sched: PrimingSchedule, kind: str) -> torch.Tensor:
    total = 0.0
    for lid, lam in sched.active:
        if lid not in means_x or lid not in means_v:
            raise LayerMismatchError(f"layer {lid!r} missing from one of the captures")
        total = total + lam * priming_distance(means_x[lid], means_v[lid], kind)
    # normalise by the full schedule length so layer subsets reweight rather than rescale
    return total / sched.num_layers


def priming_loss(session_x: CaptureSession, session_v: CaptureSession, sched: PrimingSchedule,
                 kind: str = "jvs") -> torch.Tensor:
    if set(session_x.layer_ids) != set(session_v.layer_ids):
        raise LayerMismatchError("sessions captured different layer sets")
    mx = {k: r.channel_mean for k, r in session_x.records.items()}
    mv = {k: r.channel_mean for k, r in session_v.records.items()}
    return priming_from_means(mx, mv, sched, kind)


def coherence_loss(rec: ActivationRecord, delta: float = 1.0) -> torch.Tensor:
    """Margin-based temporal coherence over every unordered frame pair.

    Consecutive pairs contribute their L1 distance, all others the hinge
    ``max(0, delta - L1)``; each group is averaged and the averages summed.
    """
    rec = volume_record(rec)
    z = rec.tensor
    T = z.shape[2]
    if T < 2:
        raise TooFewFramesError(f"coherence needs >= 2 time steps, layer {rec.layer_id!r} has {T}")
    z = z.transpose(1, 2).flatten(2)                    # B, T, F
    gaps = (z[:, :, None, :] - z[:, None, :, :]).abs().sum(-1)   # B, T, T
    consecutive = torch.diagonal(gaps, offset=1, dim1=1, dim2=2).mean(-1)
    if T == 2:
        return consecutive
    i, j = torch.triu_indices(T, T, offset=2)
    hinge = F.relu(delta - gaps[:, i, j]).mean(-1)
    return consecutive + hinge


def diversity_from_stats(stats: dict[str, tuple[torch.Tensor, torch.Tensor]],
                         bn_stats: dict[str, tuple[torch.Tensor, torch.Tensor]]) -> torch.Tensor:
    total = 0.0
    for lid, (rm, rv) in bn_stats.items():
        if lid not in stats:
            raise LayerMismatchError(f"batch-norm layer {lid!r} was not captured")
        mu, var = stats[lid]
        total = total + torch.linalg.vector_norm(mu - rm, dim=-1) + torch.linalg.vector_norm(var - rv, dim=-1)
    return total


def diversity_loss(session_x: CaptureSession, bn_stats) -> torch.Tensor:
    stats = {k: (r.channel_mean, r.channel_var) for k, r in session_x.records.items()}
    return diversity_from_stats(stats, bn_stats)


def tv3d(x) -> torch.Tensor:
    """Anisotropic 3-D total variation.

    For each of the T, H, W axes with at least one forward difference, the
    channel-vector L2 norm of the difference is averaged over sites; the axis
    averages are summed.
    """
    x = x.data if isinstance(x, VideoTensor) else x
    if x.dim() == 4:
        x = x.unsqueeze(0)
    total = torch.zeros(x.shape[0], dtype=x.dtype)
    for axis in (2, 3, 4):
        if x.shape[axis] < 2:
            continue
        d = torch.diff(x, dim=axis)
        total = total + torch.linalg.vector_norm(d, dim=1).flatten(1).mean(-1)
    return total


def l2_prior(x) -> torch.Tensor:
    x = x.data if isinstance(x, VideoTensor) else x
    if x.dim() == 4:
        x = x.unsqueeze(0)
    return x.pow(2).flatten(1).mean(-1)


@dataclass
class LossBreakdown:
    """Unscaled per-video term values (each shape ``(B,)``) and the weighted total."""

    ce: torch.Tensor
    priming: torch.Tensor
    coherence: torch.Tensor
    diversity: torch.Tensor
    baseline_tv: torch.Tensor
    baseline_l2: torch.Tensor
    total: torch.Tensor
    target_prob: torch.Tensor | None = None
    target_logit: torch.Tensor | None = None

    def row(self, i: int) -> dict[str, float]:
        return {f.name: float(getattr(self, f.name)[i]) for f in fields(self)
                if getattr(self, f.name) is not None}


def combine(cfg: ObjectiveConfig, ce, priming, coherence, diversity) -> torch.Tensor:
    total = torch.zeros_like(ce)
    if cfg.enable_ce:
        total = total + ce
    if cfg.enable_priming:
        total = total + priming
    reg = torch.zeros_like(ce)
    if cfg.enable_coherence:
        reg = reg + coherence
    if cfg.enable_diversity:
        reg = reg + diversity
    return total + cfg.reg_scale * reg


def stimulus_means(model: nn.Module, v_list, layer_ids) -> list[dict[str, torch.Tensor]]:
    """Channel-mean vectors of each stimulus at the priming layers (no graph)."""
    out = []
    with torch.no_grad():
        for v in v_list:
            s = capture(model, v, layer_ids)
            out.append({k: r.channel_mean for k, r in s.records.items()})
    return out


class Objective:
    """Stimulus-primed inversion objective with the stimulus captured once up front."""

    def __init__(self, model: nn.Module, verifier: nn.Module | None, v_list, cfg: ObjectiveConfig,
                 sched: PrimingSchedule | None):
        self.model, self.verifier, self.cfg, self.sched = model, verifier, cfg, sched
        if cfg.enable_priming:
            if not v_list:
                raise EmptyStimuliError("priming is enabled but no stimulus was given")
            if sched is None:
                raise ValueError("priming is enabled but no priming schedule was given")
            self.stim = stimulus_means(model, v_list, sched.layer_ids)
        else:
            self.stim = []
        self.bn_stats = {}
        if cfg.enable_diversity:
            if verifier is None:
                raise ValueError("feature diversity needs a verifier network")
            self.bn_stats = read_bn_stats(verifier, verifier.bn_layers)

    def __call__(self, x: torch.Tensor, y: torch.Tensor) -> LossBreakdown:
        cfg = self.cfg
        layers = list(self.sched.layer_ids) if cfg.enable_priming else []
        if cfg.enable_coherence and self.model.coherence_layer not in layers:
            layers.append(self.model.coherence_layer)
        sess = capture(self.model, x, layers)
        logits = sess.logits
        zero = torch.zeros(x.shape[0], dtype=logits.dtype)
        ce = F.cross_entropy(logits, y, reduction="none")
        priming = coherence = diversity = zero
        if cfg.enable_priming:
            mx = {k: r.channel_mean for k, r in sess.records.items()}
            priming = torch.stack([priming_from_means(mx, mv, self.sched, cfg.distance)
                                   for mv in self.stim]).mean(0)
        if cfg.enable_coherence:
            coherence = coherence_loss(sess.records[self.model.coherence_layer], cfg.delta)
        if cfg.enable_diversity:
            vs = capture(self.verifier, x, list(self.bn_stats))
            diversity = diversity_loss(vs, self.bn_stats)
        total = combine(cfg, ce, priming, coherence, diversity)
        probs = logits.softmax(-1)
        return LossBreakdown(ce, priming, coherence, diversity, zero, zero, total,
                             probs.gather(1, y[:, None])[:, 0], logits.gather(1, y[:, None])[:, 0])


def _labels(y, batch: int) -> torch.Tensor:
    if isinstance(y, ClassLabel):
        y = y.index
    y = torch.as_tensor(y, dtype=torch.long).reshape(-1)
    return y.expand(batch) if y.numel() == 1 else y


def total_loss(x, v_list, y, model_ref: nn.Module, verifier_ref: nn.Module | None, cfg: ObjectiveConfig,
               sched: PrimingSchedule | None) -> LossBreakdown:
    """Evaluate the full objective for ``x`` (a video or a batch of videos).

    The priming term is the mean of the per-stimulus priming losses over
    ``v_list``.
    """
    x = x.data if isinstance(x, VideoTensor) else x
    if x.dim() == 4:
        x = x.unsqueeze(0)
    return Objective(model_ref, verifier_ref, v_list, cfg, sched)(x, _labels(y, x.shape[0]))


class BaselineObjective:
    """3D DeepDream (cross-entropy) or 3D activation maximisation (negative class logit) plus TV and L2 priors."""

    def __init__(self, kind: str, model: nn.Module, alpha_tv: float = 1e-4, alpha_l2: float = 1e-5):
        if kind not in ("deepdream3d", "am3d"):
            raise ValueError(f"unknown baseline {kind!r}")
        self.kind, self.model, self.alpha_tv, self.alpha_l2 = kind, model, alpha_tv, alpha_l2

    def __call__(self, x: torch.Tensor, y: torch.Tensor) -> LossBreakdown:
        logits = self.model(prepare_input(self.model, x))
        ce = F.cross_entropy(logits, y, reduction="none")
        target_logit = logits.gather(1, y[:, None])[:, 0]
        tv, l2 = tv3d(x), l2_prior(x)
        data_term = ce if self.kind == "deepdream3d" else -target_logit
        total = data_term + self.alpha_tv * tv + self.alpha_l2 * l2
        zero = torch.zeros_like(ce)
        return LossBreakdown(ce, zero, zero, zero, tv, l2, total,
                             logits.softmax(-1).gather(1, y[:, None])[:, 0], target_logit)
