"""Evaluation of synthesized videos: accuracy, Inception Score, frame-pair PSNR/SSIM, PCA projection."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
from scipy.ndimage import uniform_filter
from scipy.special import xlogy

from leaps.capture import prepare_input
from leaps.errors import DegenerateRankError, EmptySetError, ShapeError, SplitError

PSNR_CAP = 100.0
SSIM_WINDOW = 7
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _batch(videos) -> torch.Tensor:
    if isinstance(videos, (list, tuple)):
        videos = torch.stack([getattr(v, "data", v) for v in videos])
    videos = getattr(videos, "data", videos)
    return videos.unsqueeze(0) if videos.dim() == 4 else videos


@torch.no_grad()
def predict_proba(videos, model: nn.Module, batch_size: int = 32) -> torch.Tensor:
    x = _batch(videos)
    out = [model(prepare_input(model, x[i:i + batch_size])).softmax(-1) for i in range(0, len(x), batch_size)]
    return torch.cat(out)


def top1(videos, labels, model: nn.Module) -> float:
    x = _batch(videos)
    if len(x) == 0:
        raise EmptySetError("top-1 of an empty set")
    labels = torch.as_tensor(labels).reshape(-1)
    return (predict_proba(x, model).argmax(1) == labels).float().mean().item()


def inception_score_from_probs(probs, n_splits: int = 5) -> tuple[float, float]:
    """exp(E_x KL(p(y|x) || p(y))) per split, returned as (mean, std) over splits."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2 or len(p) == 0:
        raise EmptySetError("inception score needs a non-empty (N, K) probability matrix")
    if n_splits < 1 or len(p) < n_splits:
        raise SplitError(f"cannot split {len(p)} samples into {n_splits} parts")
    scores = []
    for part in np.array_split(p, n_splits):
        marginal = part.mean(0, keepdims=True)
        kl = (xlogy(part, part) - xlogy(part, marginal)).sum(1)
        scores.append(np.exp(kl.mean()))
    return float(np.mean(scores)), float(np.std(scores))


def inception_score(videos, classifier_ref: nn.Module, n_splits: int = 5) -> tuple[float, float]:
    return inception_score_from_probs(predict_proba(videos, classifier_ref).numpy(), n_splits)


def _frame(f) -> np.ndarray:
    f = f.detach().cpu().numpy() if isinstance(f, torch.Tensor) else np.asarray(f)
    return f.astype(np.float64)


def psnr_pair(f1, f2) -> float:
    """PSNR in dB for frames in [0, 1], capped at 100 dB for (near-)identical frames."""
    a, b = _frame(f1), _frame(f2)
    if a.shape != b.shape:
        raise ShapeError(f"frame shapes differ: {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse < 1e-10:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10 * np.log10(1.0 / mse)))


def ssim_pair(f1, f2) -> float:
    """Mean SSIM over valid 7x7 uniform windows, averaged over channels.

    Frames are (C, H, W) or (H, W) with values in [0, 1]; statistics use
    population (divide-by-N) moments.
    """
    a, b = _frame(f1), _frame(f2)
    if a.shape != b.shape:
        raise ShapeError(f"frame shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    if min(a.shape[-2:]) < SSIM_WINDOW:
        raise ShapeError(f"frames must be at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    pad = SSIM_WINDOW // 2
    crop = (slice(pad, -pad), slice(pad, -pad))
    vals = []
    for x, y in zip(a, b):
        mx, my = (uniform_filter(z, SSIM_WINDOW)[crop] for z in (x, y))
        sxx = uniform_filter(x * x, SSIM_WINDOW)[crop] - mx * mx
        syy = uniform_filter(y * y, SSIM_WINDOW)[crop] - my * my
        sxy = uniform_filter(x * y, SSIM_WINDOW)[crop] - mx * my
        num = (2 * mx * my + SSIM_C1) * (2 * sxy + SSIM_C2)
        den = (mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2)
        vals.append((num / den).mean())
    return float(np.mean(vals))


def frame_pair_traces(video) -> tuple[list[float], list[float]]:
    """PSNR and SSIM for each consecutive frame pair of a (C, T, H, W) video in [0, 1]."""
    v = getattr(video, "data", video)
    T = v.shape[1]
    psnr = [psnr_pair(v[:, t], v[:, t + 1]) for t in range(T - 1)]
    ssim = [ssim_pair(v[:, t], v[:, t + 1]) for t in range(T - 1)]
    return psnr, ssim


def pca_project(embeddings, k: int = 2) -> np.ndarray:
    """Project mean-centred rows onto the top-k right singular vectors.

    Each axis is oriented so its largest-magnitude loading is positive.
    """
    X = np.asarray(embeddings, dtype=np.float64)
    if X.ndim != 2 or len(X) < 3:
        raise ShapeError("PCA needs at least 3 embeddings of equal dimension")
    Xc = X - X.mean(0)
    if np.allclose(Xc, 0):
        raise DegenerateRankError("all embeddings are identical")
    _, _, vt = np.linalg.svd(Xc, full_matrices=False)
    comps = vt[:k]
    signs = np.sign(comps[np.arange(len(comps)), np.abs(comps).argmax(1)])
    comps = comps * signs[:, None]
    out = Xc @ comps.T
    if out.shape[1] < k:
        out = np.pad(out, ((0, 0), (0, k - out.shape[1])))
    return out


@torch.no_grad()
def embed(videos, model: nn.Module) -> np.ndarray:
    """Space-time averaged final-block features."""
    x = _batch(videos)
    return model.features(prepare_input(model, x)).numpy()


@dataclass
class EvalReport:
    top1_model: float
    top1_verifier: float
    is_mean: float
    is_std: float
    psnr: list[float]
    ssim: list[float]
    embedding: list[tuple[float, float, str]] | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {"top1_model": self.top1_model, "top1_verifier": self.top1_verifier,
               "is_mean": self.is_mean, "is_std": self.is_std, "psnr": self.psnr, "ssim": self.ssim,
               "embedding": [list(p) for p in self.embedding] if self.embedding is not None else None}
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        d = json.loads(text)
        emb = d.get("embedding")
        return cls(d["top1_model"], d["top1_verifier"], d["is_mean"], d["is_std"], d["psnr"], d["ssim"],
                   [tuple(p) for p in emb] if emb is not None else None)


def evaluate(videos, labels, model: nn.Module, verifier: nn.Module, to_unit=None,
             n_splits: int = 5, reference=None) -> EvalReport:
    """Score a set of synthesized videos.

    ``to_unit`` maps a normalised video to [0, 1] pixels for PSNR/SSIM; traces
    are averaged over the set. ``reference`` optionally adds real videos to a
    joint PCA embedding tagged ``real`` / ``synth``.
    """
    x = _batch(videos)
    labels = torch.as_tensor(labels).reshape(-1)
    splits = min(n_splits, len(x))
    is_mean, is_std = inception_score(x, verifier, splits)
    traces = [frame_pair_traces((to_unit(v) if to_unit else v).clamp(0, 1)) for v in x]
    psnr = np.mean([t[0] for t in traces], 0).tolist()
    ssim = np.mean([t[1] for t in traces], 0).tolist()
    emb = None
    if reference is not None:
        ref = _batch(reference)
        feats = np.concatenate([embed(ref, model), embed(x, model)])
        if len(feats) >= 3:
            pts = pca_project(feats)
            tags = ["real"] * len(ref) + ["synth"] * len(x)
            emb = [(float(p[0]), float(p[1]), t) for p, t in zip(pts, tags)]
    return EvalReport(top1(x, labels, model), top1(x, labels, verifier), is_mean, is_std, psnr, ssim, emb)
