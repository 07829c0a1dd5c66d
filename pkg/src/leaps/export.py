"""Convert stored runs into frame PNGs, an animated GIF and diagnostic plots."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import torch  # noqa: E402
from PIL import Image  # noqa: E402

PLOTS = ("trace.png", "psnr.png", "ssim.png", "pca.png")


def to_unit(video: torch.Tensor, mean, std) -> torch.Tensor:
    """Invert per-channel standardisation and clip to [0, 1]."""
    mean = torch.as_tensor(mean, dtype=video.dtype).view(-1, 1, 1, 1)
    std = torch.as_tensor(std, dtype=video.dtype).view(-1, 1, 1, 1)
    return (video * std + mean).clamp(0.0, 1.0)


def to_uint8(unit: torch.Tensor) -> np.ndarray:
    """(C, T, H, W) in [0, 1] to (T, H, W, C) bytes."""
    return (unit.clamp(0, 1) * 255.0).round().to(torch.uint8).permute(1, 2, 3, 0).numpy()


def write_frames(unit: torch.Tensor, out_dir: Path, gif_name: str = "clip.gif",
                 duration_ms: int = 125) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    frames = [Image.fromarray(f) for f in to_uint8(unit)]
    paths = []
    for t, img in enumerate(frames):
        p = out_dir / f"frame_{t:03d}.png"
        img.save(p)
        paths.append(p)
    gif = out_dir / gif_name
    frames[0].save(gif, save_all=True, append_images=frames[1:], duration=duration_ms, loop=0)
    return paths + [gif]


def _line_plot(path: Path, series: dict[str, list[float]], xlabel: str, ylabel: str, log: bool = False) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, ys in series.items():
        ax.plot(range(len(ys)), ys, label=name)
    if log:
        ax.set_yscale("symlog", linthresh=1e-3)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if len(series) > 1:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_trace(path: Path, trace: dict[str, list[float]]) -> None:
    terms = {k: trace[k] for k in ("ce", "priming", "coherence", "diversity", "total") if k in trace}
    _line_plot(path, terms, "iteration", "loss", log=True)


def plot_pairs(path: Path, synth: list[float], stimulus: list[float] | None, ylabel: str) -> None:
    series = {"synthesized": synth}
    if stimulus is not None:
        series["stimulus"] = stimulus
    _line_plot(path, series, "frame pair", ylabel)


def plot_pca(path: Path, points) -> None:
    fig, ax = plt.subplots(figsize=(4, 4))
    for tag, marker in (("real", "o"), ("synth", "x")):
        pts = np.array([(p[0], p[1]) for p in points if p[2] == tag]).reshape(-1, 2)
        if len(pts):
            ax.scatter(pts[:, 0], pts[:, 1], marker=marker, label=tag)
    ax.set_xlabel("PC 1")
    ax.set_ylabel("PC 2")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
