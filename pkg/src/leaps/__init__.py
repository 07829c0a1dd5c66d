"""Data-free inversion of video classifiers primed by a single stimulus clip."""
from leaps.capture import CaptureSession, capture, param_checksum, read_bn_stats, tokens_to_volume, volume_to_tokens
from leaps.engine import cosine_lr, init_input, run_baseline, run_baseline_batch, synthesize, synthesize_batch
from leaps.metrics import EvalReport, evaluate, inception_score, psnr_pair, ssim_pair, top1
from leaps.objectives import (Objective, coherence_loss, diversity_loss, jvs_similarity, l2_prior, priming_loss,
                              total_loss, tv3d)
from leaps.types import (ActivationRecord, ClassLabel, ObjectiveConfig, PrimingSchedule, RunRecord, VideoTensor,
                         read_video, write_video)

__version__ = "0.1.0"

__all__ = [
    "ActivationRecord", "CaptureSession", "ClassLabel", "EvalReport", "Objective", "ObjectiveConfig",
    "PrimingSchedule", "RunRecord", "VideoTensor", "capture", "coherence_loss", "cosine_lr", "diversity_loss",
    "evaluate", "inception_score", "init_input", "jvs_similarity", "l2_prior", "param_checksum", "priming_loss",
    "psnr_pair", "read_bn_stats", "read_video", "run_baseline", "run_baseline_batch", "ssim_pair", "synthesize",
    "synthesize_batch", "tokens_to_volume", "top1", "total_loss", "tv3d", "volume_to_tokens", "write_video",
]
