"""Replayable run configurations: validation, execution and stored-run evaluation.

A run config is a flat JSON object. Storing it next to the run is enough to
re-execute the run exactly, because models are named zoo entries (trained
deterministically) or checkpoint paths and stimuli are dataset indices.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn as nn

from leaps.capture import param_checksum
from leaps.engine import run_baseline, synthesize
from leaps.errors import ConfigError
from leaps.export import to_unit
from leaps.metrics import EvalReport, evaluate, frame_pair_traces
from leaps.store import RunStore
from leaps.types import DISTANCES, ObjectiveConfig, PrimingSchedule, RunRecord, VideoTensor
from leaps.zoo.data import SyntheticDataset
from leaps.zoo.registry import get_model, toy_dataset

KINDS = ("leaps", "deepdream3d", "am3d")

RUN_DEFAULTS = {
    "kind": "leaps",
    "model": "toy_conv",
    "verifier": "toy_conv_b",
    "class": None,
    "stimulus": None,
    "seed": None,
    "iterations": 2000,
    "base_lr": 0.2,
    "distance": "jvs",
    "delta": 1.0,
    "r": 5e-3,
    "lambda1": 1.0,
    "lambdaL": 0.3,
    "fraction": 1.0,
    "ce": True,
    "priming": True,
    "coherence": True,
    "diversity": True,
    "frames": 8,
    "size": 32,
    "snapshot_every": 0,
    "alpha_tv": 1e-4,
    "alpha_l2": 1e-5,
}

_NUMERIC = {"iterations": int, "seed": int, "class": int, "frames": int, "size": int, "snapshot_every": int,
            "base_lr": float, "delta": float, "r": float, "lambda1": float, "lambdaL": float,
            "fraction": float, "alpha_tv": float, "alpha_l2": float}
_BOOL = ("ce", "priming", "coherence", "diversity")


def parse_stimulus(spec: str) -> tuple[str, int]:
    split, _, idx = str(spec).partition(":")
    if split != "val" or not idx.isdigit():
        raise ConfigError("stimulus", f"expected 'val:<index>', got {spec!r}")
    return split, int(idx)


def validate(config: dict) -> dict:
    """Fill defaults, coerce types and reject unknown or inconsistent fields."""
    unknown = sorted(set(config) - set(RUN_DEFAULTS))
    if unknown:
        raise ConfigError(unknown[0], "unknown field")
    cfg = {**RUN_DEFAULTS, **{k: v for k, v in config.items() if v is not None}}
    for key, typ in _NUMERIC.items():
        if cfg[key] is None:
            continue
        try:
            cfg[key] = typ(cfg[key])
        except (TypeError, ValueError):
            raise ConfigError(key, f"expected {typ.__name__}, got {cfg[key]!r}") from None
    for key in _BOOL:
        if not isinstance(cfg[key], bool):
            raise ConfigError(key, f"expected true/false, got {cfg[key]!r}")
    if cfg["kind"] not in KINDS:
        raise ConfigError("kind", f"must be one of {KINDS}")
    if cfg["seed"] is None:
        raise ConfigError("seed", "is required")
    if cfg["class"] is None:
        raise ConfigError("class", "is required")
    if cfg["distance"] not in DISTANCES:
        raise ConfigError("distance", f"must be one of {DISTANCES}")
    for key in ("iterations", "frames", "size"):
        if cfg[key] < 1:
            raise ConfigError(key, "must be >= 1")
    for key in ("base_lr",):
        if cfg[key] <= 0:
            raise ConfigError(key, "must be positive")
    for key in ("r", "delta", "alpha_tv", "alpha_l2", "snapshot_every"):
        if cfg[key] < 0:
            raise ConfigError(key, "must be non-negative")
    if not 0 < cfg["fraction"] <= 1:
        raise ConfigError("fraction", "must lie in (0, 1]")
    if cfg["kind"] == "leaps":
        if cfg["stimulus"] is None:
            raise ConfigError("stimulus", "is required for LEAPS runs")
        parse_stimulus(cfg["stimulus"])
    else:
        cfg["stimulus"] = None
    return cfg


def objective_config(cfg: dict) -> ObjectiveConfig:
    try:
        return ObjectiveConfig(distance=cfg["distance"], delta=cfg["delta"], reg_scale=cfg["r"],
                               enable_priming=cfg["priming"], enable_coherence=cfg["coherence"],
                               enable_diversity=cfg["diversity"], enable_ce=cfg["ce"],
                               num_iterations=cfg["iterations"], base_lr=cfg["base_lr"],
                               snapshot_every=cfg["snapshot_every"])
    except ValueError as e:
        raise ConfigError("objective", str(e)) from None


@dataclass
class RunContext:
    dataset: SyntheticDataset
    model: nn.Module
    verifier: nn.Module | None
    stimulus: torch.Tensor | None


def load_context(cfg: dict, zoo_dir) -> RunContext:
    ds = toy_dataset()
    num_classes = ds.spec.num_classes
    if not 0 <= cfg["class"] < num_classes:
        raise ConfigError("class", f"must lie in [0, {num_classes})")
    try:
        model = get_model(cfg["model"], zoo_dir)
    except KeyError as e:
        raise ConfigError("model", str(e)) from None
    verifier = None
    if cfg["kind"] == "leaps" and cfg["verifier"]:
        try:
            verifier = get_model(cfg["verifier"], zoo_dir)
        except KeyError as e:
            raise ConfigError("verifier", str(e)) from None
    stimulus = None
    if cfg["stimulus"] is not None:
        _, idx = parse_stimulus(cfg["stimulus"])
        if idx >= len(ds.val_labels):
            raise ConfigError("stimulus", f"index {idx} out of range (val has {len(ds.val_labels)} clips)")
        if int(ds.val_labels[idx]) != cfg["class"]:
            raise ConfigError("stimulus", f"val:{idx} belongs to class {int(ds.val_labels[idx])}, "
                                          f"not {cfg['class']}")
        stimulus = ds.val_x[idx]
    return RunContext(ds, model, verifier, stimulus)


def execute(config: dict, zoo_dir) -> tuple[RunRecord, RunContext, dict]:
    """Run a validated config; returns the record, its context and the full stored config."""
    config = dict(config)
    expected = config.pop("checksums", None)
    cfg = validate(config)
    ctx = load_context(cfg, zoo_dir)
    if expected:
        for role, model in (("model", ctx.model), ("verifier", ctx.verifier)):
            if model is not None and expected.get(role) not in (None, param_checksum(model)):
                raise ConfigError(role, "parameter checksum differs from the one stored with the run")
    ocfg = objective_config(cfg)
    shape = (3, cfg["frames"], cfg["size"], cfg["size"])
    common = dict(shape=shape, clamp_bounds=ctx.dataset.clamp_bounds)
    if cfg["kind"] == "leaps":
        sched = PrimingSchedule(tuple(ctx.model.capture_layers), cfg["lambda1"], cfg["lambdaL"], cfg["fraction"])
        record = synthesize(ctx.model, ctx.verifier, [ctx.stimulus], cfg["class"], ocfg, sched, cfg["seed"],
                            **common)
    else:
        record = run_baseline(cfg["kind"], ctx.model, cfg["class"], ocfg, cfg["seed"],
                              alpha_tv=cfg["alpha_tv"], alpha_l2=cfg["alpha_l2"], **common)
    stored = dict(cfg, checksums={"model": param_checksum(ctx.model),
                                  "verifier": param_checksum(ctx.verifier) if ctx.verifier is not None else None})
    return record, ctx, stored


def report_for(video: VideoTensor | torch.Tensor, cfg: dict, ctx: RunContext, zoo_dir) -> EvalReport:
    """Deterministic evaluation of one stored video against the run's models."""
    ds = ctx.dataset
    verifier = ctx.verifier or get_model(cfg.get("verifier") or RUN_DEFAULTS["verifier"], zoo_dir)
    x = getattr(video, "data", video).unsqueeze(0)
    reference = ds.val_x[torch.as_tensor(ds.stimuli_for(cfg["class"]))]
    report = evaluate(x, [cfg["class"]], ctx.model, verifier, to_unit=lambda v: to_unit(v, ds.mean, ds.std),
                      n_splits=1, reference=reference)
    if ctx.stimulus is not None:
        psnr, ssim = frame_pair_traces(to_unit(ctx.stimulus, ds.mean, ds.std))
        report.extra["stimulus_psnr"], report.extra["stimulus_ssim"] = psnr, ssim
    return report


def report_json(report: EvalReport) -> str:
    doc = json.loads(report.to_json())
    doc.update(report.extra)
    return json.dumps(doc, indent=2, sort_keys=True)


def evaluate_stored(store: RunStore, run_id: str, zoo_dir) -> str:
    """Recompute a stored run's report.json text from its final video."""
    run_cfg = validate({k: v for k, v in store.load_config(run_id).items() if k != "checksums"})
    ctx = load_context(run_cfg, zoo_dir)
    video = store.load_final(run_id, ctx.dataset.value_range)
    return report_json(report_for(video, run_cfg, ctx, zoo_dir))


def run_and_store(config: dict, store: RunStore, zoo_dir) -> tuple[str, RunRecord]:
    record, ctx, stored = execute(config, zoo_dir)
    record.run_id = store.new_run_id(stored, stored["seed"])
    text = report_json(report_for(record.final_video, stored, ctx, zoo_dir))
    store.save(record, stored, text)
    return record.run_id, record


def stored_config_path(store: RunStore, run_id: str) -> Path:
    return store.run_dir(run_id) / "config.json"
