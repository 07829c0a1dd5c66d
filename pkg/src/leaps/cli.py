"""``leaps`` command-line interface.

Exit codes: 0 on success, 2 for configuration errors, 3 when a run fails.
"""
from __future__ import annotations

import json
import logging
import sys
from dataclasses import asdict, replace
from datetime import datetime, timezone
from pathlib import Path

import click
import torch

from leaps import ablation, export, runner
from leaps.errors import ConfigError, LeapsError
from leaps.hypersearch import GridSpec, grid_search, table_csv
from leaps.metrics import frame_pair_traces
from leaps.store import RunStore, read_trace
from leaps.types import ObjectiveConfig, write_video
from leaps.zoo.registry import ZOO, get_model, toy_dataset, train_entry

CONFIG_ERROR = 2
RUN_FAILURE = 3


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


class Ctx:
    def __init__(self, store: RunStore):
        self.store = store

    @property
    def zoo_dir(self) -> Path:
        return self.store.zoo


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        _fail(CONFIG_ERROR, f"config: cannot read {path}: {e}")
    if not isinstance(doc, dict):
        _fail(CONFIG_ERROR, "config: top level must be a JSON object")
    return doc


def _merge(ctx: click.Context, file_cfg: dict, flags: dict) -> dict:
    """Config-file values, overridden by flags the user actually passed."""
    merged = dict(file_cfg)
    for key, value in flags.items():
        source = ctx.get_parameter_source(key.replace("class", "class_"))
        if source is not None and source.name != "DEFAULT":
            merged[key] = value
        elif key not in merged and value is not None:
            merged[key] = value
    return merged


def _run(ctx: click.Context, config: dict) -> None:
    obj: Ctx = ctx.obj
    try:
        run_id, record = runner.run_and_store(config, obj.store, obj.zoo_dir)
    except ConfigError as e:
        _fail(CONFIG_ERROR, str(e))
    except LeapsError as e:
        _fail(RUN_FAILURE, f"run failed: {e}")
    tr = record.loss_trace
    click.echo(f"{run_id}  iterations={record.num_recorded} total={tr['total'][-1]:.4f} "
               f"target_prob={record.score_trace[-1]:.3f}")


@click.group()
@click.option("--store", "store_root", type=click.Path(file_okay=False), default=None,
              help="Run store root (default: $LEAPS_STORE or ./leaps_store).")
@click.option("--threads", type=click.IntRange(min=1), default=None, help="Bound on intra-run threads.")
@click.option("-v", "--verbose", is_flag=True)
@click.pass_context
def main(ctx: click.Context, store_root, threads, verbose):
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if threads:
        torch.set_num_threads(threads)
    ctx.obj = Ctx(RunStore(store_root))


@main.group()
def zoo():
    """Train toy classifiers or dump the synthetic dataset."""


@zoo.command("train")
@click.argument("name", type=click.Choice(sorted(ZOO)))
@click.option("--epochs", type=click.IntRange(min=0), default=None)
@click.option("--seed", type=int, default=None)
@click.pass_obj
def zoo_train(obj: Ctx, name, epochs, seed):
    try:
        path = train_entry(name, obj.zoo_dir, epochs, seed)
    except LeapsError as e:
        _fail(RUN_FAILURE, f"training failed: {e}")
    model = get_model(str(path), obj.zoo_dir)
    click.echo(f"{name}  val_accuracy={model.meta['val_accuracy']:.3f} path={path}")


@zoo.command("generate")
@click.option("--split", type=click.Choice(["val", "train"]), default="val")
@click.option("--out", type=click.Path(file_okay=False), default=None)
@click.pass_obj
def zoo_generate(obj: Ctx, split, out):
    ds = toy_dataset()
    out = Path(out) if out else obj.store.root / "data" / split
    out.mkdir(parents=True, exist_ok=True)
    xs, ys = (ds.val_x, ds.val_labels) if split == "val" else (ds.train_x, ds.train_labels)
    with open(out / "labels.csv", "w") as f:
        f.write("index,label,name\n")
        for i, (x, y) in enumerate(zip(xs, ys)):
            write_video(out / f"{i:05d}.leapsvid", x)
            f.write(f"{i},{int(y)},{ds.class_names[int(y)]}\n")
    click.echo(f"{split}  clips={len(xs)} dir={out}")


def _objective_flags(f):
    opts = [
        click.option("--config", "config_file", type=click.Path(dir_okay=False), default=None),
        click.option("--model", default="toy_conv"),
        click.option("--class", "class_", type=int, default=None),
        click.option("--seed", type=int, default=None),
        click.option("--iterations", type=int, default=2000),
        click.option("--base-lr", "base_lr", type=float, default=0.2),
        click.option("--frames", type=int, default=8),
        click.option("--size", type=int, default=32),
        click.option("--snapshot-every", "snapshot_every", type=int, default=0),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


@main.command()
@_objective_flags
@click.option("--verifier", default="toy_conv_b")
@click.option("--stimulus", default=None, help="Stimulus clip, e.g. val:17.")
@click.option("--distance", default="jvs")
@click.option("--delta", type=float, default=1.0)
@click.option("--r", "r", type=float, default=5e-3)
@click.option("--lambda1", type=float, default=1.0)
@click.option("--lambdaL", "lambdaL", type=float, default=0.3)
@click.option("--fraction", type=float, default=1.0, help="Fraction of priming layers used.")
@click.option("--ce/--no-ce", default=True)
@click.option("--priming/--no-priming", default=True)
@click.option("--coherence/--no-coherence", default=True)
@click.option("--diversity/--no-diversity", default=True)
@click.pass_context
def synthesize(ctx, config_file, class_, **flags):
    """Synthesize one video by primed model inversion."""
    flags["class"] = class_
    config = _merge(ctx, _load_config_file(config_file), flags)
    config["kind"] = "leaps"
    _run(ctx, config)


@main.command()
@click.argument("kind", type=click.Choice(["deepdream3d", "am3d"]))
@_objective_flags
@click.option("--alpha-tv", "alpha_tv", type=float, default=1e-4)
@click.option("--alpha-l2", "alpha_l2", type=float, default=1e-5)
@click.pass_context
def baseline(ctx, kind, config_file, class_, **flags):
    """Run a stimulus-free baseline (3D DeepDream or 3D activation maximization)."""
    flags["class"] = class_
    config = _merge(ctx, _load_config_file(config_file), flags)
    config["kind"] = kind
    _run(ctx, config)


def _require_run(obj: Ctx, run_id: str) -> None:
    if not obj.store.run_dir(run_id).is_dir():
        _fail(CONFIG_ERROR, f"run_id: no run {run_id!r} under {obj.store.runs}")


@main.command()
@click.argument("run_ids", nargs=-1, required=True)
@click.pass_obj
def evaluate(obj: Ctx, run_ids):
    """Recompute report.json for stored runs."""
    for run_id in run_ids:
        _require_run(obj, run_id)
        try:
            text = runner.evaluate_stored(obj.store, run_id, obj.zoo_dir)
        except ConfigError as e:
            _fail(CONFIG_ERROR, str(e))
        (obj.store.run_dir(run_id) / "report.json").write_text(text)
        doc = json.loads(text)
        click.echo(f"{run_id}  top1_model={doc['top1_model']:.0f} top1_verifier={doc['top1_verifier']:.0f} "
                   f"IS={doc['is_mean']:.3f}")


@main.command()
@click.option("--model", default="toy_conv")
@click.option("--verifier", default="toy_conv_b")
@click.option("--seed", type=int, default=0)
@click.option("--probe-iterations", type=click.IntRange(min=1), default=1000)
@click.option("--classes", default="0,1,2", help="Comma-separated probe classes, one stimulus each.")
@click.option("--lambda1", "lambda1_values", default=None, help="Comma-separated override of the lambda1 grid.")
@click.option("--lambdaL", "lambdaL_values", default=None)
@click.option("--r", "r_values", default=None)
@click.pass_obj
def gridsearch(obj: Ctx, model, verifier, seed, probe_iterations, classes, lambda1_values, lambdaL_values,
               r_values):
    """Grid search over (lambda1, lambdaL, r); writes the table as CSV."""
    def floats(text, field):
        try:
            return tuple(float(v) for v in text.split(","))
        except ValueError:
            _fail(CONFIG_ERROR, f"{field}: expected comma-separated numbers, got {text!r}")

    grid = GridSpec(probe_iterations=probe_iterations)
    for text, field in ((lambda1_values, "lambda1_values"), (lambdaL_values, "lambdaL_values"),
                        (r_values, "r_values")):
        if text:
            grid = replace(grid, **{field: floats(text, field)})
    ds = toy_dataset()
    try:
        ys = [int(c) for c in classes.split(",")]
        if any(not 0 <= y < ds.spec.num_classes for y in ys):
            raise ValueError
    except ValueError:
        _fail(CONFIG_ERROR, f"classes: expected class indices in [0, {ds.spec.num_classes}), got {classes!r}")
    try:
        m, v = get_model(model, obj.zoo_dir), get_model(verifier, obj.zoo_dir)
    except KeyError as e:
        _fail(CONFIG_ERROR, f"model: {e}")
    stim = torch.stack([ds.val_x[ds.stimuli_for(y)[0]] for y in ys])
    try:
        best, rows = grid_search(m, v, stim, ys, grid, seed, clamp_bounds=ds.clamp_bounds)
    except LeapsError as e:
        _fail(RUN_FAILURE, f"grid search failed: {e}")
    out = obj.store.root / "grids" / f"{datetime.now(timezone.utc):%Y%m%dT%H%M%S%f}-{model}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(table_csv(rows))
    click.echo(f"{out.stem}  best lambda1={best.lambda1:g} lambdaL={best.lambdaL:g} r={best.r:g} "
               f"loss={best.mean_loss:.4f} table={out}")


@main.command()
@click.argument("protocol", type=click.Choice(list(ablation.PROTOCOLS) + ["baselines"]))
@click.option("--model", default="toy_conv")
@click.option("--verifier", default="toy_conv_b")
@click.option("--seeds", type=click.IntRange(min=1), default=5)
@click.option("--per-class", type=click.IntRange(min=1), default=2)
@click.option("--iterations", type=click.IntRange(min=1), default=500)
@click.option("--r", "r", type=float, default=None)
@click.pass_obj
def ablate(obj: Ctx, protocol, model, verifier, seeds, per_class, iterations, r):
    """Run an ablation protocol and print its comparison table."""
    try:
        m, v = get_model(model, obj.zoo_dir), get_model(verifier, obj.zoo_dir)
    except KeyError as e:
        _fail(CONFIG_ERROR, f"model: {e}")
    cfg = ObjectiveConfig(num_iterations=iterations)
    if r is not None:
        cfg = replace(cfg, reg_scale=r)
    setup = ablation.Setup(toy_dataset(), m, v, cfg, per_class=per_class, seeds=tuple(range(seeds)))
    try:
        rows = ablation.run_protocol(protocol, setup)
    except LeapsError as e:
        _fail(RUN_FAILURE, f"ablation failed: {e}")
    table = ablation.format_table(rows)
    out = obj.store.root / "ablations" / f"{datetime.now(timezone.utc):%Y%m%dT%H%M%S%f}-{protocol}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps({"protocol": protocol, "objective": asdict(cfg), "model": model,
                               "verifier": verifier, "rows": [row.summary() for row in rows]}, indent=2))
    click.echo(table)
    click.echo(f"{out.stem}  rows={len(rows)} table={out}")


@main.command("export")
@click.argument("run_id")
@click.pass_obj
def export_cmd(obj: Ctx, run_id):
    """Write frame PNGs, a GIF and trace/PSNR/SSIM/PCA plots for a stored run."""
    _require_run(obj, run_id)
    store = obj.store
    d = store.run_dir(run_id)
    ds = toy_dataset()
    unit = export.to_unit(store.load_final(run_id, ds.value_range).data, ds.mean, ds.std)
    files = export.write_frames(unit, d / "frames")
    plots = d / "plots"
    plots.mkdir(exist_ok=True)
    export.plot_trace(plots / "trace.png", read_trace(d / "trace.csv"))
    report = json.loads((d / "report.json").read_text()) if (d / "report.json").exists() else {}
    psnr, ssim = frame_pair_traces(unit)
    export.plot_pairs(plots / "psnr.png", psnr, report.get("stimulus_psnr"), "PSNR (dB)")
    export.plot_pairs(plots / "ssim.png", ssim, report.get("stimulus_ssim"), "SSIM")
    points = report.get("embedding") or []
    export.plot_pca(plots / "pca.png", points)
    click.echo(f"{run_id}  frames={len(files) - 1} gif=1 plots={len(export.PLOTS)} dir={d}")


if __name__ == "__main__":
    main()
