"""Exhaustive grid search over the priming weights and regularizer scale."""
from __future__ import annotations

import csv
import io
import itertools
import logging
import math
from dataclasses import dataclass, replace

import torch
import torch.nn as nn

from leaps.engine import synthesize_batch
from leaps.errors import LeapsError
from leaps.types import ObjectiveConfig, PrimingSchedule

log = logging.getLogger(__name__)

CSV_HEADER = ("lambda1", "lambdaL", "r", "mean_loss", "status")


@dataclass(frozen=True)
class GridSpec:
    lambda1_values: tuple[float, ...] = (0.5, 0.625, 0.75, 0.875, 1.0)
    lambdaL_values: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5)
    r_values: tuple[float, ...] = (1e-3, 2.5e-3, 5e-3, 7.5e-3, 1e-2)
    probe_iterations: int = 1000

    def points(self):
        return list(itertools.product(self.lambda1_values, self.lambdaL_values, self.r_values))


@dataclass(frozen=True)
class GridRow:
    lambda1: float
    lambdaL: float
    r: float
    mean_loss: float
    status: str = "ok"


def _sort_key(row: GridRow):
    return (row.mean_loss, -row.lambda1, row.r, row.lambdaL)


def grid_search(model_ref: nn.Module, verifier_ref: nn.Module, stimulus_set, y_set, grid: GridSpec | None = None,
                seed: int = 0, base_cfg: ObjectiveConfig | None = None, layer_ids=None,
                **synth_kwargs) -> tuple[GridRow, list[GridRow]]:
    """Probe every (lambda1, lambdaL, r) point and pick the lowest mean final loss.

    ``stimulus_set`` is a ``(S, C, T, H, W)`` tensor (or list) of stimuli with
    targets ``y_set``; each grid point runs one batched probe over all of them.
    A point whose probe fails (non-finite loss) is marked ``failed`` and skipped
    in the selection.
    """
    grid = grid or GridSpec()
    ys = list(y_set)
    if not grid.points() or len(stimulus_set) == 0 or not ys:
        raise ValueError("grid and stimulus set must be non-empty")
    stim = torch.stack(list(stimulus_set)) if not isinstance(stimulus_set, torch.Tensor) else stimulus_set
    base_cfg = base_cfg or ObjectiveConfig()
    layers = tuple(layer_ids or model_ref.capture_layers)
    seeds = [seed * 1000 + i for i in range(len(ys))]
    rows = []
    for lam1, lamL, r in grid.points():
        cfg = replace(base_cfg, reg_scale=r, num_iterations=grid.probe_iterations)
        sched = PrimingSchedule(layers, lam1, lamL)
        try:
            recs = synthesize_batch(model_ref, verifier_ref, [stim], ys, cfg, sched, seeds, **synth_kwargs)
            loss = sum(rec.loss_trace["total"][-1] for rec in recs) / len(recs)
            if not math.isfinite(loss):
                raise LeapsError("non-finite probe loss")
            rows.append(GridRow(lam1, lamL, r, loss))
        except (LeapsError, RuntimeError, ValueError) as e:
            log.warning("grid point (%g, %g, %g) failed: %s", lam1, lamL, r, e)
            rows.append(GridRow(lam1, lamL, r, float("nan"), "failed"))
    ok = [row for row in rows if row.status == "ok"]
    if not ok:
        raise LeapsError("every grid point failed")
    return min(ok, key=_sort_key), rows


def table_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for row in rows:
        w.writerow([repr(row.lambda1), repr(row.lambdaL), repr(row.r), repr(row.mean_loss), row.status])
    return buf.getvalue()


def read_table_csv(text: str) -> list[GridRow]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_HEADER:
        raise ValueError(f"unexpected CSV header {reader.fieldnames}")
    return [GridRow(float(r["lambda1"]), float(r["lambdaL"]), float(r["r"]), float(r["mean_loss"]), r["status"])
            for r in reader]
