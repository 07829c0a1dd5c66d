"""On-disk run store: one directory per run under ``<root>/runs``."""
from __future__ import annotations

import csv
import json
import os
from datetime import datetime, timezone
from pathlib import Path

from leaps.engine import config_hash
from leaps.types import RunRecord, VideoTensor, read_video, write_video

TRACE_COLUMNS = ("iteration", "lr", "ce", "priming", "coherence", "diversity", "total", "target_prob")
ARTIFACTS = ("config.json", "trace.csv", "snapshots", "final.leapsvid", "frames", "report.json")


def default_root() -> Path:
    return Path(os.environ.get("LEAPS_STORE", "leaps_store"))


class RunStore:
    def __init__(self, root: str | Path | None = None):
        self.root = Path(root) if root is not None else default_root()

    @property
    def runs(self) -> Path:
        return self.root / "runs"

    @property
    def zoo(self) -> Path:
        return self.root / "zoo"

    def run_dir(self, run_id: str) -> Path:
        return self.runs / run_id

    def new_run_id(self, config: dict, seed: int) -> str:
        stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%f")
        base = f"{stamp}-s{seed}-{config_hash(config)}"
        run_id, n = base, 1
        while self.run_dir(run_id).exists():
            run_id, n = f"{base}-{n}", n + 1
        return run_id

    def save(self, record: RunRecord, config: dict, report_json: str | None = None) -> Path:
        """Write every artifact of a run; ``config`` must be enough to replay it."""
        d = self.run_dir(record.run_id)
        (d / "snapshots").mkdir(parents=True, exist_ok=False)
        (d / "frames").mkdir()
        (d / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True))
        write_trace(d / "trace.csv", record)
        for it, snap in record.snapshots:
            write_video(d / "snapshots" / f"iter_{it:06d}.leapsvid", snap)
        write_video(d / "final.leapsvid", record.final_video)
        if report_json is not None:
            (d / "report.json").write_text(report_json)
        return d

    def load_config(self, run_id: str) -> dict:
        return json.loads((self.run_dir(run_id) / "config.json").read_text())

    def load_final(self, run_id: str, value_range=(-3.0, 3.0)) -> VideoTensor:
        return read_video(self.run_dir(run_id) / "final.leapsvid", value_range)

    def load_snapshots(self, run_id: str, value_range=(-3.0, 3.0)) -> list[tuple[int, VideoTensor]]:
        snaps = sorted((self.run_dir(run_id) / "snapshots").glob("iter_*.leapsvid"))
        return [(int(p.stem.split("_")[1]), read_video(p, value_range)) for p in snaps]

    def is_complete(self, run_id: str) -> bool:
        d = self.run_dir(run_id)
        return all((d / a).exists() for a in ARTIFACTS)


def write_trace(path: Path, record: RunRecord) -> None:
    tr = record.loss_trace
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for i in range(record.num_recorded):
            w.writerow([i, repr(record.lr_trace[i])] +
                       [repr(tr[k][i]) for k in ("ce", "priming", "coherence", "diversity", "total")] +
                       [repr(record.score_trace[i])])


def read_trace(path: Path) -> dict[str, list[float]]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != TRACE_COLUMNS:
            raise ValueError(f"unexpected trace header {reader.fieldnames}")
        cols: dict[str, list[float]] = {k: [] for k in TRACE_COLUMNS}
        for row in reader:
            for k in TRACE_COLUMNS:
                cols[k].append(float(row[k]))
    return cols
