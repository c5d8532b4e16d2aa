"""Batch execution of the experiment grid, aggregation and result files."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from ..simloop import TrialOutcome, run_trial, write_trajectory_csv
from .config import ExperimentConfig, TrialSpec, dump_config, grid_trials

RAW_NAME = "raw.jsonl"
SUMMARY_NAME = "summary.csv"
TABLE_NAME = "table.txt"
CONFIG_NAME = "config.yaml"
FRAMES_DIR = "frames"
TRAJECTORIES_DIR = "trajectories"

SUMMARY_COLUMNS = [
    "mode",
    "target_p",
    "v_max_mm_s",
    "n_trials",
    "n_failed",
    "mean_final_axial_error_um",
    "std_final_axial_error_um",
    "mean_final_p",
    "std_final_p",
    "bleb_success",
    "bleb_success_count",
    "mean_duration_s",
    "mean_overshoot_um",
]


@dataclass(frozen=True)
class CellSummary:
    mode: str
    target_p: float
    v_max: float
    n: int  # completed trials
    n_failed: int
    mean_error: float
    std_error: float
    mean_p: float
    std_p: float
    successes: int
    mean_duration: float
    mean_overshoot: float

    @property
    def bleb_success(self) -> str:
        return f"{self.successes}/{self.n}"

    def row(self) -> list[str]:
        return [
            self.mode,
            f"{self.target_p:.2f}",
            f"{self.v_max:.2f}",
            str(self.n),
            str(self.n_failed),
            _fmt(self.mean_error),
            _fmt(self.std_error),
            _fmt(self.mean_p),
            _fmt(self.std_p),
            self.bleb_success,
            str(self.successes),
            _fmt(self.mean_duration),
            _fmt(self.mean_overshoot),
        ]


@dataclass
class GridResult:
    records: list[dict]
    summaries: list[CellSummary]
    table: str


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else f"{x:.6f}"


def _mean(values: list[float]) -> float:
    return float(np.mean(values)) if values else math.nan


def _std(values: list[float]) -> float:
    """Sample standard deviation; a single trial has no spread."""
    if not values:
        return math.nan
    if len(values) == 1:
        return 0.0
    return float(np.std(values, ddof=1))


def _execute(cfg: ExperimentConfig, spec: TrialSpec, record_frames: bool) -> tuple[dict, TrialOutcome | None]:
    """Run one trial; failures come back as a record rather than an exception."""
    base = {
        "trial_id": spec.trial_id,
        "mode": spec.mode,
        "target_p": spec.target_p,
        "v_max_mm_s": spec.v_max,
        "trial": spec.index,
        "seed": spec.seed,
        "thickness_um": spec.phantom.thickness_um,
        "tilt_deg": list(spec.phantom.tilt_deg),
        "puncture_threshold_um": spec.phantom.tissue.puncture_threshold_um,
    }
    try:
        outcome = run_trial(
            spec.phantom,
            cfg.scan,
            cfg.corruption,
            cfg.control(spec.mode, spec.v_max),
            cfg.latency,
            spec.target_p,
            spec.seed,
            cfg.trial_settings(record_frames),
        )
    except Exception as exc:  # a failed trial must be reported, never skipped
        return {**base, "status": "failed", "error": f"{type(exc).__name__}: {exc}"}, None
    return {**base, "status": "ok", **outcome.to_record()}, outcome


def run_grid(
    cfg: ExperimentConfig,
    out_dir: str | Path | None = None,
    *,
    parallel: int = 1,
    dump_frames: bool = False,
    dump_trajectories: bool = False,
    progress: Callable[[dict], None] | None = None,
) -> GridResult:
    """Run every cell of the grid and, if ``out_dir`` is given, write the result files.

    Within a cell the first failing trial ends the cell: it is recorded as a
    ``status = failed`` row and the remaining trials of that cell are not run.
    Results are ordered by (cell, trial) regardless of ``parallel``.
    """
    cells = list(grid_trials(cfg))
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            futures = [[pool.submit(_execute, cfg, s, dump_frames) for s in cell] for cell in cells]
            results = [[f.result() for f in cell] for cell in futures]
    else:
        results = None

    records: list[dict] = []
    for ci, cell in enumerate(cells):
        for ti, spec in enumerate(cell):
            record, outcome = results[ci][ti] if results is not None else _execute(cfg, spec, dump_frames)
            if out is not None and outcome is not None:
                if dump_frames:
                    record["frames_file"] = _write_frame_dump(out, spec.trial_id, outcome, cfg)
                if dump_trajectories:
                    tdir = out / TRAJECTORIES_DIR
                    tdir.mkdir(exist_ok=True)
                    write_trajectory_csv(outcome, tdir / f"{spec.trial_id}.csv")
            records.append(record)
            if progress is not None:
                progress(record)
            if record["status"] != "ok":
                break

    summaries = summarize_records(records)
    table = format_table(summaries)
    if out is not None:
        write_raw(records, out / RAW_NAME)
        write_summary(summaries, out / SUMMARY_NAME)
        (out / TABLE_NAME).write_text(table, encoding="utf-8")
        dump_config(cfg, out / CONFIG_NAME)
    return GridResult(records, summaries, table)


def _write_frame_dump(out: Path, trial_id: str, outcome: TrialOutcome, cfg: ExperimentConfig) -> str:
    frames = outcome.frames or []
    fdir = out / FRAMES_DIR
    fdir.mkdir(exist_ok=True)
    shape = cfg.scan.shape
    labels = np.stack([f.labels for f in frames]) if frames else np.zeros((0, *shape), np.uint8)
    rel = f"{FRAMES_DIR}/{trial_id}.npz"
    np.savez_compressed(
        out / rel,
        labels=labels,
        timestamps=np.array([f.timestamp for f in frames], dtype=float),
        spacing=np.array(cfg.scan.spacing, dtype=float),
    )
    return rel


# -- aggregation -------------------------------------------------------------


def summarize_records(records: Iterable[dict]) -> list[CellSummary]:
    """Per-cell aggregates, cells in first-appearance order."""
    cells: dict[tuple, list[dict]] = {}
    for r in records:
        cells.setdefault((r["mode"], r["target_p"], r["v_max_mm_s"]), []).append(r)
    out = []
    for (mode, p, v), rows in cells.items():
        ok = [r for r in rows if r["status"] == "ok"]
        err = [r["final_axial_error_um"] for r in ok]
        fp = [r["final_p"] for r in ok]
        out.append(
            CellSummary(
                mode=mode,
                target_p=p,
                v_max=v,
                n=len(ok),
                n_failed=len(rows) - len(ok),
                mean_error=_mean(err),
                std_error=_std(err),
                mean_p=_mean(fp),
                std_p=_std(fp),
                successes=sum(bool(r["bleb_success_proxy"]) for r in ok),
                mean_duration=_mean([r["duration_s"] for r in ok]),
                mean_overshoot=_mean([r["overshoot_um"] for r in ok]),
            )
        )
    return out


def format_table(summaries: list[CellSummary]) -> str:
    """Comparison table: one block per controller, rows v_max, columns target p."""
    ps = sorted({s.target_p for s in summaries})
    lines = []
    for mode in dict.fromkeys(s.mode for s in summaries):
        lines.append(f"{mode}: final axial error (um), mean +/- std [bleb k/n]")
        head = f"{'v_max (mm/s)':>13}" + "".join(f"{f'p = {p:.2f}':>26}" for p in ps)
        lines.append(head)
        for v in sorted({s.v_max for s in summaries if s.mode == mode}):
            cells = []
            for p in ps:
                match = [s for s in summaries if (s.mode, s.target_p, s.v_max) == (mode, p, v)]
                if not match:
                    cells.append(f"{'-':>26}")
                    continue
                s = match[0]
                txt = f"{s.mean_error:.1f} +/- {s.std_error:.1f} [{s.bleb_success}]"
                if s.n_failed:
                    txt += " !"
                cells.append(f"{txt:>26}")
            lines.append(f"{v:>13.2f}" + "".join(cells))
        total = sum(s.successes for s in summaries if s.mode == mode)
        n = sum(s.n for s in summaries if s.mode == mode)
        errs = [s.mean_error for s in summaries if s.mode == mode and s.n]
        lines.append(f"{'overall':>13}  bleb {total}/{n}, mean of cell errors {_mean(errs):.1f} um")
        lines.append("")
    if any(s.n_failed for s in summaries):
        lines.append("! cell aborted by a failed trial; see raw records")
    return "\n".join(lines)


# -- files -------------------------------------------------------------------


def write_raw(records: list[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def read_raw(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def summary_csv(summaries: list[CellSummary]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for s in summaries:
        w.writerow(s.row())
    return buf.getvalue()


def write_summary(summaries: list[CellSummary], path: str | Path) -> None:
    Path(path).write_text(summary_csv(summaries), encoding="utf-8")
