"""Export recorded per-frame label rasters as PNG images."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import MissingFramesError
from .runner import RAW_NAME, read_raw


def find_record(run_dir: str | Path, trial_id: str) -> dict:
    for record in read_raw(Path(run_dir) / RAW_NAME):
        if record["trial_id"] == trial_id:
            return record
    raise MissingFramesError(f"trial {trial_id!r} not found in {run_dir}")


def export_frames(record: dict, out_dir: str | Path, run_dir: str | Path = ".") -> Path:
    """Write ``frame<k>_b<b>.png`` for every B-scan of every frame plus ``index.csv``.

    PNG pixels hold the raw class codes (0 background, 1 needle, 2 ILM,
    3 RPE) with depth along rows. Exporting twice produces identical files.

    Raises:
        MissingFramesError: the trial was run without frame dumps, or the dump
            file has gone missing.
    """
    rel = record.get("frames_file")
    if not rel:
        raise MissingFramesError(
            f"trial {record.get('trial_id')!r} has no frame dump; rerun with --dump-frames"
        )
    path = Path(run_dir) / rel
    if not path.is_file():
        raise MissingFramesError(f"frame dump {path} does not exist")
    with np.load(path) as dump:
        labels = dump["labels"]
        timestamps = dump["timestamps"]

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for k in range(labels.shape[0]):
        for b in range(labels.shape[1]):
            name = f"frame{k:04d}_b{b}.png"
            Image.fromarray(np.ascontiguousarray(labels[k, b].T), mode="L").save(out / name)
            rows.append((k, b, f"{timestamps[k]:.6f}", name))
    index = out / "index.csv"
    with open(index, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "bscan", "t_acquired_s", "file"])
        w.writerows(rows)
    return index
