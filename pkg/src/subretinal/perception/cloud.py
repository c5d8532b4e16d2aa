"""Surface point clouds: first-occurrence extraction and shadow inpainting."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from enum import IntEnum
from pathlib import Path

import numpy as np

from ..errors import InpaintingError
from ..oct import B5Scan, Label
from .segmentation import first_occurrence


class Provenance(IntEnum):
    MISSING = 0
    MEASURED = 1
    INPAINTED = 2


@dataclass(frozen=True)
class SurfaceCloud:
    """Per-A-scan depths of the ILM, RPE and needle top surface.

    Depth arrays have shape ``(n_bscans, n_ascans)``. Whether a sample exists
    is recorded only in the matching ``*_src`` provenance array; depth values
    at missing samples are NaN and must not be read.
    """

    spacing: tuple[float, float, float]
    ilm: np.ndarray
    rpe: np.ndarray
    needle: np.ndarray
    ilm_src: np.ndarray
    rpe_src: np.ndarray
    needle_src: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.ilm.shape

    def positions(self) -> tuple[np.ndarray, np.ndarray]:
        """Lateral (x, y) of each sample, shape ``(n_bscans, n_ascans)`` each."""
        nb, na = self.shape
        dx, dy, _ = self.spacing
        y, x = np.meshgrid(np.arange(nb) * dy, np.arange(na) * dx, indexing="ij")
        return x, y

    def layer(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        return getattr(self, name), getattr(self, f"{name}_src")

    @property
    def layers_complete(self) -> bool:
        return bool(np.all(self.ilm_src != Provenance.MISSING) and np.all(self.rpe_src != Provenance.MISSING))

    def needle_points(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Needle samples as ``(points (N, 3), b (N,), a (N,))``, in raster order."""
        b, a = np.nonzero(self.needle_src != Provenance.MISSING)
        dx, dy, _ = self.spacing
        pts = np.column_stack([a * dx, b * dy, self.needle[b, a]])
        return pts, b, a

    def count(self, provenance: Provenance) -> int:
        return int(np.count_nonzero(self.ilm_src == provenance) + np.count_nonzero(self.rpe_src == provenance))


def extract_surfaces(scan: B5Scan) -> SurfaceCloud:
    """Take the shallowest voxel of each class along every A-scan."""
    dz = scan.spacing[2]
    # rasters fresh from the renderer carry their first-occurrence index
    first = scan.__dict__.get("_first_occurrence") or first_occurrence(scan.labels)
    arrays = {}
    for name, code in (("ilm", Label.ILM), ("rpe", Label.RPE), ("needle", Label.NEEDLE)):
        idx = first[code]
        present = idx >= 0
        arrays[name] = np.where(present, idx * dz, np.nan)
        arrays[f"{name}_src"] = np.where(present, Provenance.MEASURED, Provenance.MISSING).astype(np.int8)
    return SurfaceCloud(spacing=scan.spacing, **arrays)


def _median3(row: np.ndarray) -> np.ndarray:
    padded = np.concatenate([row[:1], row, row[-1:]])
    left, mid, right = padded[:-2], padded[1:-1], padded[2:]
    # median of three without sorting
    return np.maximum(np.minimum(left, mid), np.minimum(np.maximum(left, mid), right))


def _fill_row(xs: np.ndarray, depth: np.ndarray, have: np.ndarray) -> np.ndarray:
    # np.interp holds the end values beyond the outermost samples: flat extension
    filled = depth.copy()
    gap = ~have
    filled[gap] = np.interp(xs[gap], xs[have], depth[have])
    smooth = _median3(filled)
    filled[gap] = smooth[gap]
    return filled


def inpaint_layers(cloud: SurfaceCloud) -> SurfaceCloud:
    """Fill missing ILM/RPE samples B-scan by B-scan.

    Gaps are bridged by linear interpolation between the nearest measured
    samples on either side, gaps touching the scan edge are extended flat,
    and inpainted spans then get a 3-sample lateral median. A B-scan with no
    measured samples at all copies the filled profile of the nearest B-scan
    that has some.
    """
    nb, na = cloud.shape
    xs = np.arange(na) * cloud.spacing[0]
    updates = {}
    for name in ("ilm", "rpe"):
        depth, src = cloud.layer(name)
        have = src != Provenance.MISSING
        rows = [b for b in range(nb) if have[b].any()]
        if not rows:
            raise InpaintingError(f"{name.upper()} is absent from the whole scan")
        out = depth.copy()
        out_src = src.copy()
        for b in rows:
            if not have[b].all():
                out[b] = _fill_row(xs, depth[b], have[b])
                out_src[b, ~have[b]] = Provenance.INPAINTED
        for b in range(nb):
            if b in rows:
                continue
            donor = min(rows, key=lambda r: (abs(r - b), r))
            out[b] = out[donor]
            out_src[b] = Provenance.INPAINTED
        updates[name] = out
        updates[f"{name}_src"] = out_src
    return replace(cloud, **updates)


def write_cloud_csv(cloud: SurfaceCloud, path: str | Path) -> None:
    """Dump every present sample as ``b, a, class, depth_um, provenance`` rows."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["b", "a", "class", "depth_um", "provenance"])
        for name in ("needle", "ilm", "rpe"):
            depth, src = cloud.layer(name)
            for b, a in zip(*np.nonzero(src != Provenance.MISSING)):
                writer.writerow(
                    [int(b), int(a), name, f"{depth[b, a]:.4f}", Provenance(src[b, a]).name.lower()]
                )
