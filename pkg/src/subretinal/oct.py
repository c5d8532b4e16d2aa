"""B5-scan synthesis by vertical raycasting through the phantom.

A B5-scan is ``n_bscans`` parallel B-scans spread evenly across the minor
lateral extent. Every A-scan column receives at most one voxel per class:
the needle's top surface (the first reflective interface OCT sees), the ILM
and the RPE. Layers lying below any part of the needle in a column are
suppressed, which reproduces the metallic shadow that perception later
inpaints.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, DomainError
from .phantom import NeedlePose, RetinaState


class Label(IntEnum):
    BACKGROUND = 0
    NEEDLE = 1
    ILM = 2
    RPE = 3


@dataclass(frozen=True)
class ScanConfig:
    lateral_extent_mm: tuple[float, float] = (4.0, 0.1)
    n_bscans: int = 5
    n_ascans: int = 500
    depth_pixels: int = 1024
    depth_range_mm: float = 4.0
    acquisition_time_ms: float = 115.0

    def __post_init__(self) -> None:
        if self.n_bscans < 2:
            raise ConfigError("a B5-scan needs at least 2 B-scans")
        if self.n_ascans < 2 or self.depth_pixels < 1:
            raise ConfigError("raster dimensions must be positive")
        if min(self.lateral_extent_mm) <= 0 or self.depth_range_mm <= 0:
            raise ConfigError("scan extents must be positive")
        if self.acquisition_time_ms <= 0:
            raise ConfigError("acquisition_time_ms must be positive")

    @property
    def extent_um(self) -> tuple[float, float]:
        return (self.lateral_extent_mm[0] * 1000.0, self.lateral_extent_mm[1] * 1000.0)

    @property
    def spacing(self) -> tuple[float, float, float]:
        """(lateral A-scan pitch, inter-B-scan pitch, axial voxel) in micrometres."""
        ex, ey = self.extent_um
        return (
            ex / (self.n_ascans - 1),
            ey / (self.n_bscans - 1),
            self.depth_range_mm * 1000.0 / self.depth_pixels,
        )

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n_bscans, self.n_ascans, self.depth_pixels)

    def column_positions(self) -> tuple[np.ndarray, np.ndarray]:
        """Lateral (x, y) of every A-scan, each of shape ``(n_bscans, n_ascans)``."""
        dx, dy, _ = self.spacing
        xs = np.arange(self.n_ascans) * dx
        ys = np.arange(self.n_bscans) * dy
        y, x = np.meshgrid(ys, xs, indexing="ij")
        return x, y


@dataclass(frozen=True)
class B5Scan:
    labels: np.ndarray  # (n_bscans, n_ascans, depth_pixels) uint8 class codes
    spacing: tuple[float, float, float]
    timestamp: float = 0.0

    def __post_init__(self) -> None:
        labels = np.ascontiguousarray(self.labels, dtype=np.uint8)
        if labels.ndim != 3:
            raise ValueError("labels must be a 3D raster")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.labels.shape


def needle_top_surface(
    needle: NeedlePose, x: np.ndarray, y: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Shallowest depth where each vertical ray at ``(x, y)`` enters the needle.

    The needle is a cylinder of ``needle.radius`` around the axis, closed by a
    flat face through the tip and extending indefinitely behind it. Returns
    ``(top_depth, hit)``; ``top_depth`` is NaN where ``hit`` is False.
    """
    tx, ty, tz = needle.tip
    ax, ay, az = needle.axis
    if not 0.0 < az < 1.0:
        raise ValueError("needle axis must descend at an oblique angle")
    r = needle.radius
    wx = np.asarray(x, dtype=float) - tx
    wy = np.asarray(y, dtype=float) - ty
    w_a = wx * ax + wy * ay
    # |w|^2 - (w.a)^2 <= r^2 with w = (wx, wy, z), solved as a quadratic in z
    qa = 1.0 - az * az
    qb = -2.0 * w_a * az
    qc = wx * wx + wy * wy - w_a * w_a - r * r
    disc = qb * qb - 4.0 * qa * qc
    hit = disc >= 0.0
    root = np.sqrt(np.where(hit, disc, 0.0))
    z_enter = (-qb - root) / (2.0 * qa)
    # axial coordinate w.a + z*az must stay behind the tip face
    z_face = -w_a / az
    hit &= z_enter <= z_face
    top = np.where(hit, tz + z_enter, np.nan)
    return top, hit


def _rest_columns(state: RetinaState, cfg: ScanConfig):
    """Column positions and rest layer depths, memoised on the immutable rest geometry."""
    cache = state.rest.__dict__.setdefault("_column_cache", {})
    entry = cache.get(cfg)
    if entry is None:
        x, y = cfg.column_positions()
        ilm, rpe = state.rest.rest_depths_many(x, y)
        for arr in (x, y, ilm, rpe):
            arr.setflags(write=False)
        entry = cache[cfg] = (x, y, ilm, rpe)
    return entry


def acquire(
    state: RetinaState, needle: NeedlePose, cfg: ScanConfig, timestamp: float | None = None
) -> B5Scan:
    """Render the label raster the OCT would deliver for this scene."""
    x, y, ilm, rpe = _rest_columns(state, cfg)
    if state.amplitude != 0.0:
        ind = state.indentation_many(x, y)
        ilm = ilm + ind
        rpe = rpe + state.params.rpe_coupling * ind
    top, hit = needle_top_surface(needle, x, y)
    dz = cfg.spacing[2]
    nb, na, nd = cfg.shape

    labels = np.zeros((nb, na, nd), dtype=np.uint8)
    columns = labels.reshape(nb * na, nd)
    col = np.arange(nb * na)
    with np.errstate(invalid="ignore"):
        ilm_vis = ~(hit & (top < ilm))
        rpe_vis = ~(hit & (top < rpe))
        nidx = np.rint(top / dz).ravel()
        n_ok = hit.ravel() & (nidx >= 0) & (nidx < nd)
    written = []
    for depth, visible, code in ((ilm, ilm_vis, Label.ILM), (rpe, rpe_vis, Label.RPE)):
        idx = np.rint(depth / dz).ravel()
        ok = visible.ravel() & (idx >= 0) & (idx < nd)
        columns[col[ok], idx[ok].astype(np.intp)] = code
        written.append((code, ok, idx))
    columns[col[n_ok], nidx[n_ok].astype(np.intp)] = Label.NEEDLE
    written.append((Label.NEEDLE, n_ok, nidx))

    ts = state.time if timestamp is None else timestamp
    scan = B5Scan(labels, cfg.spacing, ts)
    # one voxel per class per column, so the write positions are the first
    # occurrences; later writes overwrite earlier ones at a shared voxel
    first = {}
    for k, (code, ok, idx) in enumerate(written):
        alive = ok.copy()
        for _, ok_later, idx_later in written[k + 1 :]:
            alive &= ~(ok_later & (idx_later == idx))
        first[code] = np.where(alive, idx, -1).astype(np.intp).reshape(nb, na)
        first[code].setflags(write=False)
    object.__setattr__(scan, "_first_occurrence", first)
    return scan


def voxel_to_metric(
    idx: tuple[int, int, int],
    spacing: tuple[float, float, float],
    shape: tuple[int, int, int] | None = None,
) -> tuple[float, float, float]:
    """Voxel ``(b, a, d)`` to metric ``(x, y, z)`` in micrometres."""
    b, a, d = idx
    if shape is not None:
        nb, na, nd = shape
        if not (0 <= b < nb and 0 <= a < na and 0 <= d < nd):
            raise DomainError(f"voxel index {idx} outside raster of shape {shape}")
    elif min(b, a, d) < 0:
        raise DomainError(f"negative voxel index {idx}")
    dx, dy, dz = spacing
    return (a * dx, b * dy, d * dz)


def metric_to_voxel(
    pos: tuple[float, float, float], spacing: tuple[float, float, float]
) -> tuple[int, int, int]:
    """Nearest voxel ``(b, a, d)`` to a metric position."""
    x, y, z = pos
    dx, dy, dz = spacing
    return (int(round(y / dy)), int(round(x / dx)), int(round(z / dz)))


# -- raster corpus format ----------------------------------------------------


def save_b5scan(scan: B5Scan, directory: str | Path, stem: str = "b5scan") -> Path:
    """Write one 8-bit PNG per B-scan plus a JSON sidecar; returns the sidecar path.

    Each PNG has depth along rows and A-scans along columns, holding the raw
    class codes 0-3.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for b in range(scan.shape[0]):
        name = f"{stem}_b{b}.png"
        Image.fromarray(np.ascontiguousarray(scan.labels[b].T), mode="L").save(directory / name)
        files.append(name)
    meta = {
        "shape": list(scan.shape),
        "spacing_um": {
            "lateral": scan.spacing[0],
            "inter_bscan": scan.spacing[1],
            "axial": scan.spacing[2],
        },
        "timestamp_s": scan.timestamp,
        "classes": {label.name.lower(): int(label) for label in Label},
        "bscans": files,
    }
    sidecar = directory / f"{stem}.json"
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return sidecar


def load_b5scan(sidecar: str | Path) -> B5Scan:
    """Read a B5-scan written by :func:`save_b5scan` (or an equivalent recording)."""
    sidecar = Path(sidecar)
    meta = json.loads(sidecar.read_text(encoding="utf-8"))
    planes = []
    for name in meta["bscans"]:
        with Image.open(sidecar.parent / name) as img:
            if img.mode != "L":
                raise ValueError(f"{name}: expected 8-bit grayscale, got mode {img.mode}")
            planes.append(np.asarray(img, dtype=np.uint8).T)
    labels = np.stack(planes)
    if labels.max(initial=0) > max(Label):
        raise ValueError(f"{sidecar}: raster contains unknown class codes")
    sp = meta["spacing_um"]
    expected = tuple(meta.get("shape", labels.shape))
    if tuple(labels.shape) != expected:
        raise ValueError(f"{sidecar}: raster shape {labels.shape} != sidecar shape {expected}")
    spacing = (sp["lateral"], sp["inter_bscan"], sp["axial"])
    if not all(math.isfinite(s) and s > 0 for s in spacing):
        raise ValueError(f"{sidecar}: invalid voxel spacing {spacing}")
    return B5Scan(labels, spacing, float(meta.get("timestamp_s", 0.0)))
