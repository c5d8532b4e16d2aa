"""Segmentation stand-in: ground-truth labels passed through a corruption model.

The learned segmenter is replaced by the oracle rasters from ``oct.acquire``;
``CorruptionModel`` injects the error modes a network exhibits (missed
surfaces, spurious needle pixels, axial boundary jitter) under a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..oct import B5Scan, Label

Seed = int | tuple[int, ...]


@dataclass(frozen=True)
class CorruptionModel:
    dropout_rate: float = 0.0
    needle_outlier_rate: float = 0.0
    jitter_sigma: float = 0.0  # um
    seed: Seed = 0

    def __post_init__(self) -> None:
        for name in ("dropout_rate", "needle_outlier_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if self.jitter_sigma < 0:
            raise ConfigError("jitter_sigma must be non-negative")

    @property
    def is_identity(self) -> bool:
        return self.dropout_rate == 0 and self.needle_outlier_rate == 0 and self.jitter_sigma == 0


def labeled_voxels(labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Flat indices (ascending) and class codes of every non-background voxel."""
    flat = labels.reshape(-1)
    if flat.size % 8 == 0 and flat.flags.c_contiguous:
        # rasters are sparse: scan 8 voxels at a time, then expand the hits
        words = flat.view(np.uint64)
        hits = np.flatnonzero(words != 0)
        cand = (hits[:, None] * 8 + np.arange(8)).ravel()
        vals = flat[cand]
        keep = vals != 0
        return cand[keep], vals[keep]
    idx = np.flatnonzero(flat)
    return idx, flat[idx]


def first_occurrence(labels: np.ndarray) -> dict[Label, np.ndarray]:
    """Shallowest depth index per column for each foreground class (-1 if absent)."""
    nb, na, nd = labels.shape
    flat, cls = labeled_voxels(labels)
    col = flat // nd
    depth = flat - col * nd
    out = {}
    for code in (Label.NEEDLE, Label.ILM, Label.RPE):
        sel = cls == code
        c, d = col[sel], depth[sel]
        first = np.full(nb * na, -1, dtype=np.intp)
        if c.size:
            # depth is the fastest axis, so the first hit per column is the shallowest
            lead = np.ones(c.size, dtype=bool)
            lead[1:] = c[1:] != c[:-1]
            first[c[lead]] = d[lead]
        out[code] = first.reshape(nb, na)
    return out


def segment(scan: B5Scan, cm: CorruptionModel) -> B5Scan:
    """Apply dropout, axial jitter and spurious needle voxels to a label raster.

    Random draws have fixed sizes (one per labeled voxel, one per column), so
    two models differing only in a rate see the same underlying randomness:
    raising ``dropout_rate`` deletes a superset of voxels.
    """
    if cm.is_identity:
        return scan
    nb, na, nd = scan.shape
    src = scan.labels.reshape(-1)
    flat, cls = labeled_voxels(scan.labels)
    rng = np.random.default_rng(cm.seed)
    u_drop = rng.random(flat.size)
    jitter = rng.standard_normal(flat.size)
    u_out = rng.random(nb * na)
    d_out = rng.integers(0, nd, nb * na)

    keep = u_drop >= cm.dropout_rate
    flat, cls, jitter = flat[keep], cls[keep], jitter[keep]

    dest = flat
    if cm.jitter_sigma > 0 and flat.size:
        col = flat // nd
        depth = flat - col * nd
        shift = np.rint(jitter * cm.jitter_sigma / scan.spacing[2]).astype(np.intp)
        moved = depth + shift
        cand = col * nd + np.clip(moved, 0, nd - 1)
        # a voxel moves only into originally empty space; contested targets go to
        # the lowest source index and the losers stay put
        ok = (shift != 0) & (moved >= 0) & (moved < nd)
        ok[ok] = src[cand[ok]] == 0
        movers = np.flatnonzero(ok)
        _, first = np.unique(cand[movers], return_index=True)
        winners = np.zeros(flat.size, dtype=bool)
        winners[movers[first]] = True
        dest = np.where(winners, cand, flat)

    out = np.zeros(nb * na * nd, dtype=np.uint8)
    out[dest] = cls

    inject = np.flatnonzero(u_out < cm.needle_outlier_rate)
    if inject.size:
        target = inject * nd + d_out[inject]
        target = target[out[target] == 0]
        out[target] = Label.NEEDLE

    return B5Scan(out.reshape(nb, na, nd), scan.spacing, scan.timestamp)
