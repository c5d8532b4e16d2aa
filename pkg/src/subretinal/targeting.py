"""Relative depth between ILM and RPE and the virtual target layer built on it."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DegenerateLayerError, TrackingLostError
from .perception.cloud import Provenance, SurfaceCloud


@dataclass(frozen=True)
class RelativeDepth:
    """Fractional depth: 0 at the ILM, 1 at the RPE.

    Values outside [0, 1] are legal (tip above the ILM or below the RPE) and
    flagged by ``in_retina``.
    """

    p: float

    @property
    def in_retina(self) -> bool:
        return 0.0 <= self.p <= 1.0

    def __float__(self) -> float:
        return float(self.p)


def relative_depth(z: float, ilm: float, rpe: float) -> RelativeDepth:
    if not rpe > ilm:
        raise DegenerateLayerError(f"rpe ({rpe}) must be deeper than ilm ({ilm})")
    return RelativeDepth((z - ilm) / (rpe - ilm))


@dataclass(frozen=True)
class VirtualLayer:
    target_depth: np.ndarray  # (n_bscans, n_ascans) um
    p: float


def blend_layers(ilm: np.ndarray, rpe: np.ndarray, p: float) -> np.ndarray:
    """``ilm + p * (rpe - ilm)``, kept monotone in p and pinned at both ends.

    The clamps only touch the last ulp: they make p=1 return the RPE exactly
    and keep in-retina targets from rounding past the RPE.
    """
    ilm = np.asarray(ilm, dtype=float)
    rpe = np.asarray(rpe, dtype=float)
    target = ilm + p * (rpe - ilm)
    if p == 1.0:
        return rpe.copy()
    if p > 1.0:
        return np.maximum(target, rpe)
    if p >= 0.0:
        return np.minimum(target, rpe)
    return target


def virtual_layer(cloud: SurfaceCloud, p: float) -> VirtualLayer:
    """Target surface at fraction ``p`` between the (inpainted) ILM and RPE."""
    if not np.isfinite(p):
        raise ValueError("p must be finite")
    if not cloud.layers_complete:
        raise ValueError("virtual_layer needs fully inpainted ILM and RPE")
    bad = ~(cloud.rpe > cloud.ilm)
    if bad.any():
        b, a = (int(v) for v in np.argwhere(bad)[0])
        raise DegenerateLayerError(
            f"rpe not deeper than ilm at sample (b={b}, a={a})", sample=(b, a)
        )
    return VirtualLayer(blend_layers(cloud.ilm, cloud.rpe, p), float(p))


class TipGap(NamedTuple):
    dist: float  # target - tip; positive means the tip is above the target
    thickness: float
    ilm: float
    rpe: float
    target: float
    sample: tuple[int, int]


def tip_sample(tip: np.ndarray, cloud: SurfaceCloud) -> tuple[int, int]:
    """Index ``(b, a)`` of the A-scan nearest to the tip laterally."""
    nb, na = cloud.shape
    dx, dy, _ = cloud.spacing
    a = int(np.floor(tip[0] / dx + 0.5))
    b = int(np.floor(tip[1] / dy + 0.5))
    if not (0 <= a < na and 0 <= b < nb):
        raise TrackingLostError(f"tip at ({tip[0]:.1f}, {tip[1]:.1f}) um is outside the scan")
    return b, a


def tip_gap(tip: np.ndarray, layer: VirtualLayer, cloud: SurfaceCloud) -> TipGap:
    """Signed distance from the tip to the target layer on the tip's A-scan."""
    b, a = tip_sample(tip, cloud)
    if cloud.ilm_src[b, a] == Provenance.MISSING or cloud.rpe_src[b, a] == Provenance.MISSING:
        raise ValueError("layers at the tip A-scan are missing; inpaint first")
    ilm = float(cloud.ilm[b, a])
    rpe = float(cloud.rpe[b, a])
    target = float(layer.target_depth[b, a])
    return TipGap(target - float(tip[2]), rpe - ilm, ilm, rpe, target, (b, a))
