"""Scene builders and geometric oracles shared by the test modules."""

from __future__ import annotations

import math

import numpy as np

from subretinal.oct import ScanConfig, acquire
from subretinal.perception import perceive
from subretinal.phantom import NeedlePose, RetinaRest, RetinaState

SIN45 = math.sqrt(0.5)


def true_tip_top(needle: NeedlePose) -> float:
    """Depth of the shallowest point of the needle's distal cross-section.

    The tip face is a disc normal to the 45 degree axis; its highest point
    sits ``r * sin(45)`` above the axis tip.
    """
    return needle.tip[2] - needle.radius * SIN45


def perceived_tip_error(tx: float, ty: float, cfg: ScanConfig, state: RetinaState, tz: float = 900.0) -> float:
    """|perceived tip depth - true tip top| for a needle placed at (tx, ty, tz)."""
    needle = NeedlePose.create((tx, ty, tz))
    result = perceive(acquire(state, needle, cfg))
    return abs(float(result.tip[2]) - true_tip_top(needle))


def flat_state(cfg: ScanConfig) -> RetinaState:
    return RetinaState(RetinaRest.planar(cfg.extent_um, ilm_depth_um=1000.0, thickness_um=400.0))


def collinear_fixture(n_in: int = 45, n_out: int = 5, offset: float = 500.0, seed: int = 0):
    """Points on a 45 degree line plus outliers displaced perpendicular to it."""
    rng = np.random.default_rng(seed)
    direction = np.array([SIN45, 0.0, SIN45])
    base = np.array([1000.0, 50.0, 800.0])
    s = np.sort(rng.uniform(0.0, 800.0, n_in))
    inliers = base + s[:, None] * direction
    perp = np.array([SIN45, 0.0, -SIN45])
    t = rng.uniform(0.0, 800.0, n_out)
    outliers = base + t[:, None] * direction + offset * perp
    return inliers, outliers, direction
