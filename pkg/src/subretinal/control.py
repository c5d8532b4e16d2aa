"""Insertion velocity laws: the virtual-layer controller and the fixed-point baseline."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .errors import ConfigError


class ControlMode(str, Enum):
    VIRTUAL_LAYER = "virtual_layer"
    FIXED_POINT = "fixed_point"


class Reason(str, Enum):
    ADVANCING = "advancing"
    ABOVE_ILM_FULL_SPEED = "above_ilm_full_speed"
    NEAR_TARGET_STOP = "near_target_stop"
    TRACKING_LOST_HOLD = "tracking_lost_hold"


@dataclass(frozen=True)
class ControlParams:
    v_max: float = 0.4  # mm/s
    alpha: float = 0.1
    mode: ControlMode = ControlMode.VIRTUAL_LAYER

    def __post_init__(self) -> None:
        if not self.v_max > 0:
            raise ConfigError("v_max must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        object.__setattr__(self, "mode", ControlMode(self.mode))


@dataclass(frozen=True)
class ControlCommand:
    velocity: float  # mm/s along the needle axis
    stopped: bool
    reason: Reason


HOLD = ControlCommand(0.0, False, Reason.TRACKING_LOST_HOLD)


def velocity_command(
    tip_depth: float | None,
    ilm: float,
    rpe: float,
    target_depth: float,
    params: ControlParams,
) -> ControlCommand:
    """Piecewise insertion speed from the tip's gap to the target layer.

    Full speed while the tip is above the ILM; otherwise speed proportional
    to the gap normalised by retinal thickness, capped at ``v_max``; stop once
    that normalised gap is no larger than ``alpha``. The gap is taken in
    absolute value, so a tip past the target still advances unless it is
    within the stopping band. Missing tips and degenerate layers hold.
    """
    if params.mode is not ControlMode.VIRTUAL_LAYER:
        raise ValueError("velocity_command serves the virtual_layer mode only")
    values = (tip_depth, ilm, rpe, target_depth)
    if any(v is None or not math.isfinite(v) for v in values):
        return HOLD
    if not rpe > ilm:
        return HOLD
    if tip_depth < ilm:
        return ControlCommand(params.v_max, False, Reason.ABOVE_ILM_FULL_SPEED)
    g = float(abs(target_depth - tip_depth) / (rpe - ilm))
    if g > params.alpha:
        return ControlCommand(min(g, 1.0) * params.v_max, False, Reason.ADVANCING)
    return ControlCommand(0.0, True, Reason.NEAR_TARGET_STOP)


def fixed_point_command(
    tip: Sequence[float],
    target: Sequence[float],
    axis: Sequence[float],
    params: ControlParams,
) -> ControlCommand:
    """Constant ``v_max`` until the tip's axial projection reaches the planned target."""
    if params.mode is not ControlMode.FIXED_POINT:
        raise ValueError("fixed_point_command serves the fixed_point mode only")
    remaining = sum((g - t) * a for t, g, a in zip(tip, target, axis))
    if remaining > 0.0:
        return ControlCommand(params.v_max, False, Reason.ADVANCING)
    return ControlCommand(0.0, True, Reason.NEAR_TARGET_STOP)
