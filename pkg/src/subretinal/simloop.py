"""Latency-aware closed-loop insertion trials on a virtual clock.

Timeline of one trial (all event times are integer microseconds so event
ordering is exact):

* a B5-scan snapshot of the scene is taken every frame period;
* its perception result, and the command derived from it, take effect
  ``latency.total_ms`` later, while the robot keeps moving at the previous
  command (zero-order hold);
* tissue and needle are integrated at a fixed substep.

The controller only ever sees perception output and the robot's own
kinematics. Phantom ground truth is read solely to log the trajectory that
``evaluate_outcome`` scores.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .control import (
    HOLD,
    ControlCommand,
    ControlMode,
    ControlParams,
    Reason,
    fixed_point_command,
    velocity_command,
)
from .errors import (
    ConfigError,
    DegenerateLayerError,
    InpaintingError,
    NoNeedleError,
    TrackingLostError,
)
from .oct import B5Scan, ScanConfig, acquire
from .perception import CorruptionModel, PerceptionParams, perceive
from .phantom import (
    NeedlePose,
    RetinaRest,
    RetinaState,
    TissueParams,
    advance_needle,
    layer_depths,
    step_tissue,
)
from .targeting import blend_layers, relative_depth, tip_gap, virtual_layer

PERCEPTION_ERRORS = (NoNeedleError, InpaintingError, TrackingLostError, DegenerateLayerError)


@dataclass(frozen=True)
class LatencyModel:
    acquisition_ms: float = 115.0
    segmentation_ms: float = 20.0
    processing_ms: float = 47.0
    pipelined: bool = True

    def __post_init__(self) -> None:
        if min(self.acquisition_ms, self.segmentation_ms, self.processing_ms) < 0:
            raise ConfigError("latencies must be non-negative")

    @property
    def processing_budget_ms(self) -> float:
        return self.segmentation_ms + self.processing_ms

    @property
    def total_ms(self) -> float:
        """Age of a perception result when its command takes effect."""
        return self.acquisition_ms + self.segmentation_ms + self.processing_ms

    def frame_period_ms(self, scan: ScanConfig) -> float:
        if self.pipelined:
            return scan.acquisition_time_ms
        return scan.acquisition_time_ms + self.processing_budget_ms

    def check_realtime(self, scan: ScanConfig) -> None:
        """Pipelined operation is only sustainable if processing fits in one frame."""
        if self.pipelined and self.processing_budget_ms > scan.acquisition_time_ms:
            raise ConfigError(
                f"processing budget {self.processing_budget_ms:g} ms exceeds "
                f"acquisition time {scan.acquisition_time_ms:g} ms"
            )

    @classmethod
    def zero(cls) -> "LatencyModel":
        return cls(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class PhantomConfig:
    ilm_depth_um: float = 1000.0
    thickness_um: float = 400.0
    tilt_deg: tuple[float, float] = (0.0, 0.0)
    grid_pitch_um: float = 4.0
    thickness_band_um: tuple[float, float] = (300.0, 500.0)
    tissue: TissueParams = field(default_factory=TissueParams)

    def build(self, scan: ScanConfig) -> RetinaState:
        rest = RetinaRest.planar(
            scan.extent_um,
            ilm_depth_um=self.ilm_depth_um,
            thickness_um=self.thickness_um,
            tilt_deg=tuple(self.tilt_deg),
            grid_pitch=self.grid_pitch_um,
            thickness_band_um=tuple(self.thickness_band_um),
        )
        return RetinaState(rest, self.tissue)


@dataclass(frozen=True)
class TrialSettings:
    substep_ms: float = 1.0
    timeout_s: float = 10.0
    settle_s: float = 0.0
    standoff_um: float = 50.0
    start_x_fraction: float = 0.45
    needle_radius_um: float = 50.0
    bleb_margin_um: float = 20.0
    perception: PerceptionParams = field(default_factory=PerceptionParams)
    wall_clock: bool = False
    record_frames: bool = False


class TrajectorySample(NamedTuple):
    t: float  # s
    tip_x: float
    tip_y: float
    tip_z: float
    ilm: float  # ground truth at the tip's lateral position
    rpe: float
    velocity: float  # commanded, mm/s
    punctured: bool


class FrameLog(NamedTuple):
    frame: int
    t_acquired: float
    t_applied: float
    tip_z: float  # perceived; NaN when perception failed
    ilm: float
    rpe: float
    target: float
    velocity: float
    reason: str


@dataclass
class TrialOutcome:
    final_tip_depth: float
    final_p: float
    target_p: float
    final_axial_error: float
    final_signed_error: float  # tip - target; positive means deeper than the target
    rpe_contact: bool
    punctured: bool
    bleb_success_proxy: bool
    duration: float
    final_thickness: float
    trajectory: list[TrajectorySample] = field(default_factory=list, repr=False)
    end_reason: str = ""
    n_frames: int = 0
    n_holds: int = 0
    frame_log: list[FrameLog] = field(default_factory=list, repr=False)
    frames: list[B5Scan] | None = field(default=None, repr=False)

    @property
    def overshoot(self) -> float:
        return max(0.0, self.final_signed_error)

    def to_record(self) -> dict:
        """Scalar fields as plain JSON-ready Python values."""
        return {
            "final_tip_depth_um": float(self.final_tip_depth),
            "final_p": float(self.final_p),
            "target_p": float(self.target_p),
            "final_axial_error_um": float(self.final_axial_error),
            "final_signed_error_um": float(self.final_signed_error),
            "overshoot_um": float(self.overshoot),
            "final_thickness_um": float(self.final_thickness),
            "rpe_contact": bool(self.rpe_contact),
            "punctured": bool(self.punctured),
            "bleb_success_proxy": bool(self.bleb_success_proxy),
            "duration_s": float(self.duration),
            "end_reason": self.end_reason,
            "n_frames": int(self.n_frames),
            "n_holds": int(self.n_holds),
        }


def evaluate_outcome(
    trajectory: list[TrajectorySample], target_p: float, margin_um: float = 20.0
) -> TrialOutcome:
    """Score a finished trajectory against ground truth.

    Bleb success is a geometric proxy: punctured, tip strictly below the
    deformed ILM, strictly above the RPE by ``margin_um``, and the RPE never
    touched during the trial.
    """
    if not trajectory:
        raise ValueError("empty trajectory")
    last = trajectory[-1]
    thickness = last.rpe - last.ilm
    target = float(blend_layers(last.ilm, last.rpe, target_p))
    signed = last.tip_z - target
    rpe_contact = bool(any(s.tip_z >= s.rpe for s in trajectory))
    success = bool(
        last.punctured
        and not rpe_contact
        and last.tip_z > last.ilm
        and last.tip_z < last.rpe - margin_um
    )
    return TrialOutcome(
        final_tip_depth=last.tip_z,
        final_p=relative_depth(last.tip_z, last.ilm, last.rpe).p,
        target_p=target_p,
        final_axial_error=abs(signed),
        final_signed_error=signed,
        rpe_contact=rpe_contact,
        punctured=last.punctured,
        bleb_success_proxy=success,
        duration=last.t,
        final_thickness=thickness,
        trajectory=list(trajectory),
    )


class _FrameResult(NamedTuple):
    frame: int
    command: ControlCommand
    tip: np.ndarray | None
    gap: tuple | None
    plan_distance: float | None
    scan: B5Scan | None


def _plan_fixed_target(tip: np.ndarray, axis: np.ndarray, layer, cloud) -> float:
    """Distance along the axis from the perceived tip to where it meets the layer."""
    s = np.arange(0.0, 4000.0, 1.0)
    pts = tip[None, :] + s[:, None] * axis[None, :]
    dx, dy, _ = cloud.spacing
    nb, na = cloud.shape
    a = np.floor(pts[:, 0] / dx + 0.5).astype(int)
    b = np.floor(pts[:, 1] / dy + 0.5).astype(int)
    inside = (a >= 0) & (a < na) & (b >= 0) & (b < nb)
    if not inside[0]:
        raise TrackingLostError("planning tip outside the scan")
    n_in = int(np.argmin(inside)) if not inside.all() else len(s)
    f = pts[:n_in, 2] - layer.target_depth[b[:n_in], a[:n_in]]
    crossed = np.flatnonzero(f >= 0)
    if crossed.size == 0:
        raise TrackingLostError("needle axis never reaches the target layer inside the scan")
    k = int(crossed[0])
    if k == 0:
        return 0.0
    f0, f1 = f[k - 1], f[k]
    return float(s[k - 1] + (s[k] - s[k - 1]) * (-f0) / (f1 - f0))


def _process_frame(
    frame: int,
    state: RetinaState,
    needle: NeedlePose,
    scan_cfg: ScanConfig,
    corruption: CorruptionModel,
    perception: PerceptionParams,
    control: ControlParams,
    target_p: float,
    seed: int,
    keep_scan: bool,
) -> _FrameResult:
    scan = acquire(state, needle, scan_cfg)
    try:
        result = perceive(
            scan,
            replace(corruption, seed=(seed, frame, 0)),
            perception,
            ransac_seed=(seed, frame, 1),
        )
        layer = virtual_layer(result.cloud, target_p)
        gap = tip_gap(result.tip, layer, result.cloud)
    except PERCEPTION_ERRORS:
        return _FrameResult(frame, HOLD, None, None, None, scan if keep_scan else None)

    plan = None
    if control.mode is ControlMode.VIRTUAL_LAYER:
        command = velocity_command(result.tip[2], gap.ilm, gap.rpe, gap.target, control)
    else:
        # the baseline only consumes perception until it has a plan
        command = ControlCommand(0.0, False, Reason.ADVANCING)
        try:
            plan = _plan_fixed_target(result.tip, np.asarray(needle.axis), layer, result.cloud)
        except TrackingLostError:
            plan = None
    return _FrameResult(frame, command, result.tip, tuple(gap), plan, scan if keep_scan else None)


def run_trial(
    phantom_cfg: PhantomConfig,
    scan_cfg: ScanConfig,
    corruption: CorruptionModel,
    params: ControlParams,
    latency: LatencyModel,
    target_p: float,
    seed: int,
    settings: TrialSettings = TrialSettings(),
) -> TrialOutcome:
    """Simulate one insertion from stand-off above the ILM to stop, RPE contact or timeout."""
    latency.check_realtime(scan_cfg)
    if not 0.0 < target_p < 1.0:
        raise ConfigError("target_p must lie strictly between 0 and 1")
    dt_us = int(round(settings.substep_ms * 1000))
    period_us = int(round(latency.frame_period_ms(scan_cfg) * 1000))
    delay_us = int(round(latency.total_ms * 1000))
    timeout_us = int(round(settings.timeout_s * 1e6))
    settle_us = int(round(settings.settle_s * 1e6))
    if dt_us <= 0 or period_us <= 0:
        raise ConfigError("substep and frame period must be positive")
    dt = dt_us * 1e-6

    state = phantom_cfg.build(scan_cfg)
    ex, ey = scan_cfg.extent_um
    x0, y0 = settings.start_x_fraction * ex, 0.5 * ey
    ilm0, _ = layer_depths(state, x0, y0)
    needle = NeedlePose.create((x0, y0, ilm0 - settings.standoff_um), radius=settings.needle_radius_um)
    axis = needle.axis

    executor = ThreadPoolExecutor(max_workers=1) if settings.wall_clock else None
    pending: deque[tuple[int, Future | _FrameResult]] = deque()
    frames: list[B5Scan] = []
    frame_log: list[FrameLog] = []
    trajectory: list[TrajectorySample] = []

    def record(t_us: int, v: float) -> tuple[float, float]:
        tx, ty, tz = needle.tip
        ilm, rpe = layer_depths(state, tx, ty)
        trajectory.append(TrajectorySample(t_us * 1e-6, tx, ty, tz, ilm, rpe, v, state.punctured))
        return tz, rpe

    t = 0
    next_frame = 0
    frame = 0
    velocity = 0.0
    fixed_target: tuple[float, float, float] | None = None
    n_holds = 0
    end_reason = "timeout"
    record(0, 0.0)
    try:
        while True:
            if t == next_frame:
                args = (frame, state, needle, scan_cfg, corruption, settings.perception,
                        params, target_p, seed, settings.record_frames)
                job = executor.submit(_process_frame, *args) if executor else _process_frame(*args)
                pending.append((t + delay_us, job))
                next_frame += period_us
                frame += 1

            while pending and pending[0][0] <= t:
                t_apply, job = pending.popleft()
                res = job.result() if isinstance(job, Future) else job
                if res.scan is not None:
                    frames.append(res.scan)
                cmd = res.command
                if params.mode is ControlMode.FIXED_POINT:
                    if fixed_target is None and res.plan_distance is not None:
                        tip = needle.tip
                        # the robot has not moved since the snapshot: nothing was commanded yet
                        fixed_target = tuple(tip[k] + res.plan_distance * axis[k] for k in range(3))
                else:
                    velocity = cmd.velocity
                if cmd.reason is Reason.TRACKING_LOST_HOLD:
                    n_holds += 1
                if res.tip is not None:
                    _, _, ilm_e, rpe_e, tgt_e, _ = res.gap
                    tip_z = float(res.tip[2])
                else:
                    tip_z = ilm_e = rpe_e = tgt_e = math.nan
                frame_log.append(
                    FrameLog(res.frame, (t_apply - delay_us) * 1e-6, t_apply * 1e-6, tip_z,
                             ilm_e, rpe_e, tgt_e, cmd.velocity, cmd.reason.value)
                )
                if cmd.stopped and params.mode is ControlMode.VIRTUAL_LAYER:
                    velocity = 0.0
                    end_reason = "stopped"

            if params.mode is ControlMode.FIXED_POINT:
                if fixed_target is not None:
                    cmd = fixed_point_command(needle.tip, fixed_target, axis, params)
                    velocity = cmd.velocity
                    if cmd.stopped:
                        end_reason = "stopped"

            if end_reason == "stopped" or t >= timeout_us:
                if trajectory[-1].velocity != velocity:
                    record(t, velocity)
                break

            needle = advance_needle(needle, velocity * 1000.0 * dt)
            state = step_tissue(state, needle, dt)
            t += dt_us
            tip_z, rpe_z = record(t, velocity)
            if tip_z >= rpe_z:
                end_reason = "rpe_contact"
                break

        settle_end = t + settle_us
        while end_reason == "stopped" and t < settle_end:
            state = step_tissue(state, needle, dt)
            t += dt_us
            record(t, 0.0)
    finally:
        if executor is not None:
            executor.shutdown(wait=True, cancel_futures=True)

    outcome = evaluate_outcome(trajectory, target_p, settings.bleb_margin_um)
    outcome.end_reason = end_reason
    outcome.n_frames = frame
    outcome.n_holds = n_holds
    outcome.frame_log = frame_log
    outcome.frames = frames if settings.record_frames else None
    return outcome


def write_trajectory_csv(outcome: TrialOutcome, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t_s", "tip_x_um", "tip_y_um", "tip_z_um", "ilm_um", "rpe_um",
                    "velocity_mm_s", "punctured"])
        for s in outcome.trajectory:
            w.writerow([f"{s.t:.6f}", f"{s.tip_x:.4f}", f"{s.tip_y:.4f}", f"{s.tip_z:.4f}",
                        f"{s.ilm:.4f}", f"{s.rpe:.4f}", f"{s.velocity:.6f}", int(s.punctured)])
