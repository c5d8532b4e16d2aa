"""Ground-truth deformable retina and needle kinematics.

Depth axis points into the eye (+z), all lengths are micrometres and all
times are seconds. The retina is two height fields (ILM and RPE) sampled on
a regular lateral grid. Needle contact adds a Gaussian indentation bump to
both layers (attenuated on the RPE). Once the indentation exceeds the
puncture threshold the ILM is pierced and the bump relaxes exponentially
toward a residual fraction, which is the bounce-back that lets the tip move
deeper relative to the ILM without any commanded motion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError

INSERTION_ANGLE_DEG = 45.0


@dataclass(frozen=True)
class RetinaRest:
    """Undeformed layer geometry on a lateral grid.

    ``ilm_rest`` and ``rpe_rest`` have shape ``(nx, ny)``; node ``(i, j)`` sits
    at lateral position ``(i * grid_pitch, j * grid_pitch)``.
    """

    ilm_rest: np.ndarray
    rpe_rest: np.ndarray
    grid_pitch: float = 4.0

    def __post_init__(self) -> None:
        ilm = np.array(self.ilm_rest, dtype=float)
        rpe = np.array(self.rpe_rest, dtype=float)
        if ilm.ndim != 2 or ilm.shape != rpe.shape:
            raise ConfigError("ilm_rest and rpe_rest must be 2D fields of equal shape")
        if min(ilm.shape) < 2:
            raise ConfigError("layer fields need at least 2 nodes per axis")
        if not np.all(rpe > ilm):
            raise ConfigError("rpe_rest must be strictly deeper than ilm_rest everywhere")
        if self.grid_pitch <= 0:
            raise ConfigError("grid_pitch must be positive")
        ilm.setflags(write=False)
        rpe.setflags(write=False)
        object.__setattr__(self, "ilm_rest", ilm)
        object.__setattr__(self, "rpe_rest", rpe)
        # scalar lookups run every substep; keep their constants as plain floats
        nx, ny = ilm.shape
        object.__setattr__(self, "_nodes", (nx, ny))
        object.__setattr__(self, "_extent", ((nx - 1) * self.grid_pitch, (ny - 1) * self.grid_pitch))
        object.__setattr__(self, "_rows", (ilm.tolist(), rpe.tolist()))

    @classmethod
    def planar(
        cls,
        lateral_extent_um: tuple[float, float] = (4000.0, 100.0),
        *,
        ilm_depth_um: float = 1000.0,
        thickness_um: float = 400.0,
        tilt_deg: tuple[float, float] = (0.0, 0.0),
        grid_pitch: float = 4.0,
        thickness_band_um: tuple[float, float] = (300.0, 500.0),
    ) -> "RetinaRest":
        """Flat (optionally tilted) retina with parallel ILM and RPE.

        The tilt rotates the layers about the lateral centre of the extent;
        ``tilt_deg[0]`` slopes depth along x, ``tilt_deg[1]`` along y.
        """
        lo, hi = thickness_band_um
        if not lo <= thickness_um <= hi:
            raise ConfigError(
                f"thickness {thickness_um} um outside configured band [{lo}, {hi}]"
            )
        nx = int(round(lateral_extent_um[0] / grid_pitch)) + 1
        ny = int(round(lateral_extent_um[1] / grid_pitch)) + 1
        xs = np.arange(nx) * grid_pitch
        ys = np.arange(ny) * grid_pitch
        cx, cy = xs[-1] / 2.0, ys[-1] / 2.0
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        ilm = (
            ilm_depth_um
            + math.tan(math.radians(tilt_deg[0])) * (gx - cx)
            + math.tan(math.radians(tilt_deg[1])) * (gy - cy)
        )
        return cls(ilm, ilm + thickness_um, grid_pitch)

    @property
    def lateral_extent(self) -> tuple[float, float]:
        return self._extent

    def contains(self, x: float, y: float) -> bool:
        ex, ey = self._extent
        return 0.0 <= x <= ex and 0.0 <= y <= ey

    def rest_depths(self, x: float, y: float) -> tuple[float, float]:
        """Bilinear rest depths at a single lateral point (scalar fast path)."""
        ex, ey = self._extent
        if not (0.0 <= x <= ex and 0.0 <= y <= ey):
            raise DomainError(f"lateral position ({x:.3f}, {y:.3f}) outside phantom")
        nx, ny = self._nodes
        fx = x / self.grid_pitch
        fy = y / self.grid_pitch
        i = min(int(fx), nx - 2)
        j = min(int(fy), ny - 2)
        tx = fx - i
        ty = fy - j
        w00 = (1.0 - tx) * (1.0 - ty)
        w10 = tx * (1.0 - ty)
        w01 = (1.0 - tx) * ty
        w11 = tx * ty
        ilm, rpe = self._rows
        a, b = ilm[i], ilm[i + 1]
        d_ilm = w00 * a[j] + w10 * b[j] + w01 * a[j + 1] + w11 * b[j + 1]
        a, b = rpe[i], rpe[i + 1]
        d_rpe = w00 * a[j] + w10 * b[j] + w01 * a[j + 1] + w11 * b[j + 1]
        return d_ilm, d_rpe

    def rest_depths_many(self, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized bilinear rest depths; raises if any point is out of bounds."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        ex, ey = self.lateral_extent
        if np.any((x < 0) | (x > ex) | (y < 0) | (y > ey)):
            raise DomainError("lateral query outside phantom extent")
        nx, ny = self.ilm_rest.shape
        fx = x / self.grid_pitch
        fy = y / self.grid_pitch
        i = np.minimum(fx.astype(int), nx - 2)
        j = np.minimum(fy.astype(int), ny - 2)
        tx = fx - i
        ty = fy - j

        def interp(f: np.ndarray) -> np.ndarray:
            return (
                (1 - tx) * (1 - ty) * f[i, j]
                + tx * (1 - ty) * f[i + 1, j]
                + (1 - tx) * ty * f[i, j + 1]
                + tx * ty * f[i + 1, j + 1]
            )

        return interp(self.ilm_rest), interp(self.rpe_rest)


@dataclass(frozen=True)
class TissueParams:
    sigma_um: float = 300.0
    rpe_coupling: float = 0.25
    puncture_threshold_um: float = 150.0
    residual_fraction: float = 0.2
    recoil_time_s: float = 0.5
    bounce_back: bool = True

    def __post_init__(self) -> None:
        if self.sigma_um <= 0:
            raise ConfigError("sigma_um must be positive")
        if not 0.0 <= self.rpe_coupling <= 1.0:
            raise ConfigError("rpe_coupling must lie in [0, 1]")
        if self.puncture_threshold_um <= 0:
            raise ConfigError("puncture_threshold_um must be positive")
        if not 0.0 <= self.residual_fraction <= 1.0:
            raise ConfigError("residual_fraction must lie in [0, 1]")
        if self.recoil_time_s <= 0:
            raise ConfigError("recoil_time_s must be positive")


@dataclass(frozen=True)
class RetinaState:
    """Deformed retina at one instant.

    The indentation field is a Gaussian bump ``amplitude * exp(-r^2 / 2 sigma^2)``
    centred at ``center``; it is stored parametrically and evaluated on demand
    (``indentation_at`` / ``indentation_field``).
    """

    rest: RetinaRest
    params: TissueParams = field(default_factory=TissueParams)
    time: float = 0.0
    amplitude: float = 0.0
    center: tuple[float, float] = (0.0, 0.0)
    punctured: bool = False
    puncture_time: float | None = None
    puncture_amplitude: float = 0.0
    recoil_progress: float = 0.0

    def indentation_at(self, x: float, y: float) -> float:
        if self.amplitude == 0.0:
            return 0.0
        dx = x - self.center[0]
        dy = y - self.center[1]
        s2 = self.params.sigma_um * self.params.sigma_um
        return self.amplitude * math.exp(-(dx * dx + dy * dy) / (2.0 * s2))

    def indentation_many(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.amplitude == 0.0:
            return np.zeros(np.broadcast(x, y).shape)
        r2 = (x - self.center[0]) ** 2 + (np.asarray(y, dtype=float) - self.center[1]) ** 2
        return self.amplitude * np.exp(-r2 / (2.0 * self.params.sigma_um**2))

    def indentation_field(self) -> np.ndarray:
        """Indentation sampled on the rest grid nodes."""
        nx, ny = self.rest.ilm_rest.shape
        gx, gy = np.meshgrid(
            np.arange(nx) * self.rest.grid_pitch,
            np.arange(ny) * self.rest.grid_pitch,
            indexing="ij",
        )
        return self.indentation_many(gx, gy)


def layer_depths(state: RetinaState, x: float, y: float) -> tuple[float, float]:
    """Deformed (ilm, rpe) depth at lateral position ``(x, y)``."""
    ilm, rpe = state.rest.rest_depths(x, y)
    ind = state.indentation_at(x, y)
    return ilm + ind, rpe + state.params.rpe_coupling * ind


def layer_depths_many(
    state: RetinaState, x: np.ndarray, y: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    ilm, rpe = state.rest.rest_depths_many(x, y)
    ind = state.indentation_many(x, y)
    return ilm + ind, rpe + state.params.rpe_coupling * ind


@dataclass(frozen=True)
class NeedlePose:
    """Rigid needle constrained to translate along a fixed insertion axis.

    The tip is stored as ``origin + odometer * axis`` so that repeated
    advances compose exactly and the axis can never drift.
    """

    origin: tuple[float, float, float]
    axis: tuple[float, float, float]
    radius: float = 50.0
    odometer: float = 0.0

    def __post_init__(self) -> None:
        norm = math.sqrt(sum(c * c for c in self.axis))
        if abs(norm - 1.0) > 1e-12:
            raise ValueError("needle axis must be a unit vector")
        if self.radius <= 0:
            raise ValueError("needle radius must be positive")

    @classmethod
    def create(
        cls,
        tip: tuple[float, float, float],
        *,
        radius: float = 50.0,
        angle_deg: float = INSERTION_ANGLE_DEG,
        heading_deg: float = 0.0,
    ) -> "NeedlePose":
        """Needle at ``angle_deg`` below the lateral plane, heading along +x by default."""
        a = math.radians(angle_deg)
        h = math.radians(heading_deg)
        axis = (math.cos(a) * math.cos(h), math.cos(a) * math.sin(h), math.sin(a))
        norm = math.sqrt(sum(c * c for c in axis))
        axis = tuple(c / norm for c in axis)
        return cls(tuple(float(c) for c in tip), axis, radius)

    @property
    def tip(self) -> tuple[float, float, float]:
        o, a, s = self.origin, self.axis, self.odometer
        return (o[0] + s * a[0], o[1] + s * a[1], o[2] + s * a[2])

    @property
    def insertion_odometer(self) -> float:
        return self.odometer

    @property
    def elevation_deg(self) -> float:
        """Angle between the axis and the lateral plane."""
        return math.degrees(math.asin(self.axis[2]))


def _evolve(obj, **changes):
    """``dataclasses.replace`` without re-running validation.

    Only for the per-substep hot path, where every new value is derived from
    an already validated instance.
    """
    new = object.__new__(type(obj))
    new.__dict__.update(obj.__dict__)
    new.__dict__.update(changes)
    return new


def advance_needle(needle: NeedlePose, distance: float) -> NeedlePose:
    """Move the needle ``distance`` micrometres forward along its axis."""
    if distance < 0:
        raise ValueError("needle retraction is not supported (distance < 0)")
    if distance == 0:
        return needle
    return _evolve(needle, odometer=needle.odometer + distance)


def step_tissue(state: RetinaState, needle: NeedlePose, dt: float) -> RetinaState:
    """Advance the tissue by ``dt`` seconds given the current needle pose."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    t = state.time + dt
    p = state.params

    if state.punctured:
        if not p.bounce_back:
            return _evolve(state, time=t)
        elapsed = t - state.puncture_time
        progress = 1.0 - math.exp(-elapsed / p.recoil_time_s)
        peak = state.puncture_amplitude
        amplitude = peak * (p.residual_fraction + (1.0 - p.residual_fraction) * (1.0 - progress))
        return _evolve(state, time=t, amplitude=amplitude, recoil_progress=progress)

    tx, ty, tz = needle.tip
    if not state.rest.contains(tx, ty):
        return _evolve(state, time=t, amplitude=0.0)
    ilm_rest, _ = state.rest.rest_depths(tx, ty)
    penetration = tz - ilm_rest
    if penetration <= 0.0:
        if state.amplitude == 0.0:
            return _evolve(state, time=t)
        return _evolve(state, time=t, amplitude=0.0)
    if penetration >= p.puncture_threshold_um:
        return _evolve(
            state,
            time=t,
            amplitude=penetration,
            center=(tx, ty),
            punctured=True,
            puncture_time=t,
            puncture_amplitude=penetration,
            recoil_progress=0.0,
        )
    return _evolve(state, time=t, amplitude=penetration, center=(tx, ty))
