"""Experiment configuration: the comparison grid plus every sub-model's settings.

The file format is YAML with one nested section per sub-model. Every key is
optional; omitted keys keep the defaults below and unknown keys are errors.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Iterator, NamedTuple

import numpy as np
import yaml

from ..control import ControlMode, ControlParams
from ..errors import ConfigError
from ..oct import ScanConfig
from ..perception import CorruptionModel, PerceptionParams
from ..phantom import TissueParams
from ..simloop import LatencyModel, PhantomConfig, TrialSettings


@dataclass(frozen=True)
class PhantomSection:
    """Nominal phantom plus the bands each trial's variation is drawn from."""

    ilm_depth_um: float = 1000.0
    grid_pitch_um: float = 4.0
    thickness_band_um: tuple[float, float] = (350.0, 500.0)
    tilt_band_deg: float = 3.0
    puncture_threshold_band_um: tuple[float, float] = (220.0, 320.0)
    sigma_um: float = 300.0
    rpe_coupling: float = 0.25
    residual_fraction: float = 0.4
    recoil_time_s: float = 0.5
    bounce_back: bool = True

    def __post_init__(self) -> None:
        for name in ("thickness_band_um", "puncture_threshold_band_um"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ConfigError(f"{name} must satisfy 0 < low <= high")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.tilt_band_deg < 0:
            raise ConfigError("tilt_band_deg must be non-negative")
        # reject bad tissue values at load time rather than mid-grid
        self.tissue(self.puncture_threshold_band_um[0])

    def tissue(self, puncture_threshold_um: float) -> TissueParams:
        return TissueParams(
            sigma_um=self.sigma_um,
            rpe_coupling=self.rpe_coupling,
            puncture_threshold_um=puncture_threshold_um,
            residual_fraction=self.residual_fraction,
            recoil_time_s=self.recoil_time_s,
            bounce_back=self.bounce_back,
        )


@dataclass(frozen=True)
class ExperimentConfig:
    modes: tuple[str, ...] = ("virtual_layer", "fixed_point")
    target_ps: tuple[float, ...] = (0.40, 0.60)
    v_maxes: tuple[float, ...] = (0.3, 0.4)
    trials_per_cell: int = 5
    alpha: float = 0.1
    seed: int = 0
    phantom: PhantomSection = field(default_factory=PhantomSection)
    scan: ScanConfig = field(default_factory=ScanConfig)
    latency: LatencyModel = field(default_factory=LatencyModel)
    corruption: CorruptionModel = field(default_factory=CorruptionModel)
    perception: PerceptionParams = field(default_factory=PerceptionParams)
    trial: TrialSettings = field(default_factory=TrialSettings)

    def __post_init__(self) -> None:
        if self.trials_per_cell < 1:
            raise ConfigError("trials_per_cell must be at least 1")
        if not (self.modes and self.target_ps and self.v_maxes):
            raise ConfigError("the grid needs at least one mode, target_p and v_max")
        modes = []
        for m in self.modes:
            try:
                modes.append(ControlMode(m).value)
            except ValueError:
                raise ConfigError(f"unknown mode {m!r}") from None
        object.__setattr__(self, "modes", tuple(modes))
        object.__setattr__(self, "target_ps", tuple(float(p) for p in self.target_ps))
        object.__setattr__(self, "v_maxes", tuple(float(v) for v in self.v_maxes))
        for p in self.target_ps:
            if not 0.0 < p < 1.0:
                raise ConfigError(f"target_p {p} must lie strictly between 0 and 1")
        for v in self.v_maxes:
            ControlParams(v_max=v, alpha=self.alpha)
        self.latency.check_realtime(self.scan)

    def control(self, mode: str, v_max: float) -> ControlParams:
        return ControlParams(v_max=v_max, alpha=self.alpha, mode=mode)

    def trial_settings(self, record_frames: bool = False) -> TrialSettings:
        return replace(self.trial, perception=self.perception, record_frames=record_frames)

    def restrict(
        self,
        *,
        mode: str | None = None,
        target_p: float | None = None,
        v_max: float | None = None,
        trials: int | None = None,
        seed: int | None = None,
    ) -> "ExperimentConfig":
        """Copy with command-line overrides applied."""
        changes: dict[str, Any] = {}
        if mode is not None:
            changes["modes"] = (mode,)
        if target_p is not None:
            changes["target_ps"] = (target_p,)
        if v_max is not None:
            changes["v_maxes"] = (v_max,)
        if trials is not None:
            changes["trials_per_cell"] = trials
        if seed is not None:
            changes["seed"] = seed
        return replace(self, **changes)

    @property
    def n_trials(self) -> int:
        return len(self.modes) * len(self.target_ps) * len(self.v_maxes) * self.trials_per_cell


class TrialSpec(NamedTuple):
    trial_id: str
    mode: str
    target_p: float
    v_max: float
    index: int
    seed: int
    phantom: PhantomConfig


def trial_id(mode: str, target_p: float, v_max: float, index: int) -> str:
    return f"{mode}-p{target_p:.2f}-v{v_max:.2f}-t{index:02d}"


def sample_phantom(cfg: ExperimentConfig, p_idx: int, v_idx: int, index: int) -> tuple[int, PhantomConfig]:
    """Trial seed and randomised phantom for one grid slot.

    The draw depends on the grid slot but not on the control mode, so both
    controllers meet identical eyes.
    """
    ss = np.random.SeedSequence([cfg.seed, p_idx, v_idx, index])
    rng = np.random.default_rng(ss)
    ph = cfg.phantom
    thickness = float(rng.uniform(*ph.thickness_band_um))
    tilt = tuple(float(t) for t in rng.uniform(-ph.tilt_band_deg, ph.tilt_band_deg, 2))
    tau = float(rng.uniform(*ph.puncture_threshold_band_um))
    seed = int(ss.generate_state(1, dtype=np.uint32)[0])
    phantom = PhantomConfig(
        ilm_depth_um=ph.ilm_depth_um,
        thickness_um=thickness,
        tilt_deg=tilt,
        grid_pitch_um=ph.grid_pitch_um,
        thickness_band_um=ph.thickness_band_um,
        tissue=ph.tissue(tau),
    )
    return seed, phantom


def grid_trials(cfg: ExperimentConfig) -> Iterator[list[TrialSpec]]:
    """Yield the trials of each cell, cells ordered mode, target_p, v_max."""
    for mode, (p_idx, p), (v_idx, v) in itertools.product(
        cfg.modes, enumerate(cfg.target_ps), enumerate(cfg.v_maxes)
    ):
        cell = []
        for i in range(cfg.trials_per_cell):
            seed, phantom = sample_phantom(cfg, p_idx, v_idx, i)
            cell.append(TrialSpec(trial_id(mode, p, v, i), mode, p, v, i, seed, phantom))
        yield cell


# -- YAML round trip --------------------------------------------------------

_SECTIONS = {
    "phantom": PhantomSection,
    "scan": ScanConfig,
    "latency": LatencyModel,
    "corruption": CorruptionModel,
    "perception": PerceptionParams,
    "trial": TrialSettings,
}
_TRIAL_SKIP = {"perception", "record_frames"}


def _plain(value: Any) -> Any:
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    return value


def _build(cls: type, data: Any, where: str, skip: set[str] = frozenset()):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"section {where!r} must be a mapping")
    known = {f.name: f for f in fields(cls) if f.name not in skip}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where!r}: {', '.join(sorted(unknown))}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where!r} section: {exc}") from exc


def config_from_dict(data: dict | None) -> ExperimentConfig:
    data = dict(data or {})
    kwargs: dict[str, Any] = {}
    for name, cls in _SECTIONS.items():
        if name in data:
            kwargs[name] = _build(cls, data.pop(name), name, _TRIAL_SKIP if name == "trial" else set())
    if "corruption" in kwargs and isinstance(kwargs["corruption"].seed, list):
        kwargs["corruption"] = replace(kwargs["corruption"], seed=tuple(kwargs["corruption"].seed))
    top = _build(ExperimentConfig, data, "experiment", set(_SECTIONS))
    return replace(top, **kwargs)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out: dict[str, Any] = {}
    for f in fields(ExperimentConfig):
        value = getattr(cfg, f.name)
        if f.name in _SECTIONS:
            section = {k: _plain(v) for k, v in asdict(value).items()}
            if f.name == "trial":
                section = {k: v for k, v in section.items() if k not in _TRIAL_SKIP}
            out[f.name] = section
        else:
            out[f.name] = _plain(value)
    return out


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return config_from_dict(data)


def dump_config(cfg: ExperimentConfig, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config_to_dict(cfg), fh, sort_keys=False)
