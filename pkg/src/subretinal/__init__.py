"""Simulated OCT-guided subretinal needle insertion with a virtual target layer."""

from __future__ import annotations

from .control import ControlCommand, ControlMode, ControlParams, fixed_point_command, velocity_command
from .oct import B5Scan, Label, ScanConfig, acquire
from .perception import CorruptionModel, PerceptionParams, perceive
from .phantom import NeedlePose, RetinaRest, RetinaState, TissueParams
from .simloop import LatencyModel, PhantomConfig, TrialOutcome, TrialSettings, evaluate_outcome, run_trial
from .targeting import RelativeDepth, VirtualLayer, relative_depth, virtual_layer

__version__ = "0.1.0"

__all__ = [
    "B5Scan",
    "ControlCommand",
    "ControlMode",
    "ControlParams",
    "CorruptionModel",
    "Label",
    "LatencyModel",
    "NeedlePose",
    "PerceptionParams",
    "PhantomConfig",
    "RelativeDepth",
    "RetinaRest",
    "RetinaState",
    "ScanConfig",
    "TissueParams",
    "TrialOutcome",
    "TrialSettings",
    "VirtualLayer",
    "acquire",
    "evaluate_outcome",
    "fixed_point_command",
    "perceive",
    "relative_depth",
    "run_trial",
    "velocity_command",
    "virtual_layer",
]
