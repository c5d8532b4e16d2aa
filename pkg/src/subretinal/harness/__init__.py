"""Experiment grid runner, aggregation and artifact export."""

from __future__ import annotations

from .config import ExperimentConfig, PhantomSection, dump_config, load_config
from .frames import export_frames
from .runner import CellSummary, GridResult, run_grid, summarize_records

__all__ = [
    "CellSummary",
    "ExperimentConfig",
    "GridResult",
    "PhantomSection",
    "dump_config",
    "export_frames",
    "load_config",
    "run_grid",
    "summarize_records",
]
