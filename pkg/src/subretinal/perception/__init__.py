"""From label raster to needle tip and completed retinal surfaces."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..oct import B5Scan
from .cloud import Provenance, SurfaceCloud, extract_surfaces, inpaint_layers, write_cloud_csv
from .needle import (
    DEFAULT_ITERATIONS,
    DEFAULT_OUTLIER_THRESHOLD_UM,
    DEFAULT_THRESHOLD_UM,
    DEFAULT_TIP_WINDOW,
    NeedleLine,
    detect_tip,
    fit_needle_line,
    remove_needle_outliers,
)
from .segmentation import CorruptionModel, Seed, first_occurrence, labeled_voxels, segment

__all__ = [
    "CorruptionModel",
    "NeedleLine",
    "Perception",
    "PerceptionParams",
    "Provenance",
    "SurfaceCloud",
    "detect_tip",
    "extract_surfaces",
    "first_occurrence",
    "fit_needle_line",
    "inpaint_layers",
    "labeled_voxels",
    "perceive",
    "remove_needle_outliers",
    "segment",
    "write_cloud_csv",
]


@dataclass(frozen=True)
class PerceptionParams:
    ransac_threshold: float = DEFAULT_THRESHOLD_UM
    ransac_iterations: int = DEFAULT_ITERATIONS
    outlier_threshold: float = DEFAULT_OUTLIER_THRESHOLD_UM
    tip_window: float = DEFAULT_TIP_WINDOW


@dataclass(frozen=True)
class Perception:
    raw: SurfaceCloud
    cloud: SurfaceCloud  # outliers removed, layers inpainted
    line: NeedleLine
    tip: np.ndarray


def perceive(
    scan: B5Scan,
    corruption: CorruptionModel | None = None,
    params: PerceptionParams = PerceptionParams(),
    ransac_seed: Seed = 0,
) -> Perception:
    """Run segmentation, extraction, RANSAC cleanup, inpainting and tip detection.

    Raises ``NoNeedleError`` or ``InpaintingError`` when the frame cannot be
    interpreted; callers decide how to react (the controller holds).
    """
    labels = segment(scan, corruption) if corruption is not None else scan
    raw = extract_surfaces(labels)
    pts, _, _ = raw.needle_points()
    line = fit_needle_line(pts, params.ransac_threshold, params.ransac_iterations, ransac_seed)
    cleaned = remove_needle_outliers(raw, line, params.outlier_threshold)
    tip = detect_tip(cleaned, line, params.tip_window)
    return Perception(raw=raw, cloud=inpaint_layers(cleaned), line=line, tip=tip)
