"""Needle localisation: RANSAC line fit, outlier rejection and tip selection."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from itertools import combinations

import numpy as np

from ..errors import NoNeedleError
from .cloud import Provenance, SurfaceCloud
from .segmentation import Seed

DEFAULT_THRESHOLD_UM = 30.0
# genuine samples lie on the needle surface, up to about r * sqrt(2) from a
# line fitted along its top, so rejection allows the fit tolerance plus a radius
DEFAULT_OUTLIER_THRESHOLD_UM = DEFAULT_THRESHOLD_UM + 50.0
DEFAULT_ITERATIONS = 256
DEFAULT_TIP_WINDOW = 0.1
DEFAULT_CONFIDENCE = 0.999
_CHUNK = 32


@dataclass(frozen=True)
class NeedleLine:
    point: np.ndarray
    direction: np.ndarray  # unit, oriented distally (toward increasing depth)
    inlier_count: int
    inlier_threshold: float

    def distances(self, points: np.ndarray) -> np.ndarray:
        rel = np.asarray(points, dtype=float) - self.point
        return np.linalg.norm(np.cross(rel, self.direction), axis=-1)

    def project(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.point) @ self.direction


def _orient(direction: np.ndarray) -> np.ndarray:
    d = direction / np.linalg.norm(direction)
    for c in (d[2], d[0], d[1]):
        if c != 0:
            return d if c > 0 else -d
    return d


def _inlier_counts(
    points: np.ndarray, origins: np.ndarray, dirs: np.ndarray, threshold: float
) -> np.ndarray:
    """Number of points within ``threshold`` of each candidate line."""
    # |p - o|^2 - ((p - o) . d)^2 expanded into one matrix product, compared
    # squared; centring keeps the cancellation harmless at scan-sized coordinates
    c = points.mean(axis=0)
    p = points - c
    o = origins - c
    h = len(o)
    prod = np.concatenate([dirs, o]) @ p.T
    along = prod[:h]
    along -= np.einsum("hk,hk->h", o, dirs)[:, None]
    along *= along
    sq = prod[h:]
    sq *= -2.0
    sq += np.einsum("nk,nk->n", p, p)[None, :]
    sq += np.einsum("hk,hk->h", o, o)[:, None]
    sq -= along
    return np.count_nonzero(sq <= threshold * threshold, axis=1)


def _required_hypotheses(inlier_ratio: float, confidence: float) -> float:
    """Draws needed to hit an all-inlier pair with probability ``confidence``."""
    if confidence >= 1.0:
        return math.inf
    good_pair = inlier_ratio * inlier_ratio
    if good_pair >= 1.0:
        return 1.0
    if good_pair <= 0.0:
        return math.inf
    return math.log(1.0 - confidence) / math.log(1.0 - good_pair)


def _point_line_distances(points: np.ndarray, origin: np.ndarray, direction: np.ndarray) -> np.ndarray:
    rel = points - origin
    along = rel @ direction
    return np.sqrt(np.maximum(np.einsum("nk,nk->n", rel, rel) - along * along, 0.0))


def fit_needle_line(
    points: np.ndarray,
    threshold: float = DEFAULT_THRESHOLD_UM,
    iterations: int = DEFAULT_ITERATIONS,
    seed: Seed = 0,
    confidence: float = DEFAULT_CONFIDENCE,
) -> NeedleLine:
    """Fit a 3D line to needle samples with RANSAC over 2-point hypotheses.

    The hypothesis with the most points within ``threshold`` wins (earliest on
    ties) and is refined by a total-least-squares fit to its inliers. When the
    number of distinct pairs does not exceed ``iterations`` every pair is
    tried, which makes the search exhaustive.

    Otherwise ``iterations`` random pairs are drawn from ``seed`` and scored in
    chunks, stopping early once the best inlier ratio so far implies that an
    all-inlier pair has been drawn with probability ``confidence``. Pass
    ``confidence=1`` to always score every hypothesis.

    Raises:
        NoNeedleError: fewer than two points.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    n = len(pts)
    if n < 2:
        raise NoNeedleError(f"need at least 2 needle points, got {n}")

    exhaustive = n * (n - 1) // 2 <= iterations
    if exhaustive:
        pairs = np.array(list(combinations(range(n), 2)), dtype=np.intp)
        i, j = pairs[:, 0], pairs[:, 1]
    else:
        rng = np.random.default_rng(seed)
        i = rng.integers(0, n, iterations)
        j = rng.integers(0, n - 1, iterations)
        j = j + (j >= i)

    dirs = pts[j] - pts[i]
    norms = np.linalg.norm(dirs, axis=1)
    good = norms > 0
    if not good.any():
        raise NoNeedleError("needle points are all coincident")
    dirs = dirs[good] / norms[good, None]
    origins = pts[i[good]]

    chunk = len(dirs) if exhaustive else _CHUNK
    counts = np.empty(0, dtype=np.intp)
    for start in range(0, len(dirs), chunk):
        stop = start + chunk
        counts = np.concatenate(
            [counts, _inlier_counts(pts, origins[start:stop], dirs[start:stop], threshold)]
        )
        if len(counts) >= _required_hypotheses(counts.max() / n, confidence):
            break
    best = int(np.argmax(counts))
    inliers = pts[_point_line_distances(pts, origins[best], dirs[best]) <= threshold]

    centroid = inliers.mean(axis=0)
    if len(inliers) >= 2:
        _, _, vt = np.linalg.svd(inliers - centroid, full_matrices=False)
        direction = vt[0]
    else:
        direction = dirs[best]
    return NeedleLine(
        point=centroid,
        direction=_orient(direction),
        inlier_count=len(inliers),
        inlier_threshold=float(threshold),
    )


def remove_needle_outliers(cloud: SurfaceCloud, line: NeedleLine, threshold: float) -> SurfaceCloud:
    """Drop needle samples farther than ``threshold`` from the fitted line."""
    pts, b, a = cloud.needle_points()
    if len(pts) == 0:
        return cloud
    far = line.distances(pts) > threshold
    if not far.any():
        return cloud
    needle = cloud.needle.copy()
    src = cloud.needle_src.copy()
    needle[b[far], a[far]] = np.nan
    src[b[far], a[far]] = Provenance.MISSING
    return replace(cloud, needle=needle, needle_src=src)


def detect_tip(cloud: SurfaceCloud, line: NeedleLine, window: float = DEFAULT_TIP_WINDOW) -> np.ndarray:
    """Pick the needle tip among the distal samples.

    Samples are projected on the line; only those in the distal ``window``
    fraction of the needle's visible extent are considered. Each B-scan
    contributes its most distal sample there (its cut through the tip), and
    the shallowest of these per-B-scan tip points is returned: the cut
    closest to the needle centre sits highest on the circular cross-section.
    """
    pts, b, _ = cloud.needle_points()
    if len(pts) == 0:
        raise NoNeedleError("no needle samples left after outlier removal")
    s = line.project(pts)
    s_max = s.max()
    cut = s_max - window * (s_max - s.min())
    in_window = np.flatnonzero(s >= cut)

    best = None
    for scan_line in np.unique(b[in_window]):
        members = in_window[b[in_window] == scan_line]
        k = members[np.argmax(s[members])]
        key = (pts[k, 2], -s[k])
        if best is None or key < best[0]:
            best = (key, k)
    return pts[best[1]].copy()
