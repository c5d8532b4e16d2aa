from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subretinal.errors import ConfigError, DomainError
from subretinal.oct import (
    B5Scan,
    Label,
    ScanConfig,
    acquire,
    load_b5scan,
    metric_to_voxel,
    needle_top_surface,
    save_b5scan,
    voxel_to_metric,
)
from subretinal.perception import extract_surfaces
from subretinal.phantom import NeedlePose, RetinaRest, RetinaState, layer_depths_many

CFG = ScanConfig()


@pytest.fixture(scope="module")
def flat():
    return RetinaState(RetinaRest.planar(CFG.extent_um, ilm_depth_um=1000.0, thickness_um=400.0))


def far_needle() -> NeedlePose:
    # well outside the scanned volume laterally
    return NeedlePose.create((-5000.0, 50.0, 0.0))


def test_default_geometry():
    dx, dy, dz = CFG.spacing
    assert CFG.shape == (5, 500, 1024)
    assert dy == 25.0
    assert dz == pytest.approx(3.90625)
    assert dx == pytest.approx(4000.0 / 499)


def test_config_rejects_bad_values():
    with pytest.raises(ConfigError):
        ScanConfig(n_bscans=1)
    with pytest.raises(ConfigError):
        ScanConfig(acquisition_time_ms=0.0)


def test_no_needle_flat_layers_one_voxel_each(flat):
    scan = acquire(flat, far_needle(), CFG)
    labels = scan.labels
    assert not np.any(labels == Label.NEEDLE)
    for code in (Label.ILM, Label.RPE):
        hits = labels == code
        assert np.all(hits.sum(axis=2) == 1)
        depth_idx = hits.argmax(axis=2)
        assert np.all(depth_idx == depth_idx[0, 0])


def test_flat_ilm_at_1000_um_lands_on_voxel_256(flat):
    scan = acquire(flat, far_needle(), CFG)
    idx = (scan.labels == Label.ILM).argmax(axis=2)
    oracle = round(1000.0 / CFG.spacing[2])
    assert np.all(np.abs(idx - oracle) <= 1)
    assert oracle == 256


def test_needle_over_column_shadows_both_layers(flat):
    dx = CFG.spacing[0]
    a = 250
    # the shaft passes over column a about 20 um behind the tip, well above the ILM
    needle = NeedlePose.create((a * dx + 20.0, 50.0, 800.0))
    scan = acquire(flat, needle, CFG)
    column = scan.labels[2, a]
    assert np.count_nonzero(column == Label.NEEDLE) == 1
    assert not np.any(column == Label.ILM)
    assert not np.any(column == Label.RPE)
    # distal to the tip the layers are intact
    assert np.count_nonzero(scan.labels[2, 400] == Label.ILM) == 1


def test_needle_outside_volume_gives_valid_scan_without_needle(flat):
    scan = acquire(flat, far_needle(), CFG)
    assert scan.shape == CFG.shape
    assert not np.any(scan.labels == Label.NEEDLE)


def test_acquire_is_deterministic_and_read_only(flat):
    needle = NeedlePose.create((2000.0, 40.0, 950.0))
    a = acquire(flat, needle, CFG, timestamp=1.5)
    b = acquire(flat, needle, CFG, timestamp=1.5)
    assert np.array_equal(a.labels, b.labels) and a.timestamp == 1.5
    with pytest.raises(ValueError):
        a.labels[0, 0, 0] = 1


def test_needle_top_surface_matches_analytic_cylinder():
    needle = NeedlePose.create((1000.0, 50.0, 900.0), radius=50.0)
    # on the axis plane, well behind the tip: top sits sqrt(2) * r above the axis
    x = np.array([900.0])
    top, hit = needle_top_surface(needle, x, np.array([50.0]))
    axis_depth = 900.0 - 100.0
    assert hit[0]
    assert top[0] == pytest.approx(axis_depth - math.sqrt(2.0) * 50.0, abs=1e-9)
    # laterally offset by d: sqrt(2) * sqrt(r^2 - d^2) above the axis
    top, _ = needle_top_surface(needle, x, np.array([80.0]))
    assert top[0] == pytest.approx(axis_depth - math.sqrt(2.0) * 40.0, abs=1e-9)
    _, hit = needle_top_surface(needle, x, np.array([101.0]))
    assert not hit[0]


@settings(max_examples=40, deadline=None)
@given(
    tx=st.floats(300.0, 3700.0),
    ty=st.floats(0.0, 100.0),
    dz=st.floats(-300.0, 150.0),
)
def test_shadow_soundness_and_quantization(flat, tx, ty, dz):
    needle = NeedlePose.create((tx, ty, 1000.0 + dz))
    scan = acquire(flat, needle, CFG)
    x, y = CFG.column_positions()
    ilm, rpe = layer_depths_many(flat, x, y)
    top, hit = needle_top_surface(needle, x, y)
    step = CFG.spacing[2]
    for code, depth in ((Label.ILM, ilm), (Label.RPE, rpe)):
        present = np.any(scan.labels == code, axis=2)
        with np.errstate(invalid="ignore"):
            occluded = hit & (top < depth)
            # columns where the needle and layer share a voxel are ambiguous by construction
            clear = ~hit | (np.abs(top - depth) > step)
        assert np.array_equal(present[clear], ~occluded[clear])
        idx = np.argmax(scan.labels == code, axis=2)
        err = np.abs(idx * step - depth)
        assert np.all(err[present] <= step / 2 + 1e-9)
    needle_present = np.any(scan.labels == Label.NEEDLE, axis=2)
    in_range = hit & (np.rint(np.nan_to_num(top, nan=-1.0) / step) >= 0)
    assert np.array_equal(needle_present, in_range)


@settings(max_examples=40, deadline=None)
@given(
    tx=st.floats(-200.0, 4200.0),
    ty=st.floats(-60.0, 160.0),
    tz=st.floats(-100.0, 4100.0),
    thickness=st.floats(0.5, 30.0),
)
def test_renderer_first_occurrence_index_matches_a_raster_scan(tx, ty, tz, thickness):
    """Extraction from a fresh render equals extraction from its bare label raster."""
    ilm = np.full((3, 3), 1000.0)
    rest = RetinaRest(ilm, ilm + thickness, grid_pitch=2000.0)  # thin layers share voxels
    state = RetinaState(rest)
    scan = acquire(state, NeedlePose.create((tx, ty, tz)), CFG)
    bare = B5Scan(scan.labels.copy(), scan.spacing, scan.timestamp)
    a, b = extract_surfaces(scan), extract_surfaces(bare)
    for name in ("ilm", "rpe", "needle"):
        assert np.array_equal(a.layer(name)[1], b.layer(name)[1])
        assert np.array_equal(a.layer(name)[0], b.layer(name)[0], equal_nan=True)


# -- voxel coordinates --------------------------------------------------------


def test_voxel_to_metric_examples():
    assert voxel_to_metric((0, 0, 0), (8.0, 25.0, 3.9)) == (0.0, 0.0, 0.0)
    assert voxel_to_metric((0, 0, 100), (8.0, 25.0, 3.9))[2] == pytest.approx(390.0)
    with pytest.raises(DomainError):
        voxel_to_metric((5, 0, 0), CFG.spacing, CFG.shape)
    with pytest.raises(DomainError):
        voxel_to_metric((0, -1, 0), CFG.spacing)


def test_metric_voxel_round_trip_exhaustive_10_cubed():
    spacing = CFG.spacing
    nb, na, nd = CFG.shape
    ex, ey = CFG.extent_um
    zmax = nd * spacing[2] - spacing[2]
    grid = itertools.product(
        np.linspace(0.0, ex, 10), np.linspace(0.0, ey, 10), np.linspace(0.0, zmax, 10)
    )
    worst = np.zeros(3)
    for pos in grid:
        vox = metric_to_voxel(pos, spacing)
        back = voxel_to_metric(vox, spacing, CFG.shape)
        worst = np.maximum(worst, np.abs(np.subtract(back, pos)))
    assert np.all(worst <= np.asarray(spacing) / 2 + 1e-9)


# -- raster corpus ------------------------------------------------------------


def test_save_load_round_trip(tmp_path, flat):
    scan = acquire(flat, NeedlePose.create((2000.0, 50.0, 950.0)), CFG, timestamp=0.345)
    sidecar = save_b5scan(scan, tmp_path, "frame")
    assert sorted(p.name for p in tmp_path.iterdir()) == sorted(
        ["frame.json"] + [f"frame_b{b}.png" for b in range(5)]
    )
    loaded = load_b5scan(sidecar)
    assert np.array_equal(loaded.labels, scan.labels)
    assert loaded.spacing == scan.spacing
    assert loaded.timestamp == scan.timestamp


def test_load_rejects_unknown_class_codes(tmp_path):
    labels = np.zeros((2, 4, 8), dtype=np.uint8)
    labels[0, 0, 0] = 7
    sidecar = save_b5scan(B5Scan(labels, (1.0, 1.0, 1.0)), tmp_path)
    with pytest.raises(ValueError):
        load_b5scan(sidecar)
