from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subretinal.errors import DegenerateLayerError, TrackingLostError
from subretinal.perception import Provenance, SurfaceCloud
from subretinal.targeting import relative_depth, tip_gap, virtual_layer

SPACING = (8.0, 25.0, 3.90625)


def layer_cloud(ilm: np.ndarray, rpe: np.ndarray) -> SurfaceCloud:
    src = np.full(ilm.shape, Provenance.MEASURED, dtype=np.int8)
    missing = np.full(ilm.shape, Provenance.MISSING, dtype=np.int8)
    return SurfaceCloud(SPACING, ilm, rpe, np.full(ilm.shape, np.nan), src, src.copy(), missing)


def random_cloud(seed: int, shape=(5, 40)) -> SurfaceCloud:
    rng = np.random.default_rng(seed)
    ilm = rng.uniform(500.0, 1500.0, shape)
    rpe = ilm + rng.uniform(1.0, 600.0, shape)
    return layer_cloud(ilm, rpe)


def test_relative_depth_examples():
    assert relative_depth(1000.0, 1000.0, 1400.0).p == 0.0
    assert relative_depth(1400.0, 1000.0, 1400.0).p == 1.0
    assert relative_depth(1160.0, 1000.0, 1400.0).p == pytest.approx(0.40, rel=1e-12)


def test_relative_depth_outside_retina_is_flagged_not_rejected():
    above = relative_depth(900.0, 1000.0, 1400.0)
    assert above.p == pytest.approx(-0.25) and not above.in_retina
    assert relative_depth(1200.0, 1000.0, 1400.0).in_retina


def test_degenerate_layers_are_rejected():
    with pytest.raises(DegenerateLayerError):
        relative_depth(1000.0, 1400.0, 1400.0)
    ilm = np.full((5, 10), 1000.0)
    rpe = ilm + 400.0
    rpe[3, 7] = 990.0
    with pytest.raises(DegenerateLayerError) as info:
        virtual_layer(layer_cloud(ilm, rpe), 0.4)
    assert info.value.sample == (3, 7)


def test_flat_layer_at_sixty_percent():
    cloud = layer_cloud(np.full((5, 10), 1000.0), np.full((5, 10), 1400.0))
    assert np.all(virtual_layer(cloud, 0.6).target_depth == 1240.0)


@pytest.mark.parametrize("seed", range(20))
def test_boundary_pinning_is_bit_exact(seed):
    cloud = random_cloud(seed)
    assert np.array_equal(virtual_layer(cloud, 0.0).target_depth, cloud.ilm)
    assert np.array_equal(virtual_layer(cloud, 1.0).target_depth, cloud.rpe)


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 10**6), p=st.floats(0.0, 1.0))
def test_round_trip_recovers_p(seed, p):
    cloud = random_cloud(seed, (2, 8))
    target = virtual_layer(cloud, p).target_depth
    for b in range(2):
        for a in range(8):
            got = relative_depth(target[b, a], cloud.ilm[b, a], cloud.rpe[b, a]).p
            # 1e-12 relative; near p = 0 fall back to a floor of the same size
            assert abs(got - p) <= 1e-12 * max(abs(p), 1.0)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 10**6), p1=st.floats(0.0, 1.0), p2=st.floats(0.0, 1.0))
def test_monotone_in_p_and_bounded_by_layers(seed, p1, p2):
    lo, hi = sorted((p1, p2))
    cloud = random_cloud(seed, (2, 8))
    t_lo = virtual_layer(cloud, lo).target_depth
    t_hi = virtual_layer(cloud, hi).target_depth
    assert np.all(t_lo <= t_hi)
    assert np.all(cloud.ilm <= t_lo) and np.all(t_hi <= cloud.rpe)


def test_deformation_covariance_on_100_offsets():
    rng = np.random.default_rng(42)
    base = random_cloud(1)
    for offset in rng.uniform(-300.0, 300.0, 100):
        moved = layer_cloud(base.ilm + offset, base.rpe + offset)
        for p in (0.4, 0.6):
            shifted = virtual_layer(moved, p).target_depth
            expected = virtual_layer(base, p).target_depth + offset
            np.testing.assert_allclose(shifted, expected, rtol=1e-12, atol=1e-9)


# -- tip gap -------------------------------------------------------------------


@pytest.fixture
def flat_cloud():
    return layer_cloud(np.full((5, 500), 1000.0), np.full((5, 500), 1400.0))


def test_tip_gap_examples(flat_cloud):
    layer = virtual_layer(flat_cloud, 0.4)
    on = tip_gap(np.array([800.0, 50.0, 1160.0]), layer, flat_cloud)
    assert on.dist == 0.0 and on.thickness == 400.0
    at_ilm = tip_gap(np.array([800.0, 50.0, 1000.0]), layer, flat_cloud)
    assert at_ilm.dist == pytest.approx(160.0, rel=1e-12)
    below = tip_gap(np.array([800.0, 50.0, 1180.0]), layer, flat_cloud)
    assert below.dist == pytest.approx(-20.0, rel=1e-12)


def test_tip_gap_uses_nearest_a_scan(flat_cloud):
    ilm = flat_cloud.ilm.copy()
    ilm[1, 100] = 1100.0
    cloud = layer_cloud(ilm, flat_cloud.rpe)
    layer = virtual_layer(cloud, 0.5)
    gap = tip_gap(np.array([100 * SPACING[0] + 3.9, 1 * SPACING[1] - 12.0, 1200.0]), layer, cloud)
    assert gap.sample == (1, 100)
    assert gap.ilm == 1100.0 and gap.target == 1250.0


def test_tip_outside_extent_is_tracking_lost(flat_cloud):
    layer = virtual_layer(flat_cloud, 0.4)
    with pytest.raises(TrackingLostError):
        tip_gap(np.array([-10.0, 50.0, 1000.0]), layer, flat_cloud)
    with pytest.raises(TrackingLostError):
        tip_gap(np.array([100.0, 113.0, 1000.0]), layer, flat_cloud)
