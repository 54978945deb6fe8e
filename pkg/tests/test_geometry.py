import numpy as np
import pytest

from acusar.errors import InsufficientMics, NonPositiveRadius
from acusar.geometry import build_circular_array, pose_at


def test_center_plus_ring_layout():
    arr = build_circular_array(7, 0.25)
    assert arr.count == 7
    np.testing.assert_allclose(arr.positions[0], [0.0, 0.0, 0.0])
    np.testing.assert_allclose(arr.positions[1], [0.25, 0.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(arr.positions[4], [-0.25, 0.0, 0.0], atol=1e-15)
    # uniform 60 degree spacing on the ring
    angles = np.arctan2(arr.positions[1:, 1], arr.positions[1:, 0])
    diffs = np.diff(np.unwrap(angles))
    np.testing.assert_allclose(diffs, np.pi / 3, atol=1e-12)


def test_ring_radius_and_coplanarity():
    arr = build_circular_array(9, 1.7)
    norms = np.linalg.norm(arr.positions[1:], axis=1)
    np.testing.assert_allclose(norms, 1.7, atol=1e-12)
    assert np.all(arr.positions[:, 2] == 0.0)


def test_four_mics_has_three_ring_angles():
    arr = build_circular_array(4, 1.0)
    angles = np.degrees(np.arctan2(arr.positions[1:, 1], arr.positions[1:, 0]))
    np.testing.assert_allclose(np.sort(angles % 360), [0.0, 120.0, 240.0], atol=1e-9)


def test_too_few_mics_rejected():
    with pytest.raises(InsufficientMics):
        build_circular_array(3, 0.25)


def test_nonpositive_radius_rejected():
    with pytest.raises(NonPositiveRadius):
        build_circular_array(7, 0.0)
    with pytest.raises(NonPositiveRadius):
        build_circular_array(7, -1.0)


@pytest.mark.parametrize("count", [4, 5, 7, 12])
def test_ring_centroid_at_center(count):
    arr = build_circular_array(count, 0.33)
    np.testing.assert_allclose(arr.positions[1:].sum(axis=0), np.zeros(3), atol=1e-9)


def test_pose_translates_exactly():
    arr = build_circular_array(7, 0.25)
    posed = pose_at(arr, (10.0, 0.0, 5.0))
    np.testing.assert_allclose(posed.world_positions[1], [10.25, 0.0, 5.0], atol=1e-15)
    # repeated calls are bitwise reproducible
    again = pose_at(arr, (10.0, 0.0, 5.0))
    assert np.array_equal(posed.world_positions, again.world_positions)
    assert np.array_equal(posed.world_positions - np.array([10.0, 0.0, 5.0]),
                          again.world_positions - np.array([10.0, 0.0, 5.0]))
    np.testing.assert_allclose(posed.world_positions - np.array([10.0, 0.0, 5.0]),
                               arr.positions, atol=1e-12)


def test_pose_identity_and_takeoff_point():
    arr = build_circular_array(7, 0.25)
    assert np.array_equal(pose_at(arr, (0.0, 0.0, 0.0)).world_positions, arr.positions)
    posed = pose_at(arr, (-500.0, -4.0, 15.0))
    np.testing.assert_allclose(posed.world_positions[0], [-500.0, -4.0, 15.0])


def test_pose_rejects_nonfinite():
    arr = build_circular_array(7, 0.25)
    with pytest.raises(ValueError):
        pose_at(arr, (np.nan, 0.0, 0.0))
