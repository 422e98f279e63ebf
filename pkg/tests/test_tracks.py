import math

import numpy as np
import pytest

from occlab.core import LabeledPointCloud
from occlab.errors import EmptyModelError, InvalidTrackError
from occlab.tracks import (
    InstanceTrack,
    Keyframe,
    build_model,
    interpolate_track,
    normalize_yaw,
    place_object,
    rasterize_bev,
)

CAR = 5


def track_with(keyframes, model=None):
    return InstanceTrack(1, CAR, tuple(keyframes), model)


def box_cloud(n=24, frame_time=0, seed=0):
    rng = np.random.default_rng(seed)
    pts = rng.uniform([-1.0, -0.5, 0.0], [1.0, 0.5, 1.2], size=(n, 3))
    return LabeledPointCloud.single_frame(pts, np.full(n, CAR), frame_time)


# -- rasterize ----------------------------------------------------------------

def test_rasterize_empty_map():
    raster = rasterize_bev(LabeledPointCloud.empty(), (0.0, 0.0), 0.5, 10, 10)
    assert raster.count.sum() == 0


def test_rasterize_single_point():
    cloud = LabeledPointCloud.single_frame([[0.1, 0.1, 0.0]], [CAR], 0)
    raster = rasterize_bev(cloud, (0.0, 0.0), 0.5, 10, 10)
    assert raster.count.sum() == 1
    assert raster.count[0, 0] == 1
    assert raster.label[0, 0] == CAR


def test_rasterize_conserves_inbounds_counts():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-5, 5, size=(500, 3))
    cloud = LabeledPointCloud.single_frame(pts, rng.integers(2, 8, 500), 0)
    raster = rasterize_bev(cloud, (0.0, 0.0), 0.5, 8, 8)
    in_bounds = ((pts[:, 0] >= 0) & (pts[:, 0] < 4) & (pts[:, 1] >= 0) & (pts[:, 1] < 4)).sum()
    assert raster.count.sum() == in_bounds


def test_rasterize_majority_label_tie_small_id():
    pts = [[0.1, 0.1, 0], [0.2, 0.2, 0], [0.3, 0.3, 0], [0.15, 0.25, 0]]
    labels = [7, 7, 3, 3]
    raster = rasterize_bev(LabeledPointCloud.single_frame(pts, labels, 0), (0, 0), 1.0, 2, 2)
    assert raster.label[0, 0] == 3  # tie 2-2 goes to the smaller id


# -- interpolate --------------------------------------------------------------

def test_linear_midpoint():
    track = track_with([Keyframe(0, 0.0, 0.0, 0.0), Keyframe(10, 10.0, 0.0, 0.0)])
    (_, x, y, yaw), = interpolate_track(track, [5])
    assert x == pytest.approx(5.0)
    assert y == 0.0 and yaw == 0.0


def test_yaw_wrap_shortest_arc():
    # oracle: interpolate unit vectors and take atan2
    a, b = math.radians(170), math.radians(-170)
    va = np.array([math.cos(a), math.sin(a)])
    vb = np.array([math.cos(b), math.sin(b)])
    mid = 0.5 * va + 0.5 * vb
    expected = math.atan2(mid[1], mid[0])
    assert expected == pytest.approx(math.pi)

    track = track_with([Keyframe(0, 0, 0, a), Keyframe(10, 0, 0, b)])
    (_, _, _, yaw), = interpolate_track(track, [5])
    assert yaw == pytest.approx(math.pi, abs=1e-12)


def test_single_keyframe_clamps_everywhere():
    track = track_with([Keyframe(5, 1.0, 2.0, 0.3)])
    out = interpolate_track(track, [0, 5, 100])
    for _, x, y, yaw in out:
        assert (x, y, yaw) == (1.0, 2.0, 0.3)


def test_keyframe_times_reproduce_exactly():
    rng = np.random.default_rng(1)
    kfs = [
        Keyframe(int(t), float(x), float(y), float(w))
        for t, x, y, w in zip(
            np.sort(rng.choice(10_000, 8, replace=False)),
            rng.uniform(-100, 100, 8),
            rng.uniform(-100, 100, 8),
            rng.uniform(-math.pi, math.pi, 8),
        )
    ]
    track = track_with(kfs)
    out = interpolate_track(track, [k.frame_time for k in kfs])
    for k, (_, x, y, yaw) in zip(kfs, out):
        assert x == k.x and y == k.y  # bitwise
        assert abs(normalize_yaw(yaw - k.yaw)) < 1e-12


def test_linear_trajectory_recovered():
    a, b = 3.0, 0.25
    kfs = [Keyframe(t, a + b * t, -2 * (a + b * t), 0.0) for t in (0, 1000, 3000)]
    track = track_with(kfs)
    out = interpolate_track(track, list(range(0, 3001, 100)))
    for t, x, y, _ in out:
        assert abs(x - (a + b * t)) < 1e-9
        assert abs(y - (-2 * (a + b * t))) < 1e-9


def test_clamping_outside_span():
    track = track_with([Keyframe(10, 1.0, 0.0, 0.0), Keyframe(20, 2.0, 0.0, 0.0)])
    out = interpolate_track(track, [0, 30])
    assert out[0][1] == 1.0
    assert out[1][1] == 2.0


def test_empty_keyframes_rejected():
    with pytest.raises(InvalidTrackError):
        track_with([])


def test_unsorted_keyframes_rejected():
    with pytest.raises(InvalidTrackError):
        track_with([Keyframe(5, 0, 0, 0), Keyframe(5, 1, 0, 0)])


# -- place --------------------------------------------------------------------

def test_place_identity():
    model = box_cloud()
    track = track_with([Keyframe(0, 0, 0, 0)], model)
    out = place_object(track, (0.0, 0.0, 0.0))
    np.testing.assert_allclose(out.points, model.points, atol=0)
    assert (out.labels == CAR).all()


def test_place_translation():
    model = box_cloud()
    track = track_with([Keyframe(0, 0, 0, 0)], model)
    out = place_object(track, (5.0, 0.0, 0.0))
    np.testing.assert_allclose(out.points, model.points + [5.0, 0.0, 0.0])


def test_place_half_turn():
    model = LabeledPointCloud.single_frame([[1.0, 0.0, 0.0]], [CAR], 0)
    track = track_with([Keyframe(0, 0, 0, 0)], model)
    out = place_object(track, (2.0, 3.0, math.pi))
    np.testing.assert_allclose(out.points, [[1.0, 3.0, 0.0]], atol=1e-12)


def test_place_preserves_pairwise_distances():
    rng = np.random.default_rng(2)
    model = box_cloud(n=16)
    track = track_with([Keyframe(0, 0, 0, 0)], model)
    d0 = np.linalg.norm(model.points[:, None] - model.points[None, :], axis=2)
    for _ in range(10):
        x, y, yaw = rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-math.pi, math.pi)
        placed = place_object(track, (x, y, yaw))
        d1 = np.linalg.norm(placed.points[:, None] - placed.points[None, :], axis=2)
        np.testing.assert_allclose(d1, d0, atol=1e-9)


def test_place_requires_model():
    with pytest.raises(EmptyModelError):
        place_object(track_with([Keyframe(0, 0, 0, 0)]), (0, 0, 0))


# -- build_model ---------------------------------------------------------------

def sweep_scene(keyframes, shape=None, seed=3):
    """Rigidly move a shape through the keyframed poses; return the trail map."""
    shape = shape if shape is not None else box_cloud(seed=seed).points
    clouds = []
    for k in keyframes:
        c, s = math.cos(k.yaw), math.sin(k.yaw)
        rot = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
        pts = shape @ rot.T + [k.x, k.y, 0.0]
        clouds.append(LabeledPointCloud.single_frame(pts, np.full(len(pts), CAR), k.frame_time))
    from occlab.core import concat_clouds

    return concat_clouds(clouds)


def nearest_distances(a, b):
    return np.array([np.linalg.norm(b - p, axis=1).min() for p in a])


def test_build_model_from_sweep_matches_first_frame_shape():
    shape = box_cloud(seed=4).points
    kfs = [Keyframe(0, 0.0, 0.0, 0.0), Keyframe(1000, 5.0, 0.0, 0.4), Keyframe(2000, 10.0, 1.0, 0.9)]
    m_d = sweep_scene(kfs, shape)
    track = build_model(m_d, track_with(kfs), radius=3.0)
    expected = shape.copy()
    expected[:, :2] -= shape[:, :2].mean(axis=0)
    assert nearest_distances(track.model.points, expected).max() < 1e-6
    assert nearest_distances(expected, track.model.points).max() < 1e-6


def test_build_model_zero_radius_errors():
    kfs = [Keyframe(0, 0.0, 0.0, 0.0)]
    m_d = sweep_scene(kfs)
    with pytest.raises(EmptyModelError):
        build_model(m_d, track_with(kfs), radius=0.0)


def test_build_model_static_object_recentred():
    shape = box_cloud(seed=5).points + [7.0, -3.0, 0.0]
    cloud = LabeledPointCloud.single_frame(shape, np.full(len(shape), CAR), 0)
    track = build_model(cloud, track_with([Keyframe(0, 7.0, -3.0, 0.0)]), radius=5.0)
    center = track.model.points[:, :2].mean(axis=0)
    np.testing.assert_allclose(center, [0.0, 0.0], atol=1e-9)
    np.testing.assert_allclose(np.sort(track.model.points[:, 2]), np.sort(shape[:, 2]), atol=1e-12)


def test_replacing_built_model_reproduces_capture():
    # keyframes mark the object's BEV centroid, as a centered annotation would
    shape = box_cloud(seed=6).points.copy()
    shape[:, :2] -= shape[:, :2].mean(axis=0)
    kfs = [Keyframe(0, 0.0, 0.0, 0.0), Keyframe(1000, 6.0, 2.0, 0.7)]
    m_d = sweep_scene(kfs, shape)
    track = build_model(m_d, track_with(kfs), radius=3.0)
    for k in kfs:
        placed = place_object(track, (k.x, k.y, k.yaw))
        original = m_d.select(m_d.times == np.uint64(k.frame_time))
        assert nearest_distances(original.points, placed.points).max() < 1e-9
