import math

import numpy as np
import pytest

from compolayout.errors import ValidationError
from compolayout.raster import (
    CameraModel,
    RenderBuffers,
    default_camera,
    default_radius,
    normals_from_depth,
    project,
    render,
    scene_camera,
)
from compolayout.scene import GaussianCloud, InstanceTransform, Pose, apply_transform, quat_from_matrix, rotation_y
from compolayout.synthetic import asymmetric_cloud

from oracles import normals_loop


def check_buffer_invariants(buf):
    fg = buf.silhouette
    assert np.array_equal(fg, np.isfinite(buf.depth))
    assert np.all(buf.normal[~fg] == 0)
    if fg.any():
        np.testing.assert_allclose(np.linalg.norm(buf.normal[fg], axis=-1), 1.0, atol=1e-6)


def test_camera_validation():
    with pytest.raises(ValidationError):
        CameraModel(Pose(0, 0, 3), fov=0)
    with pytest.raises(ValidationError):
        CameraModel(Pose(0, 0, 3), fov=180)
    with pytest.raises(ValidationError):
        CameraModel(Pose(0, 0, 3), width=4, height=64)


def test_default_camera_fill():
    cam = default_camera()
    # a unit-extent object at the origin spans 80% of the image height
    span = 2 * cam.focal * 1.0 / cam.pose.radius
    assert span == pytest.approx(0.8 * cam.height)
    assert default_radius() == pytest.approx(1 / (0.8 * math.tan(math.radians(22.5))))


def test_scene_camera_maps_canvas():
    cam = scene_camera()
    u, v, _ = project(np.array([[-1.0, 1.0, 0.0], [1.0, -1.0, 0.0], [0.0, 0.0, 0.0]]), cam)
    np.testing.assert_allclose(u, [0, 256, 128], atol=1e-9)
    np.testing.assert_allclose(v, [0, 256, 128], atol=1e-9)


def test_single_point_at_origin(backend):
    cam = default_camera()
    cloud = GaussianCloud.from_points([[0.0, 0.0, 0.0]], radius=0.05)
    buf = render(cloud, cam)
    check_buffer_invariants(buf)
    ys, xs = np.nonzero(buf.silhouette)
    assert xs.mean() + 0.5 == pytest.approx(64.0)
    assert ys.mean() + 0.5 == pytest.approx(64.0)
    np.testing.assert_allclose(buf.depth[buf.silhouette], cam.pose.radius)
    r_px = cam.focal * 0.05 / cam.pose.radius
    assert abs(buf.silhouette.sum() - math.pi * r_px**2) < 2 * math.pi * r_px + 4


def test_outside_frustum_is_empty(backend):
    cloud = GaussianCloud.from_points(np.random.default_rng(0).normal(size=(50, 3)) * 0.1)
    moved = apply_transform(cloud, InstanceTransform(translation=[50.0, 0, 0]))
    buf = render(moved, default_camera())
    assert not buf.silhouette.any()
    behind = apply_transform(cloud, InstanceTransform(translation=[0, 0, 10.0]))
    assert not render(behind, default_camera()).silhouette.any()


def test_nan_input_rejected():
    cloud = GaussianCloud.from_points([[0.0, 0.0, 0.0]])
    object.__setattr__(cloud, "points", np.array([[np.nan, 0.0, 0.0]]))
    with pytest.raises(ValidationError):
        render(cloud, default_camera())


def test_z_buffer_nearest_wins(backend):
    cam = CameraModel(Pose(0, 0, 4.0), 45, 32, 32)
    # camera on +z at distance 4: points at z=2 and z=1 are at depth 2 and 3
    cloud = GaussianCloud.from_points([[0.0, 0.0, 1.0], [0.0, 0.0, 2.0]], radius=0.01)
    buf = render(cloud, cam)
    assert buf.depth[buf.silhouette].min() == 2.0
    assert set(buf.point_index[buf.silhouette]) == {1}


def test_tie_goes_to_lower_index(backend):
    cam = CameraModel(Pose(0, 0, 4.0), 45, 32, 32)
    cloud = GaussianCloud.from_points([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]], radius=0.05)
    buf = render(cloud, cam)
    assert set(buf.point_index[buf.silhouette]) == {0}


def test_low_opacity_skipped(backend):
    cam = default_camera()
    cloud = GaussianCloud([[0.0, 0, 0]], [0.05], [0.4], [[0.5, 0.5, 0.5]])
    assert not render(cloud, cam).silhouette.any()


def test_permutation_invariance(backend, rng):
    cloud = asymmetric_cloud(rng, 600)
    cam = default_camera(20, 75)
    perm = rng.permutation(len(cloud))
    shuffled = GaussianCloud(cloud.points[perm], cloud.radii[perm], cloud.opacities[perm], cloud.colors[perm])
    a, b = render(cloud, cam), render(shuffled, cam)
    assert np.array_equal(a.silhouette, b.silhouette)
    assert np.array_equal(a.depth, b.depth)
    assert np.array_equal(a.normal, b.normal)


def test_deterministic(backend, rng):
    cloud = asymmetric_cloud(rng, 500)
    a, b = render(cloud, default_camera(10, 40)), render(cloud, default_camera(10, 40))
    assert a.same_as(b)
    check_buffer_invariants(a)


def test_pose_object_duality(backend, rng):
    cloud = asymmetric_cloud(rng, 800)
    for elev, az in [(0, 40), (0, 123), (20, 40), (-30, 300)]:
        pose = Pose(elev, az, default_radius())
        cam_view = render(cloud, default_camera(elev, az))
        q = pose.object_quaternion()
        obj_view = render(apply_transform(cloud, InstanceTransform(1.0, q)), default_camera())
        assert np.array_equal(cam_view.silhouette, obj_view.silhouette)
        fg = cam_view.silhouette
        np.testing.assert_allclose(cam_view.depth[fg], obj_view.depth[fg], atol=1e-6)


def test_azimuth_only_duality(rng):
    cloud = asymmetric_cloud(rng, 800)
    for delta in (30.0, 90.0, 200.0):
        q = quat_from_matrix(rotation_y(-delta))
        a = render(apply_transform(cloud, InstanceTransform(1.0, q)), default_camera())
        b = render(cloud, default_camera(0, delta))
        assert a.same_as(b, atol=1e-6)


def test_silhouette_shrinks_with_radius(backend, rng):
    cloud = asymmetric_cloud(rng, 800)
    counts = [render(cloud, CameraModel(Pose(15, 60, r), 45, 96, 96)).silhouette.sum() for r in np.linspace(3, 9, 13)]
    assert all(a >= b for a, b in zip(counts, counts[1:]))


# --- normals --------------------------------------------------------------


def test_constant_depth_faces_camera():
    depth = np.full((12, 12), np.inf)
    depth[2:10, 3:9] = 2.5
    buf = RenderBuffers.from_depth(depth, focal=50.0)
    check_buffer_invariants(buf)
    np.testing.assert_array_equal(buf.normal[buf.silhouette], np.tile([0.0, 0.0, 1.0], (48, 1)))


def test_planar_ramp_constant_normal():
    y, x = np.mgrid[0:20, 0:20]
    depth = 3.0 + 0.01 * x - 0.02 * y
    buf = RenderBuffers.from_depth(depth, focal=40.0)
    n = buf.normal.reshape(-1, 3)
    np.testing.assert_allclose(n, np.tile(n[0], (n.shape[0], 1)), atol=1e-12)
    k = 40.0 / depth.mean()
    expect = np.array([k * 0.01, k * 0.02, 1.0])
    np.testing.assert_allclose(n[0], expect / np.linalg.norm(expect), atol=1e-12)


def test_isolated_pixel_faces_camera():
    depth = np.full((5, 5), np.inf)
    depth[2, 2] = 1.0
    buf = RenderBuffers.from_depth(depth)
    assert buf.normal[2, 2].tolist() == [0.0, 0.0, 1.0]


def test_normals_match_loop_oracle(backend, rng):
    for _ in range(5):
        h, w = 24, 30
        y, x = np.mgrid[0:h, 0:w] / 10.0
        a = rng.normal(size=4)
        depth = 3 + 0.2 * np.sin(a[0] * x + a[1]) * np.cos(a[2] * y + a[3])
        fg = rng.uniform(size=(h, w)) < 0.8
        buf = RenderBuffers.from_depth(np.where(fg, depth, np.inf), focal=37.0)
        ref = normals_loop(depth, fg, 37.0)
        np.testing.assert_allclose(buf.normal, ref, rtol=0, atol=1e-9)


def test_normals_from_depth_background_untouched():
    depth = np.full((6, 6), np.inf)
    depth[1:4, 1:4] = [[1, 2, 3], [2, 3, 4], [3, 4, 5]]
    buf = RenderBuffers.from_depth(depth, focal=3.0)
    again = normals_from_depth(buf)
    assert again.same_as(buf)
    assert np.all(again.normal[~buf.silhouette] == 0)
