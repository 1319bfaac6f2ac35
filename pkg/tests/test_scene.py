import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compolayout.errors import ExtentZeroError, NumericError, ValidationError
from compolayout.scene import (
    BBox2D,
    GaussianCloud,
    InstanceTransform,
    LayoutEntry,
    LayoutSpec,
    Pose,
    Scene,
    SceneInstance,
    apply_transform,
    compose_scene,
    denormalize_cloud,
    normalize_cloud,
    quat_from_matrix,
    quat_to_matrix,
)

from oracles import transform_loop, transform_scipy


def random_cloud(rng, k=50):
    return GaussianCloud(
        rng.normal(size=(k, 3)),
        rng.uniform(0.01, 0.1, size=k),
        rng.uniform(0, 1, size=k),
        rng.uniform(0, 1, size=(k, 3)),
    )


def random_transform(rng):
    q = rng.normal(size=4)
    return InstanceTransform(float(rng.uniform(0.2, 3.0)), q, rng.normal(size=3))


# --- value types -----------------------------------------------------------


class TestGaussianCloud:
    def test_rejects_empty(self):
        with pytest.raises(ValidationError):
            GaussianCloud.from_points(np.zeros((0, 3)))

    @pytest.mark.parametrize(
        "field, value",
        [("radii", 0.0), ("radii", -1.0), ("opacities", 1.5), ("opacities", -0.1), ("colors", 2.0)],
    )
    def test_attribute_ranges(self, field, value):
        kw = dict(points=np.zeros((2, 3)), radii=np.ones(2), opacities=np.ones(2), colors=np.zeros((2, 3)))
        kw[field] = np.full_like(kw[field], value)
        with pytest.raises(ValidationError):
            GaussianCloud(**kw)

    def test_rejects_nan(self):
        with pytest.raises(ValidationError):
            GaussianCloud.from_points([[0.0, np.nan, 0.0]])

    def test_arrays_are_read_only(self):
        c = GaussianCloud.from_points(np.zeros((3, 3)))
        with pytest.raises(ValueError):
            c.points[0, 0] = 1.0


class TestInstanceTransform:
    def test_scale_must_be_positive(self):
        with pytest.raises(ValidationError):
            InstanceTransform(0.0)
        with pytest.raises(ValidationError):
            InstanceTransform(-1.0)

    def test_quaternion_normalized(self, rng):
        xf = InstanceTransform(1.0, [2.0, 0.0, 0.0, 0.0])
        assert np.array_equal(xf.rotation, [1.0, 0.0, 0.0, 0.0])
        xf = InstanceTransform(1.0, rng.normal(size=4) * 7)
        assert abs(np.linalg.norm(xf.rotation) - 1) < 1e-12

    def test_zero_quaternion_rejected(self):
        with pytest.raises(ValidationError):
            InstanceTransform(1.0, np.zeros(4))

    def test_dict_round_trip(self, rng):
        xf = random_transform(rng)
        assert InstanceTransform.from_dict(xf.to_dict()) == xf

    def test_inverse(self, rng):
        xf = random_transform(rng)
        c = random_cloud(rng)
        back = apply_transform(apply_transform(c, xf), xf.inverse())
        np.testing.assert_allclose(back.points, c.points, atol=1e-10)


def test_quaternion_matrix_round_trip(rng):
    for _ in range(50):
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        q2 = quat_from_matrix(quat_to_matrix(q))
        assert min(np.abs(q - q2).max(), np.abs(q + q2).max()) < 1e-12


def test_pose_ranges():
    assert Pose(0, 370, 1).azimuth == 10.0
    assert Pose(0, -30, 1).azimuth == 330.0
    with pytest.raises(ValidationError):
        Pose(91, 0, 1)
    with pytest.raises(ValidationError):
        Pose(0, 0, 0)
    with pytest.raises(ValidationError):
        Pose(0, 0, float("inf"))


def test_layout_spec_validation():
    box = BBox2D(0, 0, 10, 10)
    LayoutSpec((512, 512), (LayoutEntry(box, "a"),))
    with pytest.raises(ValidationError):
        LayoutSpec((512, 512), ())
    with pytest.raises(ValidationError, match="'bad'"):
        LayoutSpec((512, 512), (LayoutEntry(BBox2D(10, 0, 5, 10), "bad"),))
    with pytest.raises(ValidationError):
        LayoutSpec((512, 512), (LayoutEntry(BBox2D(500, 0, 600, 10), "wide"),))


def test_scene_ids_unique():
    c = GaussianCloud.from_points(np.zeros((1, 3)))
    with pytest.raises(ValidationError):
        Scene((SceneInstance("a", c, InstanceTransform()), SceneInstance("a", c, InstanceTransform())))
    with pytest.raises(ValidationError):
        Scene(())


# --- apply_transform --------------------------------------------------------


def test_identity_is_bit_exact(rng):
    c = random_cloud(rng)
    out = apply_transform(c, InstanceTransform())
    assert out == c


def test_hand_arithmetic():
    c = GaussianCloud.from_points([[1.0, 1.0, 1.0]], radius=0.5)
    out = apply_transform(c, InstanceTransform(2.0, translation=[1.0, 0.0, 0.0]))
    assert out.points.tolist() == [[3.0, 2.0, 2.0]]
    assert out.radii.tolist() == [1.0]


def test_matches_per_point_loop(rng):
    for _ in range(20):
        c = random_cloud(rng, 40)
        xf = random_transform(rng)
        out = apply_transform(c, xf)
        ref = transform_loop(c.points, xf.scale, xf.rotation, xf.translation)
        np.testing.assert_allclose(out.points, ref, rtol=0, atol=1e-12)
        np.testing.assert_array_equal(out.radii, c.radii * xf.scale)
        np.testing.assert_array_equal(out.opacities, c.opacities)
        np.testing.assert_array_equal(out.colors, c.colors)


def test_overflow_is_numeric_error():
    c = GaussianCloud.from_points([[1e300, 0.0, 0.0]])
    with pytest.raises(NumericError):
        apply_transform(c, InstanceTransform(1e10))


def test_composition(rng):
    for _ in range(20):
        c = random_cloud(rng)
        a, b = random_transform(rng), random_transform(rng)
        two_step = apply_transform(apply_transform(c, a), b).points
        one_step = apply_transform(c, b.compose(a)).points
        np.testing.assert_allclose(one_step, two_step, rtol=1e-9, atol=1e-9 * np.abs(two_step).max())


def test_rotation_preserves_distances(rng):
    c = random_cloud(rng, 30)
    xf = InstanceTransform(1.0, rng.normal(size=4))
    p = apply_transform(c, xf).points
    d0 = np.linalg.norm(c.points[:, None] - c.points[None], axis=-1)
    d1 = np.linalg.norm(p[:, None] - p[None], axis=-1)
    np.testing.assert_allclose(d1, d0, rtol=1e-9, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-10, 10), min_size=3, max_size=3),
    st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(lambda q: np.linalg.norm(q) > 1e-3),
    st.floats(0.1, 10),
)
def test_matches_scipy_property(t, q, s):
    pts = np.array([[0.3, -1.2, 2.0], [1.0, 0.0, 0.0], [-4.0, 5.0, 0.5]])
    xf = InstanceTransform(s, q, t)
    out = apply_transform(GaussianCloud.from_points(pts), xf).points
    ref = transform_scipy(pts, s, xf.rotation, t)
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-11)


# --- normalize_cloud --------------------------------------------------------


def test_normalize_fixed_point():
    pts = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 0.5, 0], [0, -0.5, 0]])
    c = GaussianCloud.from_points(pts)
    out, center, extent = normalize_cloud(c)
    assert extent == 1.0
    assert np.array_equal(center, [0, 0, 0])
    np.testing.assert_array_equal(out.points, pts)


def test_normalize_two_points():
    c = GaussianCloud.from_points([[0.0, 0, 0], [2.0, 0, 0]], radius=0.2)
    out, center, extent = normalize_cloud(c)
    assert center.tolist() == [1.0, 0.0, 0.0]
    assert extent == 1.0
    assert out.points.tolist() == [[-1.0, 0, 0], [1.0, 0, 0]]


def test_normalize_degenerate():
    with pytest.raises(ExtentZeroError):
        normalize_cloud(GaussianCloud.from_points(np.ones((4, 3))))


def test_normalize_round_trip_and_extent(rng):
    for _ in range(20):
        c = random_cloud(rng, int(rng.integers(2, 100)))
        c = c.with_points(c.points * rng.uniform(0.01, 100) + rng.normal(size=3) * 10)
        out, center, extent = normalize_cloud(c)
        assert abs(np.linalg.norm(out.points, axis=1).max() - 1.0) <= 1e-12
        np.testing.assert_allclose(out.points.mean(axis=0), 0.0, atol=1e-12)
        back = denormalize_cloud(out, center, extent)
        np.testing.assert_allclose(back.points, c.points, rtol=0, atol=1e-9 * max(1.0, np.abs(c.points).max()))
        np.testing.assert_allclose(back.radii, c.radii, rtol=1e-12)


# --- compose_scene ----------------------------------------------------------


def test_compose_single_identity(rng):
    c = random_cloud(rng)
    assert compose_scene(Scene((SceneInstance("a", c, InstanceTransform()),))) == c


def test_compose_matches_loop(rng):
    for _ in range(10):
        insts = []
        for i in range(int(rng.integers(1, 5))):
            insts.append(SceneInstance(f"i{i}", random_cloud(rng, int(rng.integers(1, 30))), random_transform(rng)))
        scene = Scene(tuple(insts))
        out = compose_scene(scene)
        assert len(out) == sum(len(i.cloud) for i in insts)
        rows = []
        for inst in insts:
            xf = inst.transform
            rows.extend(transform_loop(inst.cloud.points, xf.scale, xf.rotation, xf.translation))
        np.testing.assert_allclose(out.points, np.array(rows), rtol=0, atol=1e-12)
