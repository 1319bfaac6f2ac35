"""Scene value types and rigid-with-scale placement of point clouds.

Quaternions are stored scalar-first, ``(w, x, y, z)``. A transform maps a
canonical point ``p`` to ``scale * R(q) @ p + translation``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ExtentZeroError, NumericError, ValidationError

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])

# Per-instance parameter layout for gradients: world-frame rotation vector
# (left perturbation of the quaternion), translation, scale.
PARAM_DIM = 7
ROT, TRANS, SCALE = slice(0, 3), slice(3, 6), 6


def _frozen(a, dtype=np.float64) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


# ---------------------------------------------------------------------------
# quaternion helpers
# ---------------------------------------------------------------------------


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = (float(c) for c in q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_multiply(a, b) -> np.ndarray:
    """Hamilton product ``a ⊗ b`` (apply ``b`` first, then ``a``)."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_from_rotvec(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    angle = float(np.linalg.norm(v))
    if angle == 0.0:
        return IDENTITY_QUAT.copy()
    half = 0.5 * angle
    return np.concatenate([[math.cos(half)], math.sin(half) * v / angle])


def quat_from_matrix(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    q /= np.linalg.norm(q)
    return q if q[0] >= 0 else -q


def rotation_y(deg: float) -> np.ndarray:
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_x(deg: float) -> np.ndarray:
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


# ---------------------------------------------------------------------------
# value types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GaussianCloud:
    """Isotropic point splats: positions, radii, opacities and RGB colors."""

    points: np.ndarray
    radii: np.ndarray
    opacities: np.ndarray
    colors: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise ValidationError(f"points must have shape (K>=1, 3), got {pts.shape}")
        k = pts.shape[0]
        radii = np.asarray(self.radii, dtype=np.float64)
        opac = np.asarray(self.opacities, dtype=np.float64)
        cols = np.asarray(self.colors, dtype=np.float64)
        if radii.shape != (k,) or opac.shape != (k,) or cols.shape != (k, 3):
            raise ValidationError("per-point attribute arrays do not match point count")
        if not np.all(np.isfinite(pts)):
            raise ValidationError("point coordinates must be finite")
        if not np.all(radii > 0) or not np.all(np.isfinite(radii)):
            raise ValidationError("radii must be finite and strictly positive")
        if not (np.all(opac >= 0) and np.all(opac <= 1)):
            raise ValidationError("opacities must lie in [0, 1]")
        if not (np.all(cols >= 0) and np.all(cols <= 1)):
            raise ValidationError("colors must lie in [0, 1]")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "radii", _frozen(radii))
        object.__setattr__(self, "opacities", _frozen(opac))
        object.__setattr__(self, "colors", _frozen(cols))

    @classmethod
    def from_points(cls, points, radius: float = 0.01, opacity: float = 1.0, color=(0.5, 0.5, 0.5)):
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        k = pts.shape[0]
        return cls(
            pts,
            np.full(k, float(radius)),
            np.full(k, float(opacity)),
            np.tile(np.asarray(color, dtype=np.float64), (k, 1)),
        )

    def __len__(self) -> int:
        return self.points.shape[0]

    def with_points(self, points, radii=None) -> "GaussianCloud":
        return GaussianCloud(points, self.radii if radii is None else radii, self.opacities, self.colors)

    def __eq__(self, other) -> bool:
        if not isinstance(other, GaussianCloud):
            return NotImplemented
        return (
            np.array_equal(self.points, other.points)
            and np.array_equal(self.radii, other.radii)
            and np.array_equal(self.opacities, other.opacities)
            and np.array_equal(self.colors, other.colors)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class InstanceTransform:
    """Uniform scale, unit quaternion rotation and translation.

    The quaternion is renormalized on construction; a zero quaternion is
    rejected.
    """

    scale: float = 1.0
    rotation: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        scale = float(self.scale)
        if not (scale > 0 and math.isfinite(scale)):
            raise ValidationError(f"scale must be positive and finite, got {self.scale}")
        q = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        n = float(np.linalg.norm(q))
        if not (n > 0 and math.isfinite(n)):
            raise ValidationError("rotation quaternion must be non-zero and finite")
        if n != 1.0:
            q = q / n
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValidationError("translation must be finite")
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "rotation", _frozen(q))
        object.__setattr__(self, "translation", _frozen(t))

    @property
    def matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def is_identity(self) -> bool:
        return (
            self.scale == 1.0
            and np.array_equal(self.rotation, IDENTITY_QUAT)
            and not np.any(self.translation)
        )

    def compose(self, inner: "InstanceTransform") -> "InstanceTransform":
        """Transform equivalent to applying ``inner`` first, then ``self``."""
        rot = quat_multiply(self.rotation, inner.rotation)
        trans = self.scale * (self.matrix @ inner.translation) + self.translation
        return InstanceTransform(self.scale * inner.scale, rot, trans)

    def inverse(self) -> "InstanceTransform":
        w, x, y, z = self.rotation
        conj = np.array([w, -x, -y, -z])
        inv_s = 1.0 / self.scale
        return InstanceTransform(inv_s, conj, -inv_s * (quat_to_matrix(conj) @ self.translation))

    def perturbed(self, coord: int, h: float) -> "InstanceTransform":
        """Step one parameter coordinate (see ``PARAM_DIM``) by ``h``."""
        if coord < 3:
            dv = np.zeros(3)
            dv[coord] = h
            return self.replace(rotation=quat_multiply(quat_from_rotvec(dv), self.rotation))
        if coord < 6:
            t = self.translation.copy()
            t[coord - 3] += h
            return self.replace(translation=t)
        if coord == SCALE:
            return self.replace(scale=self.scale + h)
        raise IndexError(coord)

    def replace(self, **changes) -> "InstanceTransform":
        fields = {"scale": self.scale, "rotation": self.rotation, "translation": self.translation}
        fields.update(changes)
        return InstanceTransform(**fields)

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "rotation": [float(c) for c in self.rotation],
            "translation": [float(c) for c in self.translation],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InstanceTransform":
        return cls(
            float(d.get("scale", 1.0)),
            np.asarray(d.get("rotation", IDENTITY_QUAT), dtype=np.float64),
            np.asarray(d.get("translation", (0.0, 0.0, 0.0)), dtype=np.float64),
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, InstanceTransform):
            return NotImplemented
        return (
            self.scale == other.scale
            and np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
        )

    __hash__ = None


@dataclass(frozen=True)
class Pose:
    """Camera placement on a sphere around the origin, angles in degrees."""

    elevation: float
    azimuth: float
    radius: float

    def __post_init__(self):
        if not (-90.0 <= self.elevation <= 90.0):
            raise ValidationError(f"elevation {self.elevation} outside [-90, 90]")
        if not math.isfinite(self.radius) or self.radius <= 0:
            raise ValidationError(f"camera radius must be finite and positive, got {self.radius}")
        object.__setattr__(self, "azimuth", float(self.azimuth) % 360.0)

    def rotation(self) -> np.ndarray:
        """World rotation carrying the front camera (on +z, y up) to this pose."""
        return rotation_y(self.azimuth) @ rotation_x(-self.elevation)

    def position(self) -> np.ndarray:
        return self.rotation() @ np.array([0.0, 0.0, self.radius])

    def object_quaternion(self) -> np.ndarray:
        """Instance rotation that makes the front view show what this pose shows."""
        return quat_from_matrix(self.rotation().T)


@dataclass(frozen=True)
class BBox2D:
    x1: float
    y1: float
    x2: float
    y2: float

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))

    def is_ordered(self) -> bool:
        return self.x1 < self.x2 and self.y1 < self.y2

    def within(self, canvas: tuple[int, int]) -> bool:
        w, h = canvas
        return 0 <= self.x1 and self.x2 <= w and 0 <= self.y1 and self.y2 <= h

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]


@dataclass(frozen=True)
class LayoutEntry:
    bbox: BBox2D
    label: str
    mode: str = "xyxy"


@dataclass(frozen=True)
class LayoutSpec:
    canvas: tuple[int, int]
    entries: tuple[LayoutEntry, ...]
    prompt: str = ""

    def __post_init__(self):
        if not self.entries:
            raise ValidationError("layout has no entries")
        for i, e in enumerate(self.entries):
            if not e.bbox.is_ordered() or not e.bbox.within(self.canvas):
                raise ValidationError(f"entry {i} ({e.label!r}) has invalid bbox {e.bbox.as_list()}")


@dataclass(frozen=True)
class SceneInstance:
    id: str
    cloud: GaussianCloud
    transform: InstanceTransform
    label: str = ""


@dataclass(frozen=True)
class Scene:
    instances: tuple[SceneInstance, ...]

    def __post_init__(self):
        inst = tuple(self.instances)
        if not inst:
            raise ValidationError("scene needs at least one instance")
        ids = [i.id for i in inst]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"duplicate instance ids in {ids}")
        object.__setattr__(self, "instances", inst)

    def __len__(self) -> int:
        return len(self.instances)

    def transforms(self) -> list[InstanceTransform]:
        return [i.transform for i in self.instances]

    def with_transforms(self, transforms: Sequence[InstanceTransform]) -> "Scene":
        if len(transforms) != len(self.instances):
            raise ValidationError("transform count does not match instance count")
        return Scene(
            tuple(
                SceneInstance(i.id, i.cloud, xf, i.label) for i, xf in zip(self.instances, transforms)
            )
        )


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def transform_points(points: np.ndarray, xf: InstanceTransform) -> np.ndarray:
    return xf.scale * (points @ xf.matrix.T) + xf.translation


def apply_transform(cloud: GaussianCloud, xf: InstanceTransform) -> GaussianCloud:
    if xf.is_identity():
        return cloud
    with np.errstate(over="ignore", invalid="ignore"):
        pts = transform_points(cloud.points, xf)
        radii = cloud.radii * xf.scale
    if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(radii))):
        raise NumericError("transformed cloud has non-finite coordinates")
    return GaussianCloud(pts, radii, cloud.opacities, cloud.colors)


def normalize_cloud(cloud: GaussianCloud) -> tuple[GaussianCloud, np.ndarray, float]:
    """Center on the centroid and rescale so the farthest point sits at distance 1.

    Returns the normalized cloud with the removed center and the original
    extent; :func:`denormalize_cloud` inverts the mapping.
    """
    center = cloud.points.mean(axis=0)
    offsets = cloud.points - center
    extent = float(np.sqrt((offsets**2).sum(axis=1)).max())
    if extent == 0.0:
        raise ExtentZeroError("all points coincide; extent is zero")
    pts = offsets / extent
    return GaussianCloud(pts, cloud.radii / extent, cloud.opacities, cloud.colors), center, extent


def denormalize_cloud(cloud: GaussianCloud, center, extent: float) -> GaussianCloud:
    return GaussianCloud(cloud.points * extent + np.asarray(center), cloud.radii * extent, cloud.opacities, cloud.colors)


def concat_clouds(clouds: Sequence[GaussianCloud]) -> GaussianCloud:
    return GaussianCloud(
        np.concatenate([c.points for c in clouds]),
        np.concatenate([c.radii for c in clouds]),
        np.concatenate([c.opacities for c in clouds]),
        np.concatenate([c.colors for c in clouds]),
    )


def compose_scene(scene: Scene) -> GaussianCloud:
    return concat_clouds([apply_transform(i.cloud, i.transform) for i in scene.instances])


def world_points(scene: Scene) -> list[np.ndarray]:
    return [transform_points(i.cloud.points, i.transform) for i in scene.instances]
