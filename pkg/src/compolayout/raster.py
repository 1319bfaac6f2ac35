"""Hard-edged point-splat rasterizer producing silhouette, depth and normal buffers.

Camera convention: world is right-handed with y up. The front camera
(elevation 0, azimuth 0) sits on +z and looks down -z at the origin.
Camera space has x right, y up, and looks along -z; stored depth is the
distance along the viewing axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ValidationError
from .scene import GaussianCloud, Pose

NEAR_PLANE = 1e-4
OPACITY_CUTOFF = 0.5
FILL_FRACTION = 0.8


@dataclass(frozen=True)
class CameraModel:
    pose: Pose
    fov: float = 45.0
    width: int = 128
    height: int = 128

    def __post_init__(self):
        if not (0.0 < self.fov < 180.0):
            raise ValidationError(f"fov must be in (0, 180), got {self.fov}")
        if self.width < 8 or self.height < 8:
            raise ValidationError(f"image must be at least 8x8, got {self.width}x{self.height}")

    @property
    def focal(self) -> float:
        """Focal length in pixels (vertical field of view)."""
        return 0.5 * self.height / math.tan(math.radians(0.5 * self.fov))

    def with_pose(self, pose: Pose) -> "CameraModel":
        return CameraModel(pose, self.fov, self.width, self.height)


def default_radius(fov: float = 45.0, fill: float = FILL_FRACTION) -> float:
    """Distance at which a unit-extent object spans ``fill`` of the image height."""
    return 1.0 / (fill * math.tan(math.radians(0.5 * fov)))


def default_camera(elevation: float = 0.0, azimuth: float = 0.0, resolution: int = 128, fov: float = 45.0) -> CameraModel:
    return CameraModel(Pose(elevation, azimuth, default_radius(fov)), fov, resolution, resolution)


@dataclass(frozen=True, eq=False)
class RenderBuffers:
    """Per-pixel silhouette, depth (``inf`` on background) and unit normals.

    ``focal`` is the pixel focal length of the producing camera; it sets
    the pixel-to-scene scale used when differentiating depth.
    """

    width: int
    height: int
    silhouette: np.ndarray
    depth: np.ndarray
    normal: np.ndarray
    focal: float = 1.0
    point_index: np.ndarray | None = None

    def __post_init__(self):
        shape = (self.height, self.width)
        if self.silhouette.shape != shape or self.depth.shape != shape or self.normal.shape != shape + (3,):
            raise ValidationError("buffer shapes disagree with declared dimensions")

    @classmethod
    def from_depth(cls, depth: np.ndarray, silhouette: np.ndarray | None = None, focal: float = 1.0) -> "RenderBuffers":
        """Build buffers from a depth image; normals are derived from depth."""
        depth = np.asarray(depth, dtype=np.float64)
        sil = np.isfinite(depth) if silhouette is None else np.asarray(silhouette, dtype=bool)
        depth = np.where(sil, depth, np.inf)
        h, w = depth.shape
        buf = cls(w, h, sil, depth, np.zeros((h, w, 3)), focal)
        return normals_from_depth(buf)

    def masked(self, mask: np.ndarray) -> "RenderBuffers":
        mask = np.asarray(mask, dtype=bool)
        sil = self.silhouette & mask
        return RenderBuffers(
            self.width,
            self.height,
            sil,
            np.where(sil, self.depth, np.inf),
            np.where(sil[..., None], self.normal, 0.0),
            self.focal,
            None if self.point_index is None else np.where(sil, self.point_index, -1),
        )

    def same_as(self, other: "RenderBuffers", atol: float = 0.0) -> bool:
        if not np.array_equal(self.silhouette, other.silhouette):
            return False
        fg = self.silhouette
        return bool(
            np.allclose(self.depth[fg], other.depth[fg], rtol=0, atol=atol)
            and np.allclose(self.normal, other.normal, rtol=0, atol=atol)
        )


def project(points: np.ndarray, cam: CameraModel) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pixel coordinates ``(u, v)`` and view-axis depth of world points."""
    rot = cam.pose.rotation()
    eye = rot @ np.array([0.0, 0.0, cam.pose.radius])
    pc = (points - eye) @ rot
    depth = -pc[:, 2]
    f = cam.focal
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        u = 0.5 * cam.width + f * pc[:, 0] / depth
        v = 0.5 * cam.height - f * pc[:, 1] / depth
    return u, v, depth


def render(cloud: GaussianCloud, cam: CameraModel) -> RenderBuffers:
    pts = np.asarray(cloud.points)
    if not np.all(np.isfinite(pts)) or not np.all(np.isfinite(cloud.radii)):
        raise ValidationError("cloud contains non-finite values")
    u, v, depth = project(pts, cam)
    f = cam.focal
    with np.errstate(divide="ignore", invalid="ignore"):
        rad = f * cloud.radii / depth
        keep = (cloud.opacities >= OPACITY_CUTOFF) & (depth > NEAR_PLANE)
        keep &= (u + rad >= 0) & (u - rad < cam.width) & (v + rad >= 0) & (v - rad < cam.height)
    sel = np.flatnonzero(keep)
    zbuf, idx = kernels.splat(
        np.ascontiguousarray(u[sel]),
        np.ascontiguousarray(v[sel]),
        np.ascontiguousarray(depth[sel]),
        np.ascontiguousarray(rad[sel]),
        cam.width,
        cam.height,
    )
    sil = idx >= 0
    point_index = np.where(sil, sel[np.maximum(idx, 0)] if sel.size else -1, -1)
    buf = RenderBuffers(cam.width, cam.height, sil, zbuf, np.zeros((cam.height, cam.width, 3)), f, point_index)
    return normals_from_depth(buf)


def normals_from_depth(buffers: RenderBuffers) -> RenderBuffers:
    """Camera-space normals from finite differences of depth.

    Pixel steps are converted to scene units with ``focal / mean foreground
    depth``, one scale per image, so a linear depth ramp yields a constant
    normal field. Foreground pixels without any foreground neighbour face
    the camera, ``(0, 0, 1)``.
    """
    fg = buffers.silhouette
    normal = np.zeros((buffers.height, buffers.width, 3))
    if fg.any():
        depth = np.ascontiguousarray(buffers.depth, dtype=np.float64)
        k = buffers.focal / float(depth[fg].mean())
        normal = kernels.depth_normals(depth, np.ascontiguousarray(fg, dtype=np.uint8), k)
    return RenderBuffers(
        buffers.width, buffers.height, fg, buffers.depth, normal, buffers.focal, buffers.point_index
    )


def scene_camera(
    elevation: float = 0.0,
    azimuth: float = 0.0,
    resolution: int = 256,
    radius: float = 4.0,
) -> CameraModel:
    """Camera whose view at the origin plane spans exactly the ``[-1, 1]`` canvas."""
    fov = 2.0 * math.degrees(math.atan(1.0 / radius))
    return CameraModel(Pose(elevation, azimuth, radius), fov, resolution, resolution)
