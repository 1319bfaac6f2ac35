"""Lift a 2D box layout to initial instance transforms.

Scale comes from the ratio of box widths, x/y from the box centre mapped
to a ``[-1, 1]`` canvas, z from the masked mean of a relative depth map,
and rotation from a render-and-compare search over a pose grid.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyMaskError, ExtractorError, InvalidStepError, ValidationError
from .guidance import FeatureExtractor, FeatureVec, SilhouetteDepthDescriptor, cosine_similarity
from .raster import FILL_FRACTION, CameraModel, RenderBuffers, default_camera, render
from .scene import BBox2D, GaussianCloud, InstanceTransform, LayoutSpec, Pose

log = logging.getLogger(__name__)

# segmented objects are recentred in a square canvas at 90% of its side
PAD_FRACTION = 0.9
DEFAULT_CANVAS = 512
DEFAULT_ELEVATION_RANGE = (-30.0, 60.0)


def postprocessed_width(canvas: int = DEFAULT_CANVAS, fraction: float = PAD_FRACTION) -> float:
    return float(int(canvas * fraction))


def init_scale(orig_box: BBox2D, postprocessed: float = postprocessed_width()) -> float:
    width = orig_box.width
    if width <= 0 or postprocessed <= 0:
        raise ValidationError(f"widths must be positive (box {width}, post-processed {postprocessed})")
    return width / postprocessed


def init_translation_xy(box: BBox2D, canvas: tuple[int, int]) -> tuple[float, float]:
    w, h = canvas
    if not box.within(canvas):
        raise ValidationError(f"box {box.as_list()} lies outside the {w}x{h} canvas")
    cx, cy = box.center
    return 2.0 * cx / w - 1.0, -(2.0 * cy / h - 1.0)


@dataclass(frozen=True, eq=False)
class DepthInput:
    """Relative (non-metric) depth map and one boolean mask per instance."""

    depth: np.ndarray
    masks: tuple[np.ndarray, ...]

    def __post_init__(self):
        depth = np.asarray(self.depth, dtype=np.float64)
        masks = tuple(np.asarray(m, dtype=bool) for m in self.masks)
        for i, m in enumerate(masks):
            if m.shape != depth.shape:
                raise ValidationError(f"mask {i} shape {m.shape} differs from depth {depth.shape}")
            vals = depth[m]
            if not np.all(np.isfinite(vals)) or np.any(vals < 0):
                raise ValidationError(f"depth under mask {i} must be finite and nonnegative")
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "masks", masks)


def masked_mean_depth(inp: DepthInput, index: int) -> float:
    mask = inp.masks[index]
    if not mask.any():
        raise EmptyMaskError(f"mask {index} is empty")
    return float(inp.depth[mask].mean())


def normalize_depths(raw: Sequence[float]) -> list[float]:
    """Affine map of per-instance depths onto ``[-1, 1]``, nearer -> larger z.

    A lone instance (or all-equal depths) maps to 0.
    """
    raw = np.asarray(raw, dtype=np.float64)
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        return [0.0] * raw.size
    return [float(z) for z in 1.0 - 2.0 * (raw - lo) / (hi - lo)]


def init_depth_z(inp: DepthInput, index: int) -> float:
    raw = [masked_mean_depth(inp, i) for i in range(len(inp.masks))]
    return normalize_depths(raw)[index]


# ---------------------------------------------------------------------------
# rotation search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PoseGrid:
    step: float
    elevation_range: tuple[float, float]
    poses: tuple[Pose, ...]

    def __len__(self) -> int:
        return len(self.poses)


def build_pose_grid(
    step: float = 10.0,
    elevation_range: tuple[float, float] = DEFAULT_ELEVATION_RANGE,
    radius: float | None = None,
) -> PoseGrid:
    """Full azimuth x elevation grid.

    Elevations are ordered by distance from 0 (0, -s, +s, -2s, ...) and
    azimuths ascending, so the front pose is always first and wins ties.
    """
    if not (0 < step <= 90):
        raise InvalidStepError(f"step must be in (0, 90], got {step}")
    n_az = 360.0 / step
    if abs(n_az - round(n_az)) > 1e-9:
        raise InvalidStepError(f"step {step} does not divide 360")
    lo, hi = elevation_range
    if not (-90 <= lo <= 0 <= hi <= 90):
        raise ValidationError(f"elevation range {elevation_range} must contain 0 within [-90, 90]")
    if abs(lo / step - round(lo / step)) > 1e-9:
        raise InvalidStepError(f"elevation {lo} is not on the {step}-degree grid")
    k_lo, k_hi = int(round(lo / step)), int(np.floor(hi / step + 1e-9))
    elevations = sorted((k * step for k in range(k_lo, k_hi + 1)), key=lambda e: (abs(e), e))
    radius = radius if radius is not None else default_camera().pose.radius
    poses = tuple(Pose(e, a * step, radius) for e in elevations for a in range(int(round(n_az))))
    return PoseGrid(float(step), (float(lo), float(hi)), poses)


def pose_features(
    cloud: GaussianCloud,
    grid: PoseGrid,
    extractor: FeatureExtractor | None = None,
    camera: CameraModel | None = None,
    recenter: bool = False,
) -> list[FeatureVec]:
    extractor = extractor or SilhouetteDepthDescriptor()
    camera = camera or default_camera()
    feats = []
    for pose in grid.poses:
        try:
            buffers = render(cloud, camera.with_pose(pose))
            if recenter:
                buffers = recenter_buffers(buffers, camera.height)
            feats.append(extractor(buffers))
        except Exception as exc:
            raise ExtractorError(pose, exc) from exc
    return feats


def estimate_rotation(
    cloud: GaussianCloud,
    reference: FeatureVec,
    grid: PoseGrid,
    extractor: FeatureExtractor | None = None,
    camera: CameraModel | None = None,
    recenter: bool = False,
) -> tuple[Pose, float]:
    """Grid pose whose rendering is most cosine-similar to ``reference``.

    Ties go to the lowest grid index. With ``recenter`` every render is
    cropped like :func:`instance_reference_buffers` before extraction. Use
    :meth:`Pose.object_quaternion` to turn the result into the instance's
    initial rotation.
    """
    feats = pose_features(cloud, grid, extractor, camera, recenter)
    sims = np.array([cosine_similarity(reference, f) for f in feats])
    best = int(np.argmax(sims))  # first maximum
    return grid.poses[best], float(sims[best])


def initial_transforms(
    layout: LayoutSpec,
    postprocessed: float | None = None,
    depth: DepthInput | None = None,
    rotations: Sequence[np.ndarray] | None = None,
) -> list[InstanceTransform]:
    """Scale and translation for every entry; z stays 0 without a depth input."""
    post = postprocessed if postprocessed is not None else postprocessed_width(layout.canvas[0])
    zs = (
        normalize_depths([masked_mean_depth(depth, i) for i in range(len(layout.entries))])
        if depth is not None
        else [0.0] * len(layout.entries)
    )
    out = []
    for i, entry in enumerate(layout.entries):
        x, y = init_translation_xy(entry.bbox, layout.canvas)
        q = rotations[i] if rotations is not None else np.array([1.0, 0.0, 0.0, 0.0])
        out.append(InstanceTransform(init_scale(entry.bbox, post), q, np.array([x, y, zs[i]])))
    return out


def recenter_buffers(buffers: RenderBuffers, resolution: int, fill: float = FILL_FRACTION) -> RenderBuffers:
    """Crop the silhouette's bounding square and resample it to ``resolution``.

    The square is scaled so the silhouette's longer side fills ``fill`` of
    the output (nearest-neighbour sampling), mirroring how a segmented
    instance is recentred and padded.
    """
    sil = buffers.silhouette
    if not sil.any():
        raise EmptyMaskError("cannot recentre an empty silhouette")
    ys, xs = np.nonzero(sil)
    cy = 0.5 * (ys.min() + ys.max() + 1)
    cx = 0.5 * (xs.min() + xs.max() + 1)
    side = max(ys.max() + 1 - ys.min(), xs.max() + 1 - xs.min()) / fill
    grid = (np.arange(resolution) + 0.5) / resolution - 0.5
    src_y = np.floor(cy + grid * side).astype(np.int64)
    src_x = np.floor(cx + grid * side).astype(np.int64)
    h, w = sil.shape
    valid = ((src_y >= 0) & (src_y < h))[:, None] & ((src_x >= 0) & (src_x < w))[None, :]
    yy = np.clip(src_y, 0, h - 1)[:, None]
    xx = np.clip(src_x, 0, w - 1)[None, :]
    out_sil = sil[yy, xx] & valid
    out_depth = np.where(out_sil, buffers.depth[yy, xx], np.inf)
    focal = buffers.focal * resolution / side
    return RenderBuffers.from_depth(out_depth, out_sil, focal)


def instance_reference_buffers(
    mask: np.ndarray,
    depth: np.ndarray | None = None,
    camera: CameraModel | None = None,
    fill: float = FILL_FRACTION,
) -> RenderBuffers:
    """Cut one instance out of the reference canvas and recentre it.

    Without a depth map the instance is treated as flat. Compare the
    result against grid renders with ``estimate_rotation(..., recenter=True)``
    so both sides go through the same crop.
    """
    camera = camera or default_camera()
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise EmptyMaskError("instance mask is empty")
    d = np.ones(mask.shape) if depth is None else np.asarray(depth, dtype=np.float64)
    canvas = RenderBuffers(mask.shape[1], mask.shape[0], mask, np.where(mask, d, np.inf), np.zeros(mask.shape + (3,)), camera.focal)
    return recenter_buffers(canvas, camera.height, fill)
