"""Collision-aware layout refinement and the instance-refinement scaffolding.

The layout loss is ``guidance + feature_weight * feat + col`` where ``col``
already carries the collision weight. Descent updates rotation (as a
world-frame rotation vector applied on the left of the quaternion) and
translation with separate per-axis rates; scale stays frozen unless a
scale rate is configured.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .collision import collision_loss_scene
from .errors import OptimizationError, ValidationError
from .guidance import (
    FeatureExtractor,
    FeatureVec,
    GuidanceContext,
    GuidanceTerm,
    SilhouetteDepthDescriptor,
    StubZeroGuidance,
    TimestepSchedule,
    default_schedule,
    normal_smooth_loss,
    reference_loss,
    tv_loss,
)
from .raster import CameraModel, RenderBuffers, render, scene_camera
from .scene import (
    PARAM_DIM,
    ROT,
    SCALE,
    TRANS,
    InstanceTransform,
    Scene,
    compose_scene,
    quat_from_rotvec,
    quat_multiply,
)

log = logging.getLogger(__name__)

QUAT_TOL = 1e-9


@dataclass(frozen=True)
class ReferenceTarget:
    """Masked reference descriptor and the camera of the reference view."""

    feature: FeatureVec
    camera: CameraModel = field(default_factory=scene_camera)
    extractor: FeatureExtractor = field(default_factory=SilhouetteDepthDescriptor)


@dataclass
class LayoutOptConfig:
    iterations: int = 400
    lr_rotation: float = 1e-4
    lr_translation: tuple[float, float, float] = (2e-5, 2e-5, 0.02)
    lr_scale: float = 0.0
    feature_weight: float = 10.0
    collision_weight: float = 0.2
    guidance: GuidanceTerm = field(default_factory=StubZeroGuidance)
    prompt: str = ""
    seed: int = 0
    fd_step: float = 1e-3
    method: str = "sgd"
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-15
    symmetric: bool = True
    frozen_anchor: bool = False
    max_points: int | None = None

    def __post_init__(self):
        if self.iterations < 1:
            raise ValidationError("iterations must be >= 1")
        rates = [self.lr_rotation, self.lr_scale, *self.lr_translation]
        if any(r < 0 for r in rates):
            raise ValidationError("learning rates must be nonnegative")
        if self.method not in ("sgd", "adam"):
            raise ValidationError(f"unknown method {self.method!r}")

    def rate_vector(self) -> np.ndarray:
        rates = np.zeros(PARAM_DIM)
        rates[ROT] = self.lr_rotation
        rates[TRANS] = self.lr_translation
        rates[SCALE] = self.lr_scale
        return rates


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    total: float
    ssds: float
    feat: float
    col: float
    transforms: tuple[InstanceTransform, ...] = ()


@dataclass
class OptTrace:
    rows: list[TraceRow] = field(default_factory=list)
    final: list[InstanceTransform] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "total", "ssds", "feat", "col"])
        for r in self.rows:
            w.writerow([r.iteration, repr(r.total), repr(r.ssds), repr(r.feat), repr(r.col)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "rows": [
                {"iteration": r.iteration, "total": r.total, "ssds": r.ssds, "feat": r.feat, "col": r.col}
                for r in self.rows
            ],
            "final": [xf.to_dict() for xf in self.final],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def finite_difference_transform_grad(
    loss_fn: Callable[[Scene], float],
    scene: Scene,
    index: int,
    h: float = 1e-3,
    coords: Sequence[int] = range(6),
) -> np.ndarray:
    """Central differences of ``loss_fn`` over one instance's parameters."""
    grad = np.zeros(PARAM_DIM)
    xfs = scene.transforms()
    for c in coords:
        plus = list(xfs)
        minus = list(xfs)
        plus[index] = xfs[index].perturbed(c, h)
        minus[index] = xfs[index].perturbed(c, -h)
        grad[c] = (loss_fn(scene.with_transforms(plus)) - loss_fn(scene.with_transforms(minus))) / (2 * h)
    return grad


def render_scene(scene: Scene, camera: CameraModel) -> RenderBuffers:
    return render(compose_scene(scene), camera)


def feature_loss(scene: Scene, reference: ReferenceTarget) -> float:
    """Unweighted descriptor distance between the reference and the current render."""
    return reference_loss(reference.feature, reference.extractor(render_scene(scene, reference.camera)))


def feature_loss_gradient(scene: Scene, reference: ReferenceTarget, index: int, h: float = 1e-3) -> np.ndarray:
    return finite_difference_transform_grad(lambda s: feature_loss(s, reference), scene, index, h)


@dataclass
class LayoutLoss:
    total: float
    ssds: float
    feat: float
    col: float
    grads: np.ndarray
    buffers: RenderBuffers | None = None


def layout_loss(
    scene: Scene,
    reference: ReferenceTarget | None,
    cfg: LayoutOptConfig,
    iteration: int = 0,
    rng: np.random.Generator | None = None,
    with_grad: bool = True,
) -> LayoutLoss:
    report = collision_loss_scene(
        scene,
        cfg.collision_weight,
        symmetric=cfg.symmetric,
        frozen_anchor=cfg.frozen_anchor,
        max_points=cfg.max_points,
        rng=rng,
    )
    col = report.total
    grads = report.grads.copy()

    use_feat = cfg.feature_weight > 0 and reference is not None
    stub = isinstance(cfg.guidance, StubZeroGuidance)
    camera = reference.camera if reference is not None else scene_camera()
    buffers = render_scene(scene, camera) if (use_feat or not stub) else None

    feat = 0.0
    if use_feat:
        feat = cfg.feature_weight * reference_loss(reference.feature, reference.extractor(buffers))
        if with_grad:
            for i in range(len(scene)):
                grads[i] += cfg.feature_weight * feature_loss_gradient(scene, reference, i, cfg.fd_step)

    ssds = 0.0
    if not stub:
        res = cfg.guidance(
            GuidanceContext(buffers, cfg.prompt, iteration, scene, lambda s: render_scene(s, camera))
        )
        ssds = float(res.loss)
        grads += res.grads

    return LayoutLoss(ssds + feat + col, ssds, feat, col, grads, buffers)


def _step_transform(xf: InstanceTransform, delta: np.ndarray) -> InstanceTransform:
    """Apply a parameter-space step; exactly zero components leave fields untouched."""
    if not np.any(delta):
        return xf
    rot, trans, scale = xf.rotation, xf.translation, xf.scale
    if np.any(delta[ROT]):
        rot = quat_multiply(quat_from_rotvec(delta[ROT]), rot)
    if np.any(delta[TRANS]):
        trans = trans + delta[TRANS]
    if delta[SCALE] != 0.0:
        scale = scale + delta[SCALE]
    out = InstanceTransform(scale, rot, trans)
    assert abs(np.linalg.norm(out.rotation) - 1.0) <= QUAT_TOL
    return out


def refine_layout(
    scene: Scene,
    reference: ReferenceTarget | None = None,
    cfg: LayoutOptConfig | None = None,
    callback: Callable[[int, LayoutLoss], None] | None = None,
) -> tuple[Scene, OptTrace]:
    """Gradient descent on instance transforms under the layout loss.

    The trace records the loss at the transforms each step starts from.
    """
    cfg = cfg or LayoutOptConfig()
    rng = np.random.default_rng(cfg.seed)
    rates = cfg.rate_vector()
    trace = OptTrace()
    m = np.zeros((len(scene), PARAM_DIM))
    v = np.zeros((len(scene), PARAM_DIM))
    b1, b2 = cfg.adam_betas

    for it in range(cfg.iterations):
        loss = layout_loss(scene, reference, cfg, it, rng)
        xfs = scene.transforms()
        row = TraceRow(it, loss.total, loss.ssds, loss.feat, loss.col, tuple(xfs))
        if not math.isfinite(loss.total) or not np.all(np.isfinite(loss.grads)):
            trace.final = list(xfs)
            raise OptimizationError(f"non-finite layout loss at iteration {it}", trace)
        trace.rows.append(row)
        if callback is not None:
            callback(it, loss)

        if cfg.method == "adam":
            m = b1 * m + (1 - b1) * loss.grads
            v = b2 * v + (1 - b2) * loss.grads**2
            m_hat = m / (1 - b1 ** (it + 1))
            v_hat = v / (1 - b2 ** (it + 1))
            steps = -rates * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
        else:
            steps = -rates * loss.grads
        scene = scene.with_transforms([_step_transform(xf, d) for xf, d in zip(xfs, steps)])

    trace.final = scene.transforms()
    return scene, trace


# ---------------------------------------------------------------------------
# instance-wise refinement scaffolding
# ---------------------------------------------------------------------------


def exponential_lr(triple: Sequence[float]) -> Callable[[int], float]:
    """Rate schedule from ``[start_iter, initial, final, end_iter]``.

    Log-linear interpolation between the two iterations, clamped outside.
    A bare number is a constant rate.
    """
    if isinstance(triple, (int, float)):
        value = float(triple)
        return lambda it: value
    start, initial, final, end = triple
    start, end = int(start), int(end)

    def rate(it: int) -> float:
        if it <= start:
            return float(initial)
        if it >= end:
            return float(final)
        r = (it - start) / (end - start)
        return float(math.exp(math.log(initial) * (1 - r) + math.log(final) * r))

    return rate


@dataclass
class InstanceRefineConfig:
    profile: str = "short"
    total_iterations: int = 1500
    schedule: TimestepSchedule = field(default_factory=default_schedule)
    smooth_weight: float = 1.0
    tv_weight: float = 0.2
    densify_interval: int = 100
    densify_start: int = 300
    densify_until: int = 900
    resolution_milestones: tuple[tuple[int, int], ...] = ((0, 256), (800, 512))
    batch_size: int = 1
    position_lr: Sequence[float] | float = (0, 0.0005, 0.00005, 500)
    scale_lr: Sequence[float] | float = 0.005
    feature_lr: Sequence[float] | float = 0.01
    opacity_lr: Sequence[float] | float = 0.01
    rotation_lr: Sequence[float] | float = 0.001
    tv_squared: bool = True

    def __post_init__(self):
        if self.total_iterations < 1:
            raise ValidationError("total_iterations must be >= 1")
        if not (0 <= self.densify_start <= self.densify_until <= self.total_iterations):
            raise ValidationError("densify markers must lie within the run")
        if self.schedule.phases[0].start != 0 or self.schedule.end != self.total_iterations:
            raise ValidationError("timestep schedule must cover [0, total_iterations)")
        if not self.resolution_milestones or self.resolution_milestones[0][0] != 0:
            raise ValidationError("resolution milestones must start at iteration 0")

    @classmethod
    def short(cls) -> "InstanceRefineConfig":
        return cls()

    @classmethod
    def extended(cls) -> "InstanceRefineConfig":
        return cls(
            profile="extended",
            total_iterations=2000,
            schedule=default_schedule(2000, 800),
            densify_interval=200,
            densify_start=400,
            densify_until=1600,
            resolution_milestones=((0, 512),),
            batch_size=4,
            position_lr=(0, 0.0005, 0.00002, 1000),
            feature_lr=(0, 0.01, 0.005, 2000),
            opacity_lr=0.05,
            rotation_lr=0.005,
        )

    @classmethod
    def profile_named(cls, name: str) -> "InstanceRefineConfig":
        if name == "short":
            return cls.short()
        if name == "extended":
            return cls.extended()
        raise ValidationError(f"unknown profile {name!r}")


@dataclass(frozen=True)
class PlanEntry:
    iteration: int
    t_min: float
    t_max: float
    densify: bool
    resolution: int
    position_lr: float


def refinement_plan(cfg: InstanceRefineConfig) -> list[PlanEntry]:
    pos_lr = exponential_lr(cfg.position_lr)
    plan = []
    for it in range(cfg.total_iterations):
        phase = cfg.schedule.phase_at(it)
        densify = (
            cfg.densify_start <= it < cfg.densify_until and it % cfg.densify_interval == 0
        )
        res = [r for start, r in cfg.resolution_milestones if start <= it][-1]
        plan.append(PlanEntry(it, phase.t_min, phase.t_max, densify, res, pos_lr(it)))
    return plan


def assemble_instance_loss(buffers: RenderBuffers, cfg: InstanceRefineConfig, guidance_value: float) -> float:
    """Guidance value plus normal-smoothness and depth/normal TV regularizers on the silhouette."""
    mask = buffers.silhouette
    smooth = normal_smooth_loss(buffers.normal, mask)
    tv = tv_loss(buffers.depth, mask, cfg.tv_squared) + tv_loss(buffers.normal, mask, cfg.tv_squared)
    return guidance_value + (cfg.smooth_weight * smooth + cfg.tv_weight * tv)
