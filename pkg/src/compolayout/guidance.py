"""Image descriptors, the feature-level reference loss, timestep schedules,
regularizers and the pluggable guidance slot."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence, runtime_checkable

import numpy as np

from .errors import (
    EmptyMaskError,
    EmptySilhouetteError,
    IncompatibleFeatureError,
    ScheduleExhaustedError,
    ValidationError,
)
from .raster import RenderBuffers
from .scene import PARAM_DIM

POOL = 16
DEFAULT_DESCRIPTOR = "silhouette-depth-v1"


@dataclass(frozen=True, eq=False)
class FeatureVec:
    """Descriptor values plus the block lengths used by the reference loss."""

    values: np.ndarray
    descriptor_id: str
    blocks: tuple[int, ...] = ()

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64).ravel()
        if not np.all(np.isfinite(vals)):
            raise ValidationError("feature values must be finite")
        blocks = tuple(int(b) for b in self.blocks) or (vals.size,)
        if sum(blocks) != vals.size:
            raise ValidationError(f"blocks {blocks} do not cover {vals.size} values")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "blocks", blocks)

    def __len__(self) -> int:
        return self.values.size

    def split(self) -> list[np.ndarray]:
        return np.split(self.values, np.cumsum(self.blocks)[:-1])


@runtime_checkable
class FeatureExtractor(Protocol):
    descriptor_id: str

    def __call__(self, buffers: RenderBuffers) -> FeatureVec: ...


def _pool(img: np.ndarray, bins: int = POOL) -> np.ndarray:
    """Average over a ``bins x bins`` partition; empty cells (tiny images) pool to 0."""
    h, w = img.shape
    rows = (np.arange(h) * bins) // h
    cols = (np.arange(w) * bins) // w
    cell = rows[:, None] * bins + cols[None, :]
    sums = np.bincount(cell.ravel(), weights=img.ravel(), minlength=bins * bins)
    counts = np.bincount(cell.ravel(), minlength=bins * bins)
    return np.divide(sums, counts, out=np.zeros(bins * bins), where=counts > 0)


def silhouette_moments(sil: np.ndarray) -> np.ndarray:
    """Centroid and second central moments of a mask in ``[-1, 1]`` pixel-centre coordinates.

    Returns ``(mean_x, mean_y, var_x, cov_xy, var_y)``; y grows upward.
    """
    h, w = sil.shape
    ys, xs = np.nonzero(sil)
    x = 2.0 * (xs + 0.5) / w - 1.0
    y = 1.0 - 2.0 * (ys + 0.5) / h
    mx, my = x.mean(), y.mean()
    dx, dy = x - mx, y - my
    return np.array([mx, my, (dx * dx).mean(), (dx * dy).mean(), (dy * dy).mean()])


def normalized_depth(buffers: RenderBuffers) -> np.ndarray:
    """Standardized foreground depth, ``1 + (mean - d) / (4 std)``; background 0.

    Nearer pixels get larger values and a constant-depth foreground is all
    ones. Using mean and spread rather than the extremes keeps the block
    stable when a single nearest or farthest point changes, and makes it
    invariant to rescaling depth by a positive constant.
    """
    fg = buffers.silhouette
    out = np.zeros(fg.shape)
    d = buffers.depth[fg]
    mean = d.mean()
    std = np.sqrt(((d - mean) ** 2).mean())
    out[fg] = 1.0 if std == 0 else 1.0 + 0.25 * (mean - d) / std
    return out


@dataclass(frozen=True)
class SilhouetteDepthDescriptor:
    """Built-in geometric descriptor.

    Concatenates a 16x16 pooled silhouette, a 16x16 pooled normalized depth
    and five silhouette moments (517 values), then L2-normalizes the whole.
    """

    descriptor_id: str = DEFAULT_DESCRIPTOR

    def __call__(self, buffers: RenderBuffers) -> FeatureVec:
        sil = buffers.silhouette
        if not sil.any():
            raise EmptySilhouetteError("cannot describe an empty silhouette")
        parts = [
            _pool(sil.astype(np.float64)),
            _pool(normalized_depth(buffers)),
            silhouette_moments(sil),
        ]
        vals = np.concatenate(parts)
        vals /= np.linalg.norm(vals)
        return FeatureVec(vals, self.descriptor_id, tuple(p.size for p in parts))


def extract_default_feature(buffers: RenderBuffers) -> FeatureVec:
    return SilhouetteDepthDescriptor()(buffers)


def cosine_similarity(a: FeatureVec, b: FeatureVec) -> float:
    _check_compatible(a, b)
    return float(a.values @ b.values / (np.linalg.norm(a.values) * np.linalg.norm(b.values)))


def _check_compatible(a: FeatureVec, b: FeatureVec) -> None:
    if a.descriptor_id != b.descriptor_id or a.blocks != b.blocks:
        raise IncompatibleFeatureError(
            f"features differ: {a.descriptor_id}{a.blocks} vs {b.descriptor_id}{b.blocks}"
        )


def reference_loss(f_ref: FeatureVec, f_render: FeatureVec, weight: float = 1.0) -> float:
    """``weight`` times the sum over descriptor blocks of the L2 distance."""
    _check_compatible(f_ref, f_render)
    return weight * float(
        sum(np.linalg.norm(a - b) for a, b in zip(f_ref.split(), f_render.split()))
    )


def union_mask(masks: Sequence[np.ndarray]) -> np.ndarray:
    masks = [np.asarray(m, dtype=bool) for m in masks]
    if not masks:
        raise EmptyMaskError("no masks given")
    out = np.zeros_like(masks[0])
    for m in masks:
        if m.shape != out.shape:
            raise ValidationError("masks have different shapes")
        out |= m
    return out


def masked_reference_feature(
    reference: RenderBuffers,
    masks: np.ndarray | Sequence[np.ndarray],
    extractor: FeatureExtractor | None = None,
) -> FeatureVec:
    """Keep only the masked foreground of the reference, then describe it."""
    mask = np.asarray(masks, dtype=bool)
    if mask.ndim == 3:
        mask = union_mask(list(mask))
    if mask.shape != reference.silhouette.shape:
        raise ValidationError("mask does not match reference buffers")
    if not mask.any():
        raise EmptyMaskError("union mask is empty")
    extractor = extractor or SilhouetteDepthDescriptor()
    return extractor(reference.masked(mask))


# ---------------------------------------------------------------------------
# timestep schedule
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Phase:
    start: int
    stop: int
    t_min: float
    t_max: float


@dataclass(frozen=True)
class TimestepSchedule:
    phases: tuple[Phase, ...]
    weighting: str = "constant"

    def __post_init__(self):
        phases = tuple(self.phases)
        if not phases:
            raise ValidationError("schedule needs at least one phase")
        for p in phases:
            if not (p.start < p.stop):
                raise ValidationError(f"empty iteration interval [{p.start}, {p.stop})")
            if not (0.0 <= p.t_min < p.t_max <= 1.0):
                raise ValidationError(f"bad t-range [{p.t_min}, {p.t_max}]")
        for a, b in zip(phases, phases[1:]):
            if a.stop != b.start:
                raise ValidationError("phases must be contiguous and non-overlapping")
        object.__setattr__(self, "phases", phases)

    @property
    def end(self) -> int:
        return self.phases[-1].stop

    def phase_at(self, iteration: int) -> Phase:
        for p in self.phases:
            if p.start <= iteration < p.stop:
                return p
        raise ScheduleExhaustedError(f"iteration {iteration} not covered by schedule")

    def to_list(self) -> list[dict]:
        return [{"iters": [p.start, p.stop], "t": [p.t_min, p.t_max]} for p in self.phases]

    @classmethod
    def from_list(cls, rows: Sequence[dict], weighting: str = "constant") -> "TimestepSchedule":
        return cls(
            tuple(Phase(int(r["iters"][0]), int(r["iters"][1]), float(r["t"][0]), float(r["t"][1])) for r in rows),
            weighting,
        )


def default_schedule(total: int = 1500, switch: int = 800) -> TimestepSchedule:
    """Low-noise phase up to ``switch``, then the widened range."""
    return TimestepSchedule((Phase(0, switch, 0.10, 0.50), Phase(switch, total, 0.02, 0.75)))


WEIGHTINGS: dict[str, Callable[[float], float]] = {"constant": lambda t: 1.0}


def sample_timestep(schedule: TimestepSchedule, iteration: int, rng: np.random.Generator) -> float:
    phase = schedule.phase_at(iteration)
    t = float(rng.uniform(phase.t_min, phase.t_max))
    assert phase.t_min <= t <= phase.t_max, "timestep escaped its phase range"
    return t


# ---------------------------------------------------------------------------
# regularizers
# ---------------------------------------------------------------------------


def _adjacent_pairs(field: np.ndarray, mask: np.ndarray):
    """Yield ``(a, b)`` value arrays for horizontal and vertical neighbours both in ``mask``."""
    h_ok = mask[:, 1:] & mask[:, :-1]
    v_ok = mask[1:, :] & mask[:-1, :]
    yield field[:, 1:][h_ok], field[:, :-1][h_ok]
    yield field[1:, :][v_ok], field[:-1, :][v_ok]


def tv_loss(field: np.ndarray, mask: np.ndarray, squared: bool = True) -> float:
    """Mean over masked 4-neighbour pairs of the squared (or absolute) difference.

    Vector fields (``H x W x C``) use the Euclidean difference. No masked
    pair gives 0.
    """
    field = np.asarray(field, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if field.shape[:2] != mask.shape:
        raise ValidationError("field and mask dimensions differ")
    total, count = 0.0, 0
    for a, b in _adjacent_pairs(field, mask):
        diff = a - b
        sq = diff * diff if diff.ndim == 1 else (diff * diff).sum(axis=-1)
        total += float(sq.sum() if squared else np.sqrt(sq).sum())
        count += sq.shape[0]
    return total / count if count else 0.0


def normal_smooth_loss(normals: np.ndarray, mask: np.ndarray) -> float:
    """Mean of ``1 - n_i·n_j`` over masked 4-neighbour pairs."""
    normals = np.asarray(normals, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if normals.shape[:2] != mask.shape:
        raise ValidationError("normal buffer and mask dimensions differ")
    total, count = 0.0, 0
    for a, b in _adjacent_pairs(normals, mask):
        total += float((1.0 - (a * b).sum(axis=-1)).sum())
        count += a.shape[0]
    return total / count if count else 0.0


# ---------------------------------------------------------------------------
# guidance slot
# ---------------------------------------------------------------------------


@dataclass
class GuidanceResult:
    """Loss plus per-instance gradient rows laid out as in :data:`scene.PARAM_DIM`."""

    loss: float
    grads: np.ndarray


@dataclass
class GuidanceContext:
    buffers: RenderBuffers
    prompt: str
    iteration: int
    scene: object
    render_fn: Callable | None = None


@runtime_checkable
class GuidanceTerm(Protocol):
    name: str

    def __call__(self, ctx: GuidanceContext) -> GuidanceResult: ...


@dataclass
class StubZeroGuidance:
    """Contributes nothing: zero loss, zero gradients."""

    name: str = "stub-zero"

    def __call__(self, ctx: GuidanceContext) -> GuidanceResult:
        return GuidanceResult(0.0, np.zeros((len(ctx.scene), PARAM_DIM)))


@dataclass
class ReferenceFeatureGuidance:
    """Reference-feature distance used as the guidance term.

    Gradients are central differences through ``ctx.render_fn`` (scene ->
    buffers), which the layout optimizer provides.
    """

    reference: FeatureVec
    weight: float = 1.0
    step: float = 1e-3
    extractor: FeatureExtractor = field(default_factory=SilhouetteDepthDescriptor)
    name: str = "reference-feature"

    def loss(self, buffers: RenderBuffers) -> float:
        return reference_loss(self.reference, self.extractor(buffers), self.weight)

    def __call__(self, ctx: GuidanceContext) -> GuidanceResult:
        from .optimizer import finite_difference_transform_grad

        value = self.loss(ctx.buffers)
        if ctx.render_fn is None:
            return GuidanceResult(value, np.zeros((len(ctx.scene), PARAM_DIM)))
        grads = np.stack(
            [
                finite_difference_transform_grad(lambda s: self.loss(ctx.render_fn(s)), ctx.scene, i, self.step)
                for i in range(len(ctx.scene))
            ]
        )
        return GuidanceResult(value, grads)


@dataclass
class ExternalGuidance:
    """Adapter for an outside score-distillation provider.

    ``fn(buffers, prompt, iteration, timestep)`` must return ``(loss, grads)``
    with ``grads`` shaped ``(n_instances, 7)``. The prompt is forwarded
    untouched; a timestep is drawn from ``schedule`` when one is set.
    """

    fn: Callable
    schedule: TimestepSchedule | None = None
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    name: str = "external"

    def __call__(self, ctx: GuidanceContext) -> GuidanceResult:
        t = None if self.schedule is None else sample_timestep(self.schedule, ctx.iteration, self.rng)
        loss, grads = self.fn(ctx.buffers, ctx.prompt, ctx.iteration, t)
        grads = np.asarray(grads, dtype=np.float64).reshape(len(ctx.scene), PARAM_DIM)
        return GuidanceResult(float(loss), grads)
