"""Tolerant collision penalty between instances and its analytic gradient.

For an anchor instance ``a`` with centroid ``c`` and mean sparsity ``R``
(mean distance of its points to ``c``), every point ``p`` of another
instance costs ``weight * relu(R - |p - c|)``. Points shallower than the
anchor's mean radius are tolerated.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import NumericError
from .scene import PARAM_DIM, ROT, SCALE, TRANS, Scene, transform_points

DEFAULT_WEIGHT = 0.2
MAX_POINTS = 4096


def mean_sparsity(points) -> float:
    pts = np.asarray(points, dtype=np.float64)
    center = pts.mean(axis=0)
    return float(np.sqrt(((pts - center) ** 2).sum(axis=1)).mean())


def collision_loss_pair(anchor, intruder, weight: float = DEFAULT_WEIGHT) -> float:
    """Penalty of ``intruder`` points inside the anchor's mean-sparsity ball.

    Not symmetric: the anchor supplies the centroid and radius.
    """
    anchor = np.asarray(anchor, dtype=np.float64)
    intruder = np.asarray(intruder, dtype=np.float64)
    center = anchor.mean(axis=0)
    radius = mean_sparsity(anchor)
    gap = radius - np.sqrt(((intruder - center) ** 2).sum(axis=1))
    return weight * float(np.maximum(gap, 0.0).sum())


@dataclass
class CollisionReport:
    pairs: dict[tuple[int, int], float]
    total: float
    grads: np.ndarray  # (n_instances, PARAM_DIM)
    ids: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "pairs": [
                {"anchor": self.ids[i] if self.ids else i, "intruder": self.ids[j] if self.ids else j, "loss": v}
                for (i, j), v in sorted(self.pairs.items())
            ],
            "gradients": {
                (self.ids[i] if self.ids else str(i)): {
                    "rotation": [float(x) for x in g[ROT]],
                    "translation": [float(x) for x in g[TRANS]],
                    "scale": float(g[SCALE]),
                }
                for i, g in enumerate(self.grads)
            },
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _subsample(points: np.ndarray, max_points: int | None, rng: np.random.Generator | None) -> np.ndarray:
    if max_points is None or len(points) <= max_points:
        return points
    rng = rng if rng is not None else np.random.default_rng(0)
    keep = np.sort(rng.choice(len(points), size=max_points, replace=False))
    return points[keep]


def collision_loss_scene(
    scene: Scene,
    weight: float = DEFAULT_WEIGHT,
    symmetric: bool = True,
    frozen_anchor: bool = False,
    max_points: int | None = None,
    rng: np.random.Generator | None = None,
) -> CollisionReport:
    """Sum the pair penalty over ordered instance pairs, with gradients.

    ``symmetric`` includes both ``(i, j)`` and ``(j, i)``; otherwise only
    ``i < j`` with ``i`` as anchor. Gradients are per instance in the
    ``PARAM_DIM`` layout; with ``frozen_anchor`` the anchor's centroid and
    radius are treated as constants. ``max_points`` enables seeded uniform
    subsampling of each instance.
    """
    n = len(scene)
    xfs = scene.transforms()
    pts = [
        np.ascontiguousarray(_subsample(transform_points(inst.cloud.points, inst.transform), max_points, rng))
        for inst in scene.instances
    ]
    centers = [p.mean(axis=0) for p in pts]
    radii = [mean_sparsity(p) for p in pts]

    grads = np.zeros((n, PARAM_DIM))
    pairs: dict[tuple[int, int], float] = {}
    order = [(i, j) for i in range(n) for j in range(n) if i != j and (symmetric or i < j)]
    for a, b in order:
        relu_sum, active, u_sum, torque, lever = kernels.collision_terms(
            centers[a], radii[a], pts[b], np.ascontiguousarray(xfs[b].translation)
        )
        pairs[(a, b)] = weight * relu_sum
        if active == 0:
            continue
        g = np.zeros((2, PARAM_DIM))
        g[1, TRANS] = -weight * u_sum
        g[1, ROT] = -weight * torque
        g[1, SCALE] = -weight * lever / xfs[b].scale
        if not frozen_anchor:
            arm = centers[a] - xfs[a].translation
            g[0, TRANS] = weight * u_sum
            g[0, ROT] = np.cross(arm, weight * u_sum)
            g[0, SCALE] = weight * (float(u_sum @ arm) + active * radii[a]) / xfs[a].scale
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite collision gradient for pair ({scene.instances[a].id}, {scene.instances[b].id})")
        grads[a] += g[0]
        grads[b] += g[1]

    total = math.fsum(pairs[k] for k in order)
    return CollisionReport(pairs, total, grads, [i.id for i in scene.instances])


def collision_grad(scene: Scene, weight: float = DEFAULT_WEIGHT, **kw) -> np.ndarray:
    return collision_loss_scene(scene, weight, **kw).grads
