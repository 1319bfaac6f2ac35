"""Seeded synthetic clouds for tests, benchmarks and demos."""

from __future__ import annotations

import numpy as np

from .scene import GaussianCloud, InstanceTransform, Scene, SceneInstance, normalize_cloud


def solid_ball(rng: np.random.Generator, n: int, radius: float = 1.0) -> np.ndarray:
    """Uniform samples inside a ball; mean distance to the centre is ``0.75 * radius``."""
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d * (radius * rng.uniform(size=n) ** (1.0 / 3.0))[:, None]


def asymmetric_cloud(rng: np.random.Generator, n: int = 1500, splat_radius: float = 0.04) -> GaussianCloud:
    """Normalized union of 3-4 ellipsoidal blobs of different sizes.

    Blob offsets and axes are random, so the shape has no rotational
    symmetry in practice.
    """
    n_blobs = int(rng.integers(3, 5))
    weights = rng.dirichlet(np.full(n_blobs, 2.0))
    counts = np.maximum((weights * n).astype(int), 50)
    parts = []
    for k, cnt in enumerate(counts):
        axes = rng.uniform(0.15, 0.6, size=3)
        center = rng.uniform(-0.7, 0.7, size=3) if k else np.zeros(3)
        parts.append(solid_ball(rng, int(cnt)) * axes + center)
    cloud = GaussianCloud.from_points(np.concatenate(parts), radius=splat_radius)
    normalized, _, _ = normalize_cloud(cloud)
    return normalized.with_points(normalized.points, np.full(len(normalized), splat_radius))


def two_sphere_scene(rng: np.random.Generator, n: int = 500, distance: float = 0.5, axis: int = 2) -> Scene:
    """Two unit solid balls whose centres are ``distance`` apart along ``axis``."""
    offset = np.zeros(3)
    offset[axis] = 0.5 * distance
    return Scene(
        (
            SceneInstance("a", GaussianCloud.from_points(solid_ball(rng, n)), InstanceTransform(translation=offset)),
            SceneInstance("b", GaussianCloud.from_points(solid_ball(rng, n)), InstanceTransform(translation=-offset)),
        )
    )


def random_scene(
    rng: np.random.Generator,
    n_instances: int,
    max_points: int = 200,
    spread: float = 0.8,
) -> Scene:
    """Random clouds with random scale, rotation and translation, mostly overlapping."""
    instances = []
    for i in range(n_instances):
        k = int(rng.integers(5, max_points + 1))
        pts = rng.normal(size=(k, 3)) * rng.uniform(0.3, 1.0, size=3)
        q = rng.normal(size=4)
        xf = InstanceTransform(float(rng.uniform(0.5, 1.5)), q / np.linalg.norm(q), rng.uniform(-spread, spread, size=3))
        instances.append(SceneInstance(f"i{i}", GaussianCloud.from_points(pts), xf))
    return Scene(tuple(instances))
