"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``.

Outputs match the compiled path exactly for ``splat``; ``collision_terms``
agrees to rounding (summation order differs).
"""

from __future__ import annotations

import numpy as np


def splat(u, v, depth, rad, width: int, height: int):
    """Z-buffer hard-edged screen discs.

    Returns ``(zbuf, idx)``: the nearest depth per pixel (``inf`` where
    empty) and the index of the winning point (``-1`` where empty). Equal
    depths resolve to the lower index.
    """
    zbuf = np.full((height, width), np.inf)
    idx = np.full((height, width), -1, dtype=np.int64)
    n = len(u)
    if n == 0:
        return zbuf, idx
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    rad = np.asarray(rad, dtype=np.float64)

    cx = np.floor(u).astype(np.int64)
    cy = np.floor(v).astype(np.int64)
    x0 = np.maximum(np.floor(u - rad).astype(np.int64), 0)
    x1 = np.minimum(np.floor(u + rad).astype(np.int64), width - 1)
    y0 = np.maximum(np.floor(v - rad).astype(np.int64), 0)
    y1 = np.minimum(np.floor(v + rad).astype(np.int64), height - 1)
    nx = np.maximum(x1 - x0 + 1, 0)
    ny = np.maximum(y1 - y0 + 1, 0)
    counts = nx * ny
    total = int(counts.sum())
    if total == 0:
        return zbuf, idx

    # one fragment per (point, pixel in its clipped bounding square)
    owner = np.repeat(np.arange(n), counts)
    start = np.repeat(np.cumsum(counts) - counts, counts)
    local = np.arange(total) - start
    w = nx[owner]
    px = x0[owner] + local % w
    py = y0[owner] + local // w
    dx = (px + 0.5) - u[owner]
    dy = (py + 0.5) - v[owner]
    r = rad[owner]
    keep = (dx * dx + dy * dy <= r * r) | ((px == cx[owner]) & (py == cy[owner]))
    owner, px, py = owner[keep], px[keep], py[keep]
    if owner.size == 0:
        return zbuf, idx

    flat = py * width + px
    order = np.lexsort((owner, depth[owner], flat))
    flat_sorted = flat[order]
    first = np.ones(order.size, dtype=bool)
    first[1:] = flat_sorted[1:] != flat_sorted[:-1]
    win = order[first]
    zbuf.ravel()[flat[win]] = depth[owner[win]]
    idx.ravel()[flat[win]] = owner[win]
    return zbuf, idx


def collision_terms(center, radius: float, pts, origin):
    """Accumulators for one anchor/intruder pair.

    Returns ``(relu_sum, active, U, torque, lever)`` where, over intruder
    points with ``radius - |p - center| > 0`` and unit direction
    ``u = (p - center)/|p - center|``: ``U = Σu``,
    ``torque = Σ (p - origin) × u`` and ``lever = Σ u·(p - origin)``.
    """
    pts = np.asarray(pts, dtype=np.float64)
    diff = pts - center
    d = np.sqrt((diff * diff).sum(axis=1))
    gap = radius - d
    act = gap > 0.0
    relu_sum = float(gap[act].sum())
    nz = act & (d > 0.0)
    u = diff[nz] / d[nz, None]
    r = pts[nz] - origin
    return (
        relu_sum,
        int(act.sum()),
        u.sum(axis=0) if u.size else np.zeros(3),
        np.cross(r, u).sum(axis=0) if u.size else np.zeros(3),
        float((u * r).sum()),
    )


def _axis_derivative(depth, fg, axis: int):
    """Central difference where both neighbours are foreground, one-sided otherwise."""
    d = np.where(fg, depth, 0.0)
    prev_ok = np.zeros_like(fg)
    next_ok = np.zeros_like(fg)
    prev_d = np.zeros_like(d)
    next_d = np.zeros_like(d)
    if axis == 1:
        prev_ok[:, 1:] = fg[:, :-1]
        next_ok[:, :-1] = fg[:, 1:]
        prev_d[:, 1:] = d[:, :-1]
        next_d[:, :-1] = d[:, 1:]
    else:
        prev_ok[1:, :] = fg[:-1, :]
        next_ok[:-1, :] = fg[1:, :]
        prev_d[1:, :] = d[:-1, :]
        next_d[:-1, :] = d[1:, :]
    grad = np.zeros_like(d)
    both = prev_ok & next_ok
    grad[both] = 0.5 * (next_d[both] - prev_d[both])
    only_next = next_ok & ~prev_ok
    grad[only_next] = next_d[only_next] - d[only_next]
    only_prev = prev_ok & ~next_ok
    grad[only_prev] = d[only_prev] - prev_d[only_prev]
    return grad, prev_ok | next_ok


def depth_normals(depth, fg, k: float):
    """Unit normals ``(k*du, -k*dv, 1)/|.|`` on foreground; isolated pixels get ``(0, 0, 1)``."""
    fg = np.asarray(fg, dtype=bool)
    gu, has_u = _axis_derivative(depth, fg, axis=1)
    gv, has_v = _axis_derivative(depth, fg, axis=0)
    nx, ny = k * gu, -k * gv
    norm = np.sqrt(nx * nx + ny * ny + 1.0)
    n = np.stack([nx / norm, ny / norm, 1.0 / norm], axis=-1)
    n[~(has_u | has_v)] = (0.0, 0.0, 1.0)
    n[~fg] = 0.0
    return n
