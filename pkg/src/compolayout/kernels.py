"""Kernel backend selection.

The compiled extension is used when it imports; setting
``COMPOLAYOUT_PURE_PYTHON=1`` forces the numpy fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
splat = _kernels_py.splat
collision_terms = _kernels_py.collision_terms
depth_normals = _kernels_py.depth_normals

if os.environ.get("COMPOLAYOUT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        BACKEND = "cython"
        splat = _compiled.splat
        collision_terms = _compiled.collision_terms
        depth_normals = _compiled.depth_normals


def use_backend(name: str) -> None:
    """Switch kernels at runtime (tests and benchmarks)."""
    global BACKEND, splat, collision_terms, depth_normals
    if name == "python":
        BACKEND, splat, collision_terms = "python", _kernels_py.splat, _kernels_py.collision_terms
        depth_normals = _kernels_py.depth_normals
    elif name == "cython":
        from . import _kernels as _compiled

        BACKEND, splat, collision_terms = "cython", _compiled.splat, _compiled.collision_terms
        depth_normals = _compiled.depth_normals
    else:
        raise ValueError(f"unknown backend {name!r}")
