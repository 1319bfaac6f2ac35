"""Command-line interface.

Transforms stored in scene files act on each cloud *after* normalization
(centroid at the origin, farthest point at distance 1).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .collision import collision_loss_scene
from .errors import CompoLayoutError, NumericError, ValidationError
from .guidance import TimestepSchedule, masked_reference_feature, union_mask
from .io import (
    SceneFile,
    atomic_write,
    dump_buffers,
    load_config,
    load_ply,
    load_scene_file,
    read_depth,
    read_mask,
    save_scene_file,
)
from .layout_init import (
    DepthInput,
    build_pose_grid,
    estimate_rotation,
    initial_transforms,
    instance_reference_buffers,
    postprocessed_width,
)
from .guidance import SilhouetteDepthDescriptor
from .optimizer import InstanceRefineConfig, LayoutOptConfig, ReferenceTarget, refine_layout, refinement_plan
from .raster import CameraModel, RenderBuffers, render, scene_camera
from .scene import InstanceTransform, Pose, Scene, SceneInstance, compose_scene, normalize_cloud

log = logging.getLogger("compolayout")

SEED_ENV = "COMPOLAYOUT_SEED"

LAYOUT_KEYS = {
    "iterations": int,
    "lr_rotation": float,
    "lr_translation": lambda v: tuple(float(x) for x in v),
    "lr_scale": float,
    "feature_weight": float,
    "collision_weight": float,
    "fd_step": float,
    "method": str,
    "symmetric": bool,
    "frozen_anchor": bool,
    "max_points": int,
}


# ---------------------------------------------------------------------------
# pipeline pieces
# ---------------------------------------------------------------------------


def build_scene(sf: SceneFile, transforms=None) -> Scene:
    instances = []
    for i, (entry, iid) in enumerate(zip(sf.entries, sf.instance_ids())):
        cloud, _, _ = normalize_cloud(load_ply(sf.resolve(entry.cloud)))
        xf = transforms[i] if transforms is not None else (entry.transform or InstanceTransform())
        instances.append(SceneInstance(iid, cloud, xf, entry.label))
    return Scene(tuple(instances))


def _masks(sf: SceneFile) -> list[np.ndarray] | None:
    if not all(e.mask for e in sf.entries):
        return None
    return [read_mask(sf.resolve(e.mask)) for e in sf.entries]


def _depth(sf: SceneFile) -> np.ndarray | None:
    return read_depth(sf.resolve(sf.depth)) if sf.depth else None


def layout_config(overrides: dict, seed: int) -> LayoutOptConfig:
    kwargs = {"seed": seed}
    for key, value in overrides.items():
        if key not in LAYOUT_KEYS:
            raise ValidationError(f"unknown layout config key {key!r}")
        kwargs[key] = LAYOUT_KEYS[key](value)
    return LayoutOptConfig(**kwargs)


def run_init(sf: SceneFile, grid_step: float = 10.0, elevation_range=(-30.0, 60.0)) -> list[InstanceTransform]:
    """Scale and x/y from boxes; z and rotation when masks (and depth) exist."""
    layout = sf.layout()
    masks = _masks(sf)
    depth = _depth(sf)
    depth_input = DepthInput(depth, masks) if (masks is not None and depth is not None) else None
    rotations = None
    if masks is not None:
        grid = build_pose_grid(grid_step, elevation_range)
        extractor = SilhouetteDepthDescriptor()
        rotations = []
        scene = build_scene(sf)
        for inst, mask in zip(scene.instances, masks):
            ref = extractor(instance_reference_buffers(mask, depth))
            pose, sim = estimate_rotation(inst.cloud, ref, grid, extractor, recenter=True)
            log.info("%s: best pose e=%g a=%g (cos %.4f)", inst.id, pose.elevation, pose.azimuth, sim)
            rotations.append(pose.object_quaternion())
    return initial_transforms(layout, postprocessed_width(layout.canvas[0]), depth_input, rotations)


def reference_target(sf: SceneFile, camera: CameraModel) -> ReferenceTarget | None:
    masks = _masks(sf)
    if masks is None:
        return None
    union = union_mask(masks)
    depth = _depth(sf)
    d = np.where(union, depth if depth is not None else 1.0, np.inf)
    buffers = RenderBuffers.from_depth(d, union, camera.focal)
    return ReferenceTarget(masked_reference_feature(buffers, union), camera)


def _with_transforms(sf: SceneFile, transforms) -> SceneFile:
    for entry, xf in zip(sf.entries, transforms):
        entry.transform = xf
    return sf


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_init(args, cfg: dict) -> int:
    sf = load_scene_file(args.scene, args.bbox_mode)
    init_cfg = cfg.get("init", {})
    transforms = run_init(sf, float(init_cfg.get("grid_step", 10.0)), tuple(init_cfg.get("elevation_range", (-30.0, 60.0))))
    save_scene_file(_with_transforms(sf, transforms), args.output)
    return 0


def cmd_optimize(args, cfg: dict) -> int:
    sf = load_scene_file(args.scene, args.bbox_mode)
    overrides = {**sf.config.get("layout", {}), **cfg.get("layout", {})}
    if args.iterations is not None:
        overrides["iterations"] = args.iterations
    opt_cfg = layout_config(overrides, args.seed)
    camera = scene_camera(resolution=int(cfg.get("render", {}).get("resolution", 256)))
    reference = reference_target(sf, camera) if opt_cfg.feature_weight > 0 else None
    if reference is None and opt_cfg.feature_weight > 0:
        log.warning("no instance masks in scene file; feature loss disabled")
    scene = build_scene(sf)
    scene, trace = refine_layout(scene, reference, opt_cfg)
    save_scene_file(_with_transforms(sf, scene.transforms()), args.output)
    if args.trace:
        atomic_write(args.trace, trace.to_csv())
    return 0


def _parse_pose(text: str) -> Pose:
    try:
        e, a, r = (float(x) for x in text.split(","))
    except ValueError:
        raise ValidationError(f"--pose expects e,a,r, got {text!r}") from None
    return Pose(e, a, r)


def cmd_render(args, cfg: dict) -> int:
    sf = load_scene_file(args.scene, args.bbox_mode)
    camera = CameraModel(_parse_pose(args.pose), args.fov, args.resolution, args.resolution)
    buffers = render(compose_scene(build_scene(sf)), camera)
    for p in dump_buffers(buffers, args.output):
        print(p)
    return 0


def cmd_collide(args, cfg: dict) -> int:
    sf = load_scene_file(args.scene, args.bbox_mode)
    weight = float(cfg.get("layout", {}).get("collision_weight", sf.config.get("layout", {}).get("collision_weight", 0.2)))
    report = collision_loss_scene(build_scene(sf), weight)
    print(report.to_json(indent=2))
    return 0


def cmd_plan(args, cfg: dict) -> int:
    rc = InstanceRefineConfig.profile_named(args.profile)
    if "schedule" in cfg:
        rc.schedule = TimestepSchedule.from_list(cfg["schedule"])
        rc.__post_init__()
    lines = ["iteration,t_min,t_max,densify,resolution,position_lr"]
    for e in refinement_plan(rc):
        lines.append(f"{e.iteration},{e.t_min!r},{e.t_max!r},{int(e.densify)},{e.resolution},{e.position_lr!r}")
    text = "\n".join(lines) + "\n"
    if args.output:
        atomic_write(args.output, text)
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _seed(value: str | None) -> int:
    raw = value if value is not None else os.environ.get(SEED_ENV, "0")
    try:
        seed = int(raw)
    except ValueError:
        raise ValidationError(f"seed must be an unsigned integer, got {raw!r}") from None
    if not (0 <= seed < 2**64):
        raise ValidationError(f"seed {seed} outside u64 range")
    return seed


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="compolayout", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", default=None, help=f"u64 seed (default ${SEED_ENV} or 0)")
    parser.add_argument("--config", default=None, help="TOML or JSON config file")
    parser.add_argument("--bbox-mode", choices=("strict", "lenient"), default="strict")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="lift the 2D layout to initial transforms")
    p.add_argument("scene")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("optimize", help="collision-aware layout refinement")
    p.add_argument("scene")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--trace", default=None, help="CSV trace path")
    p.add_argument("--iterations", type=int, default=None)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("render", help="write silhouette/depth/normal dumps")
    p.add_argument("scene")
    p.add_argument("--pose", required=True, help="elevation,azimuth,radius")
    p.add_argument("-o", "--output", required=True, help="output prefix")
    p.add_argument("--fov", type=float, default=45.0)
    p.add_argument("--resolution", type=int, default=256)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("collide", help="print the collision report as JSON")
    p.add_argument("scene")
    p.set_defaults(func=cmd_collide)

    p = sub.add_parser("plan", help="dump the instance-refinement plan as CSV")
    p.add_argument("--profile", choices=("short", "extended"), default="short")
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=cmd_plan)
    return parser


def _fail(exc: Exception, code: str, status: int) -> int:
    sys.stderr.write(json.dumps({"error": code, "message": str(exc)}) + "\n")
    return status


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        args.seed = _seed(args.seed)
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except NumericError as exc:
        return _fail(exc, exc.code, 2)
    except CompoLayoutError as exc:
        return _fail(exc, exc.code, 1)
    except (OSError, ValueError) as exc:
        return _fail(exc, "invalid-input", 1)
    except ArithmeticError as exc:
        return _fail(exc, "numeric", 2)


if __name__ == "__main__":
    sys.exit(main())
