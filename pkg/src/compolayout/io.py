"""File formats: layout/scene JSON, PLY clouds, PGM/PNG buffer dumps, config.

Byte layouts
------------
Silhouette / mask PGM
    Binary ``P5``, maxval 255; foreground 255, background 0. Any non-zero
    sample reads back as foreground.
Depth PGM
    Binary ``P5``, maxval 65535, big-endian 16-bit. Background is 0;
    foreground ``d`` is stored as ``1 + round((d - min) / (max - min) * 65534)``.
    ``min``/``max`` live in a sidecar ``<file>.json``. A PGM without sidecar
    reads back as ``sample / maxval``.
Normal PNG
    8-bit RGB, ``round((n + 1) / 2 * 255)`` per channel on foreground,
    ``(0, 0, 0)`` on background.
Depth NPY
    Any 2D float array saved with ``numpy.save``.
"""

from __future__ import annotations

import json
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import EmptyCloudError, FormatError, ParseError, ValidationError
from .raster import RenderBuffers
from .scene import BBox2D, GaussianCloud, InstanceTransform, LayoutEntry, LayoutSpec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DEFAULT_RADIUS = 0.01
DEFAULT_OPACITY = 1.0
DEFAULT_COLOR = (0.5, 0.5, 0.5)
DEFAULT_CANVAS = (512, 512)


def atomic_write(path: str | os.PathLike, data: str | bytes) -> None:
    """Write via a temporary file in the target directory, then rename."""
    path = Path(path)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_json(path: str | os.PathLike) -> Any:
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", exc.lineno) from exc


# ---------------------------------------------------------------------------
# layouts
# ---------------------------------------------------------------------------


def parse_bbox(row, canvas: tuple[int, int], mode: str = "strict", where: str = "") -> tuple[BBox2D, str]:
    """Validate one ``[x1, y1, x2, y2]`` row.

    In lenient mode a row that fails as corners is reread as
    ``[x, y, w, h]``, clipped to the canvas and widened to at least one
    pixel per side. Returns the box and the convention used.
    """
    if mode not in ("strict", "lenient"):
        raise ValidationError(f"unknown bbox mode {mode!r}")
    try:
        vals = [float(v) for v in row]
    except (TypeError, ValueError):
        raise ValidationError(f"{where}bbox {row!r} is not numeric") from None
    if len(vals) != 4:
        raise ValidationError(f"{where}bbox {row!r} needs 4 values")
    box = BBox2D(*vals)
    if box.is_ordered() and box.within(canvas):
        return box, "xyxy"
    if mode == "strict":
        raise ValidationError(f"{where}bbox {row!r} violates x1<x2, y1<y2 within {canvas[0]}x{canvas[1]}")
    w, h = canvas
    x, y, bw, bh = vals
    x1, y1 = min(max(x, 0.0), w - 1.0), min(max(y, 0.0), h - 1.0)
    x2, y2 = min(max(x + bw, x1 + 1.0), float(w)), min(max(y + bh, y1 + 1.0), float(h))
    box = BBox2D(x1, y1, x2, y2)
    if not (box.is_ordered() and box.within(canvas)):
        raise ValidationError(f"{where}bbox {row!r} cannot be recovered as [x, y, w, h]")
    return box, "xywh"


def layout_from_dict(doc: dict, mode: str = "strict") -> LayoutSpec:
    canvas = tuple(int(v) for v in doc.get("canvas", DEFAULT_CANVAS))
    entries = doc.get("entries")
    if not isinstance(entries, list) or not entries:
        raise ValidationError("layout has no entries")
    out = []
    for i, e in enumerate(entries):
        label = str(e.get("label", f"instance-{i}"))
        box, used = parse_bbox(e.get("bbox"), canvas, mode, where=f"entry {i} ({label!r}): ")
        out.append(LayoutEntry(box, label, used))
    return LayoutSpec(canvas, tuple(out), str(doc.get("prompt", "")))


def load_layout_spec(path: str | os.PathLike, mode: str = "strict") -> LayoutSpec:
    return layout_from_dict(_read_json(path), mode)


# ---------------------------------------------------------------------------
# scene files
# ---------------------------------------------------------------------------


@dataclass
class SceneEntry:
    bbox: list[float]
    label: str
    cloud: str
    transform: InstanceTransform | None = None
    mask: str | None = None
    id: str | None = None


@dataclass
class SceneFile:
    canvas: tuple[int, int]
    prompt: str
    entries: list[SceneEntry]
    depth: str | None = None
    config: dict = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path)

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.base_dir / p

    def layout(self, mode: str = "strict") -> LayoutSpec:
        return layout_from_dict(
            {"canvas": self.canvas, "prompt": self.prompt, "entries": [{"bbox": e.bbox, "label": e.label} for e in self.entries]},
            mode,
        )

    def instance_ids(self) -> list[str]:
        return [e.id or f"{i}:{e.label}" for i, e in enumerate(self.entries)]

    def to_dict(self) -> dict:
        doc: dict[str, Any] = {"canvas": list(self.canvas), "prompt": self.prompt, "entries": []}
        for e in self.entries:
            row: dict[str, Any] = {"bbox": list(e.bbox), "label": e.label, "cloud": e.cloud}
            if e.id is not None:
                row["id"] = e.id
            if e.mask is not None:
                row["mask"] = e.mask
            if e.transform is not None:
                row["transform"] = e.transform.to_dict()
            doc["entries"].append(row)
        if self.depth is not None:
            doc["depth"] = self.depth
        if self.config:
            doc["config"] = self.config
        return doc

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def load_scene_file(path: str | os.PathLike, mode: str = "strict", check_files: bool = True) -> SceneFile:
    path = Path(path)
    doc = _read_json(path)
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: top level must be an object")
    layout = layout_from_dict(doc, mode)
    entries = []
    for i, (e, parsed) in enumerate(zip(doc["entries"], layout.entries)):
        if "cloud" not in e:
            raise ValidationError(f"entry {i} ({parsed.label!r}) has no cloud path")
        xf = InstanceTransform.from_dict(e["transform"]) if e.get("transform") is not None else None
        entries.append(
            SceneEntry(parsed.bbox.as_list(), parsed.label, str(e["cloud"]), xf, e.get("mask"), e.get("id"))
        )
    sf = SceneFile(layout.canvas, layout.prompt, entries, doc.get("depth"), dict(doc.get("config", {})), path.parent)
    if check_files:
        refs = [e.cloud for e in entries] + [e.mask for e in entries if e.mask] + ([sf.depth] if sf.depth else [])
        for rel in refs:
            if not sf.resolve(rel).exists():
                raise ValidationError(f"referenced file does not exist: {rel}")
    return sf


def save_scene_file(sf: SceneFile, path: str | os.PathLike) -> None:
    atomic_write(path, sf.dumps())


# ---------------------------------------------------------------------------
# PLY
# ---------------------------------------------------------------------------


def load_ply(path: str | os.PathLike) -> GaussianCloud:
    from plyfile import PlyData

    try:
        ply = PlyData.read(str(path))
        vertex = ply["vertex"]
        data = vertex.data
    except KeyError:
        raise FormatError(f"{path}: no vertex element") from None
    except Exception as exc:  # plyfile raises a mix of parse, struct and value errors
        raise FormatError(f"{path}: {exc}") from exc
    names = data.dtype.names or ()
    if not all(c in names for c in ("x", "y", "z")):
        raise FormatError(f"{path}: vertex element lacks x/y/z")
    k = len(data)
    if k == 0:
        raise EmptyCloudError(f"{path}: zero vertices")
    pts = np.stack([np.asarray(data[c], dtype=np.float64) for c in ("x", "y", "z")], axis=1)

    def col(name, default):
        return np.asarray(data[name], dtype=np.float64) if name in names else np.full(k, default)

    colors = []
    for name, default in zip(("red", "green", "blue"), DEFAULT_COLOR):
        if name in names:
            c = np.asarray(data[name])
            colors.append(c / 255.0 if c.dtype == np.uint8 else c.astype(np.float64))
        else:
            colors.append(np.full(k, default))
    try:
        return GaussianCloud(pts, col("radius", DEFAULT_RADIUS), col("opacity", DEFAULT_OPACITY), np.stack(colors, axis=1))
    except ValidationError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def save_ply(cloud: GaussianCloud, path: str | os.PathLike, binary: bool = True) -> None:
    """Positions and attributes are written as doubles."""
    from plyfile import PlyData, PlyElement

    dtype = [(n, "f8") for n in ("x", "y", "z", "radius", "opacity", "red", "green", "blue")]
    arr = np.empty(len(cloud), dtype=dtype)
    arr["x"], arr["y"], arr["z"] = cloud.points.T
    arr["radius"] = cloud.radii
    arr["opacity"] = cloud.opacities
    arr["red"], arr["green"], arr["blue"] = cloud.colors.T
    ply = PlyData([PlyElement.describe(arr, "vertex")], text=not binary, byte_order="<")
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        ply.write(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# PGM / PNG
# ---------------------------------------------------------------------------


def encode_pgm(img: np.ndarray, maxval: int) -> bytes:
    img = np.asarray(img)
    h, w = img.shape
    header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
    body = img.astype(">u2" if maxval > 255 else "u1").tobytes()
    return header + body


def decode_pgm(data: bytes) -> tuple[np.ndarray, int]:
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(data[start:pos])
    magic = tokens[0]
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError("malformed PGM header") from None
    if magic == b"P5":
        pos += 1
        dtype = ">u2" if maxval > 255 else "u1"
        need = w * h * np.dtype(dtype).itemsize
        if len(data) - pos < need:
            raise FormatError("truncated PGM body")
        img = np.frombuffer(data[pos : pos + need], dtype=dtype).reshape(h, w)
    elif magic == b"P2":
        vals = data[pos:].split()
        if len(vals) < w * h:
            raise FormatError("truncated PGM body")
        img = np.array([int(v) for v in vals[: w * h]]).reshape(h, w)
    else:
        raise FormatError(f"not a PGM file (magic {magic!r})")
    return img.astype(np.int64), maxval


def write_mask_pgm(mask: np.ndarray, path: str | os.PathLike) -> None:
    atomic_write(path, encode_pgm(np.where(np.asarray(mask, dtype=bool), 255, 0), 255))


def read_mask(path: str | os.PathLike) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".npy":
        return np.load(path).astype(bool)
    img, _ = decode_pgm(path.read_bytes())
    return img > 0


def write_depth_pgm(depth: np.ndarray, path: str | os.PathLike, mask: np.ndarray | None = None) -> None:
    depth = np.asarray(depth, dtype=np.float64)
    fg = np.isfinite(depth) if mask is None else (np.asarray(mask, dtype=bool) & np.isfinite(depth))
    lo = float(depth[fg].min()) if fg.any() else 0.0
    hi = float(depth[fg].max()) if fg.any() else 0.0
    q = np.zeros(depth.shape, dtype=np.int64)
    if fg.any():
        span = hi - lo
        q[fg] = 1 + (np.rint((depth[fg] - lo) / span * 65534) if span > 0 else 0)
    atomic_write(path, encode_pgm(q, 65535))
    atomic_write(str(path) + ".json", json.dumps({"min": lo, "max": hi, "background": 0}, indent=2) + "\n")


def read_depth(path: str | os.PathLike) -> np.ndarray:
    """Depth as float array; background samples of a sidecar-backed PGM become ``inf``."""
    path = Path(path)
    if path.suffix == ".npy":
        arr = np.load(path)
        if arr.ndim != 2:
            raise FormatError(f"{path}: depth array must be 2D")
        return arr.astype(np.float64)
    img, maxval = decode_pgm(path.read_bytes())
    side = Path(str(path) + ".json")
    if not side.exists():
        return img / float(maxval)
    meta = json.loads(side.read_text())
    lo, hi = float(meta["min"]), float(meta["max"])
    out = np.full(img.shape, np.inf)
    fg = img > 0
    out[fg] = lo + (img[fg] - 1) / 65534.0 * (hi - lo)
    return out


def write_normal_png(normal: np.ndarray, silhouette: np.ndarray, path: str | os.PathLike) -> None:
    from PIL import Image

    rgb = np.zeros(normal.shape, dtype=np.uint8)
    fg = np.asarray(silhouette, dtype=bool)
    rgb[fg] = np.rint((normal[fg] + 1.0) * 0.5 * 255).clip(0, 255).astype(np.uint8)
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".png")
    os.close(fd)
    Image.fromarray(rgb, "RGB").save(tmp, format="PNG")
    os.replace(tmp, path)


def read_normal_png(path: str | os.PathLike) -> tuple[np.ndarray, np.ndarray]:
    from PIL import Image

    rgb = np.asarray(Image.open(path).convert("RGB")).astype(np.float64)
    fg = rgb.any(axis=-1)
    n = np.where(fg[..., None], rgb / 255.0 * 2.0 - 1.0, 0.0)
    return n, fg


def dump_buffers(buffers: RenderBuffers, prefix: str) -> list[str]:
    paths = [f"{prefix}_silhouette.pgm", f"{prefix}_depth.pgm", f"{prefix}_normal.png"]
    write_mask_pgm(buffers.silhouette, paths[0])
    write_depth_pgm(buffers.depth, paths[1], buffers.silhouette)
    write_normal_png(buffers.normal, buffers.silhouette, paths[2])
    return paths


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------


def load_config(path: str | os.PathLike | None) -> dict:
    if path is None:
        return {}
    path = Path(path)
    if path.suffix == ".toml":
        try:
            return tomllib.loads(path.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from exc
    doc = _read_json(path)
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: config must be an object")
    return doc
