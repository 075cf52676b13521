"""PNG rasters and frame manifests.

Depth: 16-bit single channel, raw units.  Color: 8-bit RGB.  Labels and
instances: 16-bit single channel where 0 is unlabeled and ``v > 0`` is
raw id ``v`` (ids written by this package are ``class + 1``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from PIL.PngImagePlugin import PngInfo

from .errors import InputError

_COLOR_DIRS = ("color", "rgb", "image")


def _open(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.array(im)
    except (OSError, ValueError) as e:
        raise InputError(f"cannot read {path}: {e}") from None


def read_depth(path) -> np.ndarray:
    a = _open(path)
    if a.ndim != 2:
        raise InputError(f"{path}: depth must be single-channel")
    if a.dtype.kind == "f" or (a.size and a.min() < 0):
        raise InputError(f"{path}: depth must hold unsigned raw units")
    return a.astype(np.uint16)


def read_color(path) -> np.ndarray:
    a = _open(path)
    if a.ndim == 2:
        a = np.repeat(a[..., None], 3, axis=2)
    if a.dtype != np.uint8:
        raise InputError(f"{path}: color must be 8-bit")
    return a[..., :3]


def read_raw_labels(path) -> np.ndarray:
    a = _open(path)
    if a.ndim != 2:
        raise InputError(f"{path}: label image must be single-channel")
    return a.astype(np.int64)


def _pnginfo(meta) -> PngInfo | None:
    if not meta:
        return None
    info = PngInfo()
    info.add_text("hiersem", json.dumps(meta, sort_keys=True))
    return info


def write_png(path, array: np.ndarray, meta: dict | None = None) -> None:
    a = np.asarray(array)
    if a.ndim == 2 and a.dtype != np.uint8:
        im = Image.fromarray(a.astype(np.uint16))
    else:
        im = Image.fromarray(a.astype(np.uint8))
    im.save(path, pnginfo=_pnginfo(meta))


def write_ids(path, ids: np.ndarray, meta: dict | None = None) -> None:
    """Store class or instance ids as ``id + 1`` (0 for -1)."""
    ids = np.asarray(ids)
    if ids.size and ids.max() >= 65535:
        raise ValueError("too many ids for a 16-bit raster")
    write_png(path, (ids + 1).astype(np.uint16), meta)


def read_ids(path) -> np.ndarray:
    return read_raw_labels(path) - 1


def png_metadata(path) -> dict:
    with Image.open(path) as im:
        txt = im.text.get("hiersem") if hasattr(im, "text") else None
    return json.loads(txt) if txt else {}


@dataclass
class FrameEntry:
    name: str
    depth: Path
    color: Path
    label: Path | None = None


def read_manifest(path) -> list[FrameEntry]:
    """Frames from a tab-separated ``depth<TAB>color[<TAB>label]`` file or a directory.

    Relative paths resolve against the manifest's directory.  A directory
    must hold ``depth/`` and ``color/`` (or ``rgb/``) with matching file
    names, and optionally ``label/``.
    """
    path = Path(path)
    if path.is_dir():
        return _scan_dir(path)
    if not path.exists():
        raise InputError(f"manifest {path} does not exist")
    base = path.parent
    out = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) not in (2, 3):
            raise InputError(f"{path}:{lineno}: expected 2 or 3 tab-separated paths")
        depth, color = base / parts[0], base / parts[1]
        label = base / parts[2] if len(parts) == 3 and parts[2] else None
        out.append(FrameEntry(Path(parts[0]).stem, depth, color, label))
    return out


def _scan_dir(root: Path) -> list[FrameEntry]:
    depth_dir = root / "depth"
    color_dir = next((root / d for d in _COLOR_DIRS if (root / d).is_dir()), None)
    if not depth_dir.is_dir() or color_dir is None:
        raise InputError(f"{root}: expected depth/ and color/ subdirectories")
    label_dir = root / "label"
    out = []
    for d in sorted(depth_dir.glob("*.png")):
        c = color_dir / d.name
        if not c.exists():
            continue
        lab = label_dir / d.name
        out.append(FrameEntry(d.stem, d, c, lab if lab.exists() else None))
    return out


def write_manifest(path, entries) -> None:
    path = Path(path)
    base = path.parent
    lines = []
    for e in entries:
        cols = [str(Path(e.depth).relative_to(base)), str(Path(e.color).relative_to(base))]
        if e.label is not None:
            cols.append(str(Path(e.label).relative_to(base)))
        lines.append("\t".join(cols))
    path.write_text("\n".join(lines) + "\n")
