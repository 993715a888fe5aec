"""On-disk naming and lossless image I/O for dataset directories.

Every artifact is ``<frame_id>_<kind>.png`` (``.txt`` for landmark lists),
frame ids zero-padded to six digits. Color images are RGB in memory.
"""

from __future__ import annotations

import re
from pathlib import Path

import cv2
import numpy as np

_NAME = re.compile(r"^(\d+)_([a-z0-9_]+)\.(png|txt|ply)$")


def path_for(directory, frame_id: int, kind: str, ext: str = "png") -> Path:
    return Path(directory) / f"{int(frame_id):06d}_{kind}.{ext}"


def frame_ids(directory, kind: str) -> list[int]:
    """Sorted ids of every ``<id>_<kind>.*`` file in ``directory``."""
    out = []
    directory = Path(directory)
    if not directory.is_dir():
        return out
    for p in directory.iterdir():
        m = _NAME.match(p.name)
        if m and m.group(2) == kind:
            out.append(int(m.group(1)))
    return sorted(out)


def _read(path, flags):
    img = cv2.imread(str(path), flags)
    if img is None:
        raise FileNotFoundError(f"cannot read image {path}")
    return img


def _write(path, img):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), img):
        raise OSError(f"cannot write image {path}")


def read_color(directory, frame_id, kind="color") -> np.ndarray:
    return cv2.cvtColor(_read(path_for(directory, frame_id, kind), cv2.IMREAD_COLOR), cv2.COLOR_BGR2RGB)


def write_color(directory, frame_id, rgb, kind="color") -> None:
    _write(path_for(directory, frame_id, kind), cv2.cvtColor(np.asarray(rgb, np.uint8), cv2.COLOR_RGB2BGR))


def read_gray(directory, frame_id, kind) -> np.ndarray:
    return _read(path_for(directory, frame_id, kind), cv2.IMREAD_UNCHANGED)


def write_gray(directory, frame_id, img, kind) -> None:
    _write(path_for(directory, frame_id, kind), img)


def read_depth16(directory, frame_id) -> np.ndarray:
    img = read_gray(directory, frame_id, "depth16")
    if img.dtype != np.uint16:
        raise ValueError(f"frame {frame_id}: depth16 is {img.dtype}, expected uint16")
    return img


def write_depth16(directory, frame_id, depth) -> None:
    write_gray(directory, frame_id, np.asarray(depth, dtype=np.uint16), "depth16")


def read_depth8(directory, frame_id, kind="depth8") -> np.ndarray:
    return read_gray(directory, frame_id, kind)


def write_depth8(directory, frame_id, depth8, kind="depth8") -> None:
    write_gray(directory, frame_id, np.asarray(depth8, dtype=np.uint8), kind)


def read_image_file(path) -> np.ndarray:
    """Any single image file; 3-channel results are converted to RGB."""
    img = _read(path, cv2.IMREAD_UNCHANGED)
    if img.ndim == 3:
        img = cv2.cvtColor(img[..., :3], cv2.COLOR_BGR2RGB)
    return img


def write_image_file(path, img) -> None:
    img = np.asarray(img)
    if img.ndim == 3:
        img = cv2.cvtColor(img, cv2.COLOR_RGB2BGR)
    _write(path, img)
