"""Dataset directory layout, the ``meta`` file and preflight validation.

::

    dataset/
      raw/        <id>_color.png  <id>_depth16.png  [<id>_ann.txt]
      processed/  <id>_color.png  <id>_depth16.png  <id>_depth8.png
      flm/        <id>_flm.png  <id>_lms.txt  <id>_rect.txt  <id>_color.png  <id>_depth8.png
      meta        flat key = value file (window, calibration, split, skipped frames)
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import cv2

from . import files
from .config import read_flat, write_flat
from .pointcloud import CameraIntrinsics
from .preprocess import Calibration, DepthWindow


class PreflightError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("preflight failed:\n  " + "\n  ".join(self.problems))


class DatasetLayout:
    def __init__(self, root, raw=None):
        self.root = Path(root)
        self.raw = Path(raw) if raw is not None else self.root / "raw"
        self.processed = self.root / "processed"
        self.flm = self.root / "flm"
        self.meta_path = self.root / "meta"

    def read_meta(self) -> dict:
        return read_flat(self.meta_path) if self.meta_path.exists() else {}

    def update_meta(self, **entries) -> dict:
        meta = self.read_meta()
        meta.update({k.replace("__", "."): v for k, v in entries.items()})
        self.root.mkdir(parents=True, exist_ok=True)
        write_flat(self.meta_path, meta)
        return meta

    def window(self, default: DepthWindow | None = None) -> DepthWindow:
        meta = self.read_meta()
        if "window.near_mm" in meta:
            return DepthWindow(int(meta["window.near_mm"]))
        return default or DepthWindow()

    def calibration(self) -> Calibration | None:
        meta = self.read_meta()
        if "calibration.depth" not in meta:
            return None
        return Calibration(
            CameraIntrinsics(**meta["calibration.depth"]),
            CameraIntrinsics(**meta["calibration.color"]),
            tuple(map(tuple, meta.get("calibration.rotation", Calibration.rotation))),
            tuple(meta.get("calibration.translation", Calibration.translation)),
        )

    def split(self):
        meta = self.read_meta()
        if "split.train" not in meta:
            return None
        return list(meta["split.train"]), list(meta["split.test"])

    def skipped(self) -> set[int]:
        return set(self.read_meta().get("landmarks.skipped", []))


@dataclass
class PreflightReport:
    frames: list = field(default_factory=list)
    problems: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.problems

    def raise_for_problems(self):
        if self.problems:
            raise PreflightError(self.problems)


def _size(path):
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    return None if img is None else img.shape[:2]


def preflight(layout: DatasetLayout) -> PreflightReport:
    """Check color/depth/FLM triplets, resolutions and split metadata."""
    rep = PreflightReport()
    kinds = ("color", "depth8", "flm")
    present = {k: set(files.frame_ids(layout.flm, k)) for k in kinds}
    expected = set(files.frame_ids(layout.processed, "color")) - layout.skipped()
    ids = sorted(set().union(*present.values()) | expected)
    if not ids:
        rep.problems.append(f"no frames found under {layout.root}")
        return rep
    for fid in ids:
        missing = [k for k in kinds if fid not in present[k]]
        if missing:
            rep.problems.append(f"frame {fid}: missing {', '.join(missing)}")
    complete = [fid for fid in ids if all(fid in present[k] for k in kinds)]
    sizes = {}
    for fid in complete:
        shapes = {k: _size(files.path_for(layout.flm, fid, k)) for k in kinds}
        if None in shapes.values():
            rep.problems.append(f"frame {fid}: unreadable image")
            continue
        if len(set(shapes.values())) != 1:
            rep.problems.append(f"frame {fid}: color/depth/flm sizes differ {shapes}")
            continue
        sizes[fid] = shapes["flm"]
    if sizes:
        common, _ = Counter(sizes.values()).most_common(1)[0]
        odd = sorted(fid for fid, s in sizes.items() if s != common)
        if odd:
            rep.problems.append(f"frames with a resolution other than {common}: {odd}")
        if common[0] != common[1]:
            rep.problems.append(f"training images must be square, found {common}")
    split = layout.split()
    if split is not None:
        train, test = set(split[0]), set(split[1])
        if train & test:
            rep.problems.append(f"split overlaps on frames {sorted(train & test)}")
        unknown = (train | test) - set(complete)
        if unknown:
            rep.problems.append(f"split lists unknown frames {sorted(unknown)}")
    rep.frames = complete
    return rep
