"""70-point landmark sets, gradient-based pupil localisation, face cropping
and Facial Landmark Map (FLM) rendering.

Layout of a landmark set: indices 0-67 follow the 68-point Multi-PIE
scheme, 68 is the iris centre of the eye outlined by points 36-41 and 69
the iris centre of the eye outlined by points 42-47.
"""

from __future__ import annotations

import hashlib
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Protocol

import cv2
import numpy as np

from . import files, kernels
from .preprocess import ConfigurationError, RgbdFrame

log = logging.getLogger(__name__)

N_LANDMARKS = 70
EYE_A = slice(36, 42)
EYE_B = slice(42, 48)
FLM_RADIUS = 2
EYE_PAD = 0.2
GRADIENT_PERCENTILE = 30.0


class NoFaceError(RuntimeError):
    """The detector found no face; the frame is skipped during curation."""


@dataclass
class LandmarkSet:
    points: np.ndarray  # (70, 2) float, (x, y) pixels
    image_size: tuple[int, int]  # (width, height)
    source_frame: int = -1

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.shape != (N_LANDMARKS, 2):
            raise ValueError(f"expected ({N_LANDMARKS}, 2) landmarks, got {self.points.shape}")
        if not np.isfinite(self.points).all():
            raise ValueError("landmarks must be finite")


@dataclass(frozen=True)
class CropRect:
    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"degenerate crop rectangle {self}")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    def contains(self, pts) -> bool:
        pts = np.asarray(pts)
        return bool(
            (pts[:, 0] >= self.x0).all() and (pts[:, 0] <= self.x1).all()
            and (pts[:, 1] >= self.y0).all() and (pts[:, 1] <= self.y1).all()
        )


# --- detector backends -------------------------------------------------------


class Detector(Protocol):
    thread_safe: bool

    def detect(self, image: np.ndarray, frame_id: int | None = None) -> np.ndarray | None:
        """Return (68, 2) landmark coordinates, or None when no face is found."""


def image_key(image: np.ndarray) -> str:
    return hashlib.sha1(np.ascontiguousarray(image).tobytes()).hexdigest()


class ReplayDetector:
    """Returns stored annotations, keyed by frame id or by image content.

    With ``jitter_px > 0`` each returned coordinate is perturbed by
    independent uniform noise in [-jitter_px, jitter_px].
    """

    thread_safe = True

    def __init__(self, annotations=None, jitter_px: float = 0.0, seed: int = 0):
        self.annotations = dict(annotations or {})
        self.jitter_px = jitter_px
        self._rng = np.random.default_rng(seed)
        self._lock = threading.Lock()

    def add(self, key, points) -> None:
        self.annotations[key] = np.asarray(points, dtype=np.float64).reshape(68, 2)

    @classmethod
    def from_directory(cls, directory, **kwargs) -> "ReplayDetector":
        """Load ``<id>_ann.txt`` files holding 68 lines of "x y"."""
        det = cls(**kwargs)
        for fid in files.frame_ids(directory, "ann"):
            path = files.path_for(directory, fid, "ann", "txt")
            try:
                det.add(fid, np.loadtxt(path))
            except ValueError as exc:
                raise ConfigurationError(f"{path}: expected 68 lines of 'x y' ({exc})") from exc
        return det

    def detect(self, image, frame_id=None):
        pts = self.annotations.get(frame_id) if frame_id is not None else None
        if pts is None:
            pts = self.annotations.get(image_key(image))
        if pts is None:
            return None
        pts = np.array(pts, dtype=np.float64)
        if self.jitter_px:
            with self._lock:
                pts += self._rng.uniform(-self.jitter_px, self.jitter_px, size=pts.shape)
        return pts


class FaceAlignmentDetector:
    """Adapter for the pretrained 2D FAN from the ``face_alignment`` package."""

    thread_safe = False

    def __init__(self, device: str = "cpu"):
        try:
            import face_alignment
        except ImportError as exc:
            raise ImportError(
                "the 'fan' backend needs the face_alignment package (pip install face-alignment)"
            ) from exc
        self._fa = face_alignment.FaceAlignment(face_alignment.LandmarksType.TWO_D, device=device)

    def detect(self, image, frame_id=None):
        found = self._fa.get_landmarks_from_image(image)
        if not found:
            return None
        return np.asarray(found[0][:, :2], dtype=np.float64)


def make_detector(name: str, annotations_dir=None, **kwargs) -> Detector:
    if name == "replay":
        if annotations_dir is None:
            raise ValueError("the replay backend needs an annotations directory")
        return ReplayDetector.from_directory(annotations_dir, **kwargs)
    if name == "fan":
        return FaceAlignmentDetector(**kwargs)
    raise ValueError(f"unknown landmark backend {name!r}")


# --- pupil localisation -------------------------------------------------------


class PupilEstimate(NamedTuple):
    x: float
    y: float
    confident: bool


def pupil_inputs(eye_patch):
    """Smoothed intensity, unit gradients and the kept-gradient mask of a patch."""
    gray = np.asarray(eye_patch, dtype=np.float64)
    smooth = cv2.GaussianBlur(gray, (5, 5), 1.0)
    gy, gx = np.gradient(smooth)
    mag = np.hypot(gx, gy)
    if mag.max() <= 1e-9:
        return smooth, None, None, None
    keep = (mag >= np.percentile(mag, GRADIENT_PERCENTILE)) & (mag > 1e-9)
    with np.errstate(invalid="ignore", divide="ignore"):
        ux = np.where(keep, gx / mag, 0.0)
        uy = np.where(keep, gy / mag, 0.0)
    return smooth, ux, uy, keep


def pupil_objective_map(eye_patch, impl=None):
    smooth, ux, uy, keep = pupil_inputs(eye_patch)
    if keep is None:
        return None
    return kernels.pupil_objective(ux, uy, keep, 255.0 - smooth, impl=impl)


def locate_pupil(eye_patch, impl=None) -> PupilEstimate:
    """Iris centre of a grayscale eye crop by gradient-direction voting.

    Each candidate centre scores the mean squared alignment between the unit
    displacement to every strong-gradient pixel and that pixel's unit
    gradient, weighted by how dark the smoothed image is at the candidate.
    A patch without gradients falls back to its centre, flagged not confident.
    """
    patch = np.asarray(eye_patch)
    if patch.ndim != 2 or patch.size == 0:
        raise ValueError("eye patch must be a non-empty 2D grayscale image")
    obj = pupil_objective_map(patch, impl=impl)
    h, w = patch.shape
    if obj is None:
        return PupilEstimate((w - 1) / 2.0, (h - 1) / 2.0, False)
    y, x = np.unravel_index(int(np.argmax(obj)), obj.shape)
    return PupilEstimate(float(x), float(y), True)


def eye_box(eye_pts, width, height, pad=EYE_PAD):
    """Integer bounds of the eye contour padded by ``pad`` of its size, clipped."""
    lo = eye_pts.min(axis=0)
    hi = eye_pts.max(axis=0)
    margin = (hi - lo) * pad
    x0, y0 = np.floor(lo - margin).astype(int)
    x1, y1 = np.ceil(hi + margin).astype(int) + 1
    return max(x0, 0), max(y0, 0), min(x1, width), min(y1, height)


def _luma(color):
    color = np.asarray(color)
    if color.ndim == 2:
        return color
    return cv2.cvtColor(color.astype(np.uint8), cv2.COLOR_RGB2GRAY)


def detect_landmarks(color, backend: Detector, frame_id: int | None = None, impl=None) -> LandmarkSet:
    """68 detector points plus two iris centres from :func:`locate_pupil`."""
    pts68 = backend.detect(color, frame_id)
    if pts68 is None:
        raise NoFaceError(f"no face found in frame {frame_id}")
    pts68 = np.asarray(pts68, dtype=np.float64).reshape(68, 2)
    h, w = np.asarray(color).shape[:2]
    gray = _luma(color)
    irises = []
    for eye in (EYE_A, EYE_B):
        x0, y0, x1, y1 = eye_box(pts68[eye], w, h)
        if x1 - x0 < 3 or y1 - y0 < 3:
            irises.append(pts68[eye].mean(axis=0))
            continue
        est = locate_pupil(gray[y0:y1, x0:x1], impl=impl)
        irises.append((x0 + est.x, y0 + est.y))
    pts = np.vstack([pts68, np.asarray(irises)])
    if (pts[:, 0] < 0).any() or (pts[:, 0] > w).any() or (pts[:, 1] < 0).any() or (pts[:, 1] > h).any():
        raise NoFaceError(f"landmarks of frame {frame_id} fall outside the image")
    return LandmarkSet(pts, (w, h), -1 if frame_id is None else frame_id)


# --- cropping -------------------------------------------------------------------


def compute_crop(lms: LandmarkSet, square: bool = True, clamp: bool = True) -> CropRect:
    """Bounding rectangle of all 70 landmarks.

    With ``square`` the short side is grown symmetrically (odd remainder on
    the far side). With ``clamp`` the rectangle is shifted back inside the
    image, and only shrunk if it is larger than the image.
    """
    pts = lms.points
    x0, y0 = np.floor(pts.min(axis=0)).astype(int)
    x1, y1 = np.ceil(pts.max(axis=0)).astype(int)
    if x1 <= x0 or y1 <= y0:
        raise ValueError("landmarks span a zero-area region")
    if square:
        w, h = x1 - x0, y1 - y0
        if w < h:
            pad = h - w
            x0 -= pad // 2
            x1 += pad - pad // 2
        elif h < w:
            pad = w - h
            y0 -= pad // 2
            y1 += pad - pad // 2
    if clamp:
        width, height = lms.image_size
        x0, x1 = _shift_inside(x0, x1, width)
        y0, y1 = _shift_inside(y0, y1, height)
    return CropRect(int(x0), int(y0), int(x1), int(y1))


def _shift_inside(a, b, limit):
    if a < 0:
        b, a = b - a, 0
    if b > limit:
        a, b = a - (b - limit), limit
    return max(a, 0), b


def crop_transform(rect: CropRect, size: int):
    """(scale_x, scale_y, offset_x, offset_y) of the map source -> crop space."""
    return size / rect.width, size / rect.height, rect.x0, rect.y0


def to_crop_space(pts, rect: CropRect, size: int = 512):
    sx, sy, ox, oy = crop_transform(rect, size)
    pts = np.asarray(pts, dtype=np.float64)
    return np.stack([(pts[:, 0] - ox) * sx, (pts[:, 1] - oy) * sy], axis=1)


def from_crop_space(pts, rect: CropRect, size: int = 512):
    sx, sy, ox, oy = crop_transform(rect, size)
    pts = np.asarray(pts, dtype=np.float64)
    return np.stack([pts[:, 0] / sx + ox, pts[:, 1] / sy + oy], axis=1)


def crop_resize(frame: RgbdFrame, rect: CropRect, lms: LandmarkSet | None = None, size: int = 512):
    """Crop to ``rect`` and resize to ``size``x``size``.

    Color is resampled bilinearly, depth codes by nearest neighbour so the
    invalid code never bleeds. Returns ``(frame, landmarks_in_crop_space)``.
    """
    h, w = frame.depth8.shape
    if rect.x0 < 0 or rect.y0 < 0 or rect.x1 > w or rect.y1 > h:
        raise ValueError(f"crop {rect} exceeds frame {w}x{h}")
    color = frame.color[rect.y0:rect.y1, rect.x0:rect.x1]
    depth = frame.depth8[rect.y0:rect.y1, rect.x0:rect.x1]
    color = cv2.resize(color, (size, size), interpolation=cv2.INTER_LINEAR)
    depth = cv2.resize(depth, (size, size), interpolation=cv2.INTER_NEAREST)
    out = RgbdFrame(color, depth, frame.window, frame.frame_id)
    if lms is None:
        return out, None
    return out, LandmarkSet(to_crop_space(lms.points, rect, size), (size, size), lms.source_frame)


# --- FLM rendering ----------------------------------------------------------------

_DISC = [(dy, dx) for dy in range(-FLM_RADIUS, FLM_RADIUS + 1)
         for dx in range(-FLM_RADIUS, FLM_RADIUS + 1) if dx * dx + dy * dy <= FLM_RADIUS ** 2]


def render_flm(points, size: int = 512) -> np.ndarray:
    """Binary map with a radius-2 disc (13 pixels) at every landmark's nearest pixel.

    Points may lie on the closed canvas [0, size]; the far edge belongs to the
    last pixel, matching the closed bounding box of :func:`compute_crop`.
    """
    pts = np.asarray(points.points if isinstance(points, LandmarkSet) else points, dtype=np.float64)
    if ((pts < 0) | (pts > size)).any():
        raise ValueError("landmark outside the FLM canvas; crop contract violated")
    img = np.zeros((size, size), dtype=np.uint8)
    centres = np.minimum(np.floor(pts + 0.5).astype(int), size - 1)
    for dy, dx in _DISC:
        r = centres[:, 1] + dy
        c = centres[:, 0] + dx
        ok = (r >= 0) & (r < size) & (c >= 0) & (c < size)
        img[r[ok], c[ok]] = 255
    return img


# --- landmark files -----------------------------------------------------------------


def write_lms(path, lms: LandmarkSet) -> None:
    np.savetxt(path, lms.points, fmt="%.6f")


def read_lms(path, image_size=(512, 512), source_frame=-1) -> LandmarkSet:
    return LandmarkSet(np.loadtxt(path).reshape(N_LANDMARKS, 2), tuple(image_size), source_frame)


def label_dataset(processed_dir, flm_dir, backend: Detector, size: int = 512,
                  square: bool = True, workers: int = 1, window=None):
    """Detect, crop and render FLMs for every processed frame.

    Writes ``<id>_flm.png``, ``<id>_lms.txt`` (crop space), ``<id>_rect.txt``
    and the cropped ``<id>_color.png`` / ``<id>_depth8.png`` into ``flm_dir``.
    Frames without a face are logged and skipped. Returns the labelled ids.
    """
    processed_dir, flm_dir = Path(processed_dir), Path(flm_dir)
    flm_dir.mkdir(parents=True, exist_ok=True)
    lock = None if getattr(backend, "thread_safe", False) else threading.Lock()

    def one(fid):
        color = files.read_color(processed_dir, fid)
        depth8 = files.read_depth8(processed_dir, fid)
        try:
            if lock is None:
                lms = detect_landmarks(color, backend, fid)
            else:
                with lock:
                    lms = detect_landmarks(color, backend, fid)
        except NoFaceError as exc:
            log.warning("skipping frame %d: %s", fid, exc)
            return None
        rect = compute_crop(lms, square=square)
        kwargs = {} if window is None else {"window": window}
        crop, lms_c = crop_resize(RgbdFrame(color, depth8, frame_id=fid, **kwargs), rect, lms, size)
        files.write_gray(flm_dir, fid, render_flm(lms_c, size), "flm")
        write_lms(files.path_for(flm_dir, fid, "lms", "txt"), lms_c)
        np.savetxt(files.path_for(flm_dir, fid, "rect", "txt"),
                   [[rect.x0, rect.y0, rect.x1, rect.y1]], fmt="%d")
        files.write_color(flm_dir, fid, crop.color)
        files.write_depth8(flm_dir, fid, crop.depth8)
        return fid

    ids = files.frame_ids(processed_dir, "color")
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            done = list(pool.map(one, ids))
    else:
        done = [one(fid) for fid in ids]
    return [fid for fid in done if fid is not None]
