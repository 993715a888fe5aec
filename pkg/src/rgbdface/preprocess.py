"""Raw RGBD frames -> registered, depth-windowed, contrast-sharpened training images."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from . import files, kernels
from .pointcloud import CameraIntrinsics

log = logging.getLogger(__name__)

SPAN_MM = 255
INVALID = 0


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class DepthWindow:
    near_mm: int = 300
    span_mm: int = SPAN_MM

    def __post_init__(self):
        if self.span_mm != SPAN_MM:
            raise ValueError(f"depth window span is fixed at {SPAN_MM} mm")
        if self.near_mm <= 0:
            raise ValueError("near_mm must be positive")

    @property
    def far_mm(self) -> int:
        return self.near_mm + self.span_mm


@dataclass
class RawRgbdFrame:
    color: np.ndarray  # HxWx3 uint8, RGB
    depth: np.ndarray  # hxw uint16, millimetres, 0 = no reading
    frame_id: int

    def __post_init__(self):
        if self.color.size == 0 or self.depth.size == 0:
            raise ValueError("empty color or depth image")
        self.depth = np.asarray(self.depth, dtype=np.uint16)


@dataclass
class RgbdFrame:
    color: np.ndarray  # HxWx3 uint8, RGB
    depth8: np.ndarray  # HxW uint8, 0 = invalid
    window: DepthWindow = field(default_factory=DepthWindow)
    frame_id: int = -1

    def __post_init__(self):
        if self.color.shape[:2] != self.depth8.shape:
            raise ValueError(
                f"color {self.color.shape[:2]} and depth {self.depth8.shape} sizes differ"
            )


@dataclass(frozen=True)
class Calibration:
    """Depth and color cameras plus the rigid transform depth -> color (mm)."""

    depth: CameraIntrinsics
    color: CameraIntrinsics
    rotation: tuple = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))
    translation: tuple = (0.0, 0.0, 0.0)

    @classmethod
    def identity(cls, width: int, height: int) -> "Calibration":
        intr = CameraIntrinsics(float(width), float(width), width / 2, height / 2, width, height)
        return cls(intr, intr)


def register_depth_to_color(frame: RawRgbdFrame, calib: Calibration, impl=None) -> RawRgbdFrame:
    """Resample depth onto the color pixel grid.

    Every valid depth pixel is lifted to 3D, moved into the color camera and
    its one-pixel footprint is rasterised there with a nearest-depth test.
    Uncovered color pixels stay 0. Depth values are never interpolated.
    """
    dh, dw = frame.depth.shape
    ch, cw = frame.color.shape[:2]
    if (dw, dh) != (calib.depth.width, calib.depth.height):
        raise ConfigurationError(
            f"depth image {dw}x{dh} vs calibration {calib.depth.width}x{calib.depth.height}"
        )
    if (cw, ch) != (calib.color.width, calib.color.height):
        raise ConfigurationError(
            f"color image {cw}x{ch} vs calibration {calib.color.width}x{calib.color.height}"
        )
    v, u = np.nonzero(frame.depth)
    out = np.zeros((ch, cw), dtype=np.uint16)
    if u.size == 0:
        return RawRgbdFrame(frame.color, out, frame.frame_id)
    z = frame.depth[v, u].astype(np.float64)
    R = np.asarray(calib.rotation, dtype=np.float64)
    t = np.asarray(calib.translation, dtype=np.float64)
    di, ci = calib.depth, calib.color

    def to_color(uu, vv):
        p = np.stack([(uu - di.cx) * z / di.fx, (vv - di.cy) * z / di.fy, z], axis=1)
        q = p @ R.T + t
        return ci.fx * q[:, 0] / q[:, 2] + ci.cx, ci.fy * q[:, 1] / q[:, 2] + ci.cy, q[:, 2]

    corners = [to_color(u + du, v + dv) for du in (-0.5, 0.5) for dv in (-0.5, 0.5)]
    us = np.stack([c[0] for c in corners])
    vs = np.stack([c[1] for c in corners])
    zc = to_color(u.astype(np.float64), v.astype(np.float64))[2]
    x0 = np.ceil(us.min(axis=0))
    x1 = np.ceil(us.max(axis=0))
    y0 = np.ceil(vs.min(axis=0))
    y1 = np.ceil(vs.max(axis=0))
    ok = (zc > 0) & np.isfinite(x0 + x1 + y0 + y1)
    win = kernels.zbuffer_rects(
        np.where(ok, x0, 0), np.where(ok, x1, 0), np.where(ok, y0, 0), np.where(ok, y1, 0),
        zc, ch, cw, impl=impl,
    )
    hit = win >= 0
    out[hit] = np.clip(np.rint(zc[win[hit]]), 0, 65535).astype(np.uint16)
    return RawRgbdFrame(frame.color, out, frame.frame_id)


def clip_and_quantize_depth(depth16, window: DepthWindow) -> np.ndarray:
    """Map millimetre depth to 8-bit codes, 1 mm per code.

    Depths in (near, near+255] become ``depth - near``; a depth of exactly
    ``near`` becomes 1 so that code 0 keeps meaning "invalid"; all other
    depths become 0.
    """
    d = np.asarray(depth16, dtype=np.int64)
    code = d - window.near_mm
    inside = (code >= 0) & (code <= window.span_mm) & (d > 0)
    code = np.where(code == 0, 1, code)
    return np.where(inside, code, INVALID).astype(np.uint8)


def normalize(img) -> np.ndarray:
    """8-bit codes -> float32 in [-1, 1] via v / 127.5 - 1."""
    return (np.asarray(img, dtype=np.float32) / np.float32(127.5) - np.float32(1.0)).astype(np.float32)


def denormalize(x) -> np.ndarray:
    """Inverse of :func:`normalize`, rounded and clipped to uint8."""
    return np.clip(np.rint((np.asarray(x, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def _equalize_channel(ch: np.ndarray) -> np.ndarray:
    hist = np.bincount(ch.ravel(), minlength=256)
    cdf = np.cumsum(hist) / ch.size
    lut = np.floor(255.0 * cdf + 1e-9).astype(np.uint8)
    return lut[ch]


def sharpen_contrast(img) -> np.ndarray:
    """Global histogram equalisation of the luma channel (code -> floor(255 * CDF)).

    Colour images are equalised in YCrCb so chroma is untouched. Images
    whose luma is constant are returned unchanged.
    """
    img = np.asarray(img, dtype=np.uint8)
    if img.ndim == 2:
        if img.min() == img.max():
            return img.copy()
        return _equalize_channel(img)
    ycc = cv2.cvtColor(img, cv2.COLOR_RGB2YCrCb)
    y = ycc[..., 0]
    if y.min() == y.max():
        return img.copy()
    ycc[..., 0] = _equalize_channel(y)
    return cv2.cvtColor(ycc, cv2.COLOR_YCrCb2RGB)


def process_frame(raw: RawRgbdFrame, window: DepthWindow, calib: Calibration | None = None):
    """Register, quantise and sharpen one frame.

    Returns ``(registered_raw, RgbdFrame)``. Depth is never equalised.
    """
    if calib is not None:
        raw = register_depth_to_color(raw, calib)
    elif raw.depth.shape != raw.color.shape[:2]:
        raise ConfigurationError(
            f"frame {raw.frame_id}: depth and color differ in size and no calibration given"
        )
    depth8 = clip_and_quantize_depth(raw.depth, window)
    color = sharpen_contrast(raw.color)
    return raw, RgbdFrame(color, depth8, window, raw.frame_id)


def preprocess_dataset(in_dir, out_dir, window: DepthWindow, calib: Calibration | None = None):
    """Process every ``<id>_color`` / ``<id>_depth16`` pair in ``in_dir``."""
    in_dir, out_dir = Path(in_dir), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ids = files.frame_ids(in_dir, "color")
    if not ids:
        raise FileNotFoundError(f"no raw frames in {in_dir}")
    for fid in ids:
        raw = RawRgbdFrame(files.read_color(in_dir, fid), files.read_depth16(in_dir, fid), fid)
        reg, frame = process_frame(raw, window, calib)
        files.write_color(out_dir, fid, frame.color)
        files.write_depth16(out_dir, fid, reg.depth)
        files.write_depth8(out_dir, fid, frame.depth8)
    log.info("preprocessed %d frames into %s", len(ids), out_dir)
    return ids
