"""Procedural stand-in for a personal RGBD capture.

Each frame is a cartoon face whose 68 landmarks, iris positions, colour and
depth are consistent with each other, so the whole pipeline (registration,
replay detection, pupil search, cropping, training, evaluation) can run
without a camera. Depth is captured at half the colour resolution.
"""

from __future__ import annotations

import cv2
import numpy as np

from . import files
from .config import write_flat
from .dataset import DatasetLayout
from .pointcloud import CameraIntrinsics


def template_landmarks(cx, cy, s, mouth_open=0.0, brow=0.0, gaze=(0.0, 0.0)):
    """68 points in the Multi-PIE order for a face of half-width ``s`` at (cx, cy),
    plus the two iris centres."""
    pts = []
    for t in np.linspace(np.pi * 0.95, np.pi * 0.05, 17):  # jaw 0-16
        pts.append((cx + s * np.cos(t), cy + 0.15 * s + 0.95 * s * np.sin(t)))
    for side in (-1, 1):  # brows 17-26
        xs = np.linspace(0.75, 0.15, 5) if side < 0 else np.linspace(0.15, 0.75, 5)
        for x in xs:
            pts.append((cx + side * x * s, cy - (0.45 + brow) * s - 0.08 * s * np.sin(np.pi * (x - 0.15) / 0.6)))
    for k in range(4):  # nose bridge 27-30
        pts.append((cx, cy - 0.3 * s + k * 0.15 * s))
    for x in np.linspace(-0.18, 0.18, 5):  # nostrils 31-35
        pts.append((cx + x * s, cy + 0.22 * s - 0.04 * s * (1 - abs(x) / 0.18)))
    eyes = []
    for side in (-1, 1):  # eyes 36-41, 42-47
        ex, ey = cx + side * 0.4 * s, cy - 0.22 * s
        w, h = 0.2 * s, 0.09 * s
        ring = [(-w, 0), (-w / 2, -h), (w / 2, -h), (w, 0), (w / 2, h), (-w / 2, h)]
        pts.extend((ex + x, ey + y) for x, y in ring)
        eyes.append((ex + gaze[0] * w * 0.4, ey + gaze[1] * h * 0.3))
    my = cy + 0.5 * s  # mouth 48-67
    mw, mo = 0.35 * s, (0.04 + 0.16 * mouth_open) * s
    for t in np.linspace(np.pi, -np.pi, 13)[:-1]:
        pts.append((cx + mw * np.cos(t), my - (mo + 0.05 * s) * np.sin(t)))
    for t in np.linspace(np.pi, -np.pi, 9)[:-1]:
        pts.append((cx + 0.6 * mw * np.cos(t), my - mo * np.sin(t)))
    return np.asarray(pts, dtype=np.float64), np.asarray(eyes, dtype=np.float64)


def render_face(width, height, pts, irises, near_mm, scale=1):
    """Colour (height x width) and depth in mm (downsampled by ``scale``)."""
    img = np.full((height, width, 3), (40, 60, 90), np.uint8)
    cx, cy = pts[27:31, 0].mean(), pts[:, 1].mean()
    axes = (int((pts[16, 0] - pts[0, 0]) / 2 * 1.05), int((pts[8, 1] - pts[19, 1]) * 0.62))
    centre = (int(cx), int((pts[8, 1] + pts[19, 1]) / 2))
    cv2.ellipse(img, centre, axes, 0, 0, 360, (225, 185, 160), -1)
    for lo, hi in ((36, 42), (42, 48)):
        cv2.fillPoly(img, [np.round(pts[lo:hi]).astype(np.int32)], (245, 245, 245))
    r = max(int(round((pts[39, 0] - pts[36, 0]) * 0.22)), 2)
    for ix, iy in irises:
        cv2.circle(img, (int(round(ix)), int(round(iy))), r, (30, 20, 15), -1)
    for lo, hi in ((17, 22), (22, 27)):
        cv2.polylines(img, [np.round(pts[lo:hi]).astype(np.int32)], False, (70, 45, 30), 2)
    cv2.fillPoly(img, [np.round(pts[48:60]).astype(np.int32)], (170, 60, 70))
    cv2.fillPoly(img, [np.round(pts[60:68]).astype(np.int32)], (60, 10, 20))
    cv2.polylines(img, [np.round(pts[31:36]).astype(np.int32)], False, (150, 100, 90), 1)

    dh, dw = height // scale, width // scale
    yy, xx = np.mgrid[:dh, :dw]
    u = (xx + 0.5) * scale - 0.5
    v = (yy + 0.5) * scale - 0.5
    q = ((u - centre[0]) / axes[0]) ** 2 + ((v - centre[1]) / axes[1]) ** 2
    depth = np.zeros((dh, dw), np.uint16)
    inside = q < 1
    bump = 200.0 - 120.0 * np.sqrt(np.clip(1 - q, 0, 1))
    nose = 25.0 * np.exp(-((u - cx) ** 2 + (v - pts[30, 1]) ** 2) / (2 * (0.12 * axes[0]) ** 2))
    depth[inside] = np.round(near_mm + bump[inside] - nose[inside]).astype(np.uint16)
    depth[~inside] = near_mm + 900  # background, outside the depth window
    return img, depth


def make_toy_dataset(root, n: int = 8, width: int = 192, height: int = 160,
                     near_mm: int = 300, seed: int = 0) -> DatasetLayout:
    """Write ``n`` raw frames, replay annotations and a ``meta`` file under ``root``."""
    rng = np.random.default_rng(seed)
    layout = DatasetLayout(root)
    layout.raw.mkdir(parents=True, exist_ok=True)
    for fid in range(n):
        s = 0.3 * min(width, height) * rng.uniform(0.95, 1.05)
        cx = width / 2 + rng.uniform(-3, 3)
        cy = height / 2 + rng.uniform(-3, 3)
        pts, irises = template_landmarks(
            cx, cy, s, mouth_open=rng.uniform(0, 1), brow=rng.uniform(-0.05, 0.08),
            gaze=tuple(rng.uniform(-1, 1, 2)),
        )
        color, depth = render_face(width, height, pts, irises, near_mm, scale=2)
        files.write_color(layout.raw, fid, color)
        files.write_depth16(layout.raw, fid, depth)
        np.savetxt(files.path_for(layout.raw, fid, "ann", "txt"), pts, fmt="%.4f")
    f = 1.2 * width
    color_cam = CameraIntrinsics(f, f, width / 2, height / 2, width, height)
    # depth pixel centres sit on odd colour pixel boundaries (2 * u + 0.5)
    depth_cam = CameraIntrinsics(f / 2, f / 2, width / 4 - 0.25, height / 4 - 0.25, width // 2, height // 2)
    write_flat(layout.meta_path, {
        "window.near_mm": near_mm,
        "calibration.depth": depth_cam.to_dict(),
        "calibration.color": color_cam.to_dict(),
    })
    return layout
