"""Back-projection of generated RGBD frames to textured 2.5D point clouds,
binary PLY export and an orthographic turntable preview."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import kernels

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    @classmethod
    def synthetic(cls, size: int = 512, fov_deg: float = 60.0) -> "CameraIntrinsics":
        """Square pinhole camera used when no calibration is supplied."""
        f = 0.5 * size / np.tan(np.radians(fov_deg) / 2)
        return cls(f, f, size / 2, size / 2, size, size)

    def cropped(self, x0: float, y0: float, x1: float, y1: float, out_w: int, out_h: int):
        """Intrinsics of the image obtained by cropping [x0,x1)x[y0,y1) and resizing."""
        sx = out_w / (x1 - x0)
        sy = out_h / (y1 - y0)
        return CameraIntrinsics(
            self.fx * sx, self.fy * sy, (self.cx - x0) * sx, (self.cy - y0) * sy, out_w, out_h
        )

    def to_dict(self):
        return {k: getattr(self, k) for k in ("fx", "fy", "cx", "cy", "width", "height")}


@dataclass
class PointCloud:
    points: np.ndarray  # (N, 3) float, millimetres
    colors: np.ndarray  # (N, 3) uint8 RGB

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
        if len(self.points) != len(self.colors):
            raise ValueError("points and colors differ in length")

    def __len__(self):
        return len(self.points)


def backproject(color, depth8, intr: CameraIntrinsics, near_mm: int) -> PointCloud:
    """Lift every pixel with a nonzero depth code to camera space.

    z = near_mm + code, x = (u - cx) z / fx, y = (v - cy) z / fy.
    """
    depth8 = np.asarray(depth8)
    h, w = depth8.shape
    if (w, h) != (intr.width, intr.height) or np.asarray(color).shape[:2] != (h, w):
        raise ValueError(
            f"frame {w}x{h} does not match intrinsics {intr.width}x{intr.height}"
        )
    v, u = np.nonzero(depth8)
    z = near_mm + depth8[v, u].astype(np.float64)
    x = (u - intr.cx) * z / intr.fx
    y = (v - intr.cy) * z / intr.fy
    return PointCloud(np.stack([x, y, z], axis=1), np.asarray(color)[v, u])


def project(points, intr: CameraIntrinsics):
    """Pinhole projection; returns (u, v) float pixel coordinates."""
    p = np.asarray(points, dtype=np.float64)
    return intr.fx * p[:, 0] / p[:, 2] + intr.cx, intr.fy * p[:, 1] / p[:, 2] + intr.cy


_PLY_VERTEX = np.dtype(
    [("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("red", "u1"), ("green", "u1"), ("blue", "u1")]
)


def export_ply(cloud: PointCloud, path) -> None:
    """Write a binary little-endian PLY with float xyz and uchar rgb."""
    if len(cloud) == 0:
        log.warning("writing empty point cloud to %s", path)
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {len(cloud)}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "end_header\n"
    )
    data = np.empty(len(cloud), dtype=_PLY_VERTEX)
    for i, name in enumerate("xyz"):
        data[name] = cloud.points[:, i]
    for i, name in enumerate(("red", "green", "blue")):
        data[name] = cloud.colors[:, i]
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(data.tobytes())


def read_ply(path) -> PointCloud:
    """Read the PLY layout written by :func:`export_ply`."""
    with open(path, "rb") as fh:
        raw = fh.read()
    end = raw.index(b"end_header\n") + len(b"end_header\n")
    header = raw[:end].decode("ascii").splitlines()
    if header[0] != "ply" or header[1] != "format binary_little_endian 1.0":
        raise ValueError(f"{path}: not a binary little-endian PLY")
    n = next(int(line.split()[2]) for line in header if line.startswith("element vertex"))
    data = np.frombuffer(raw, dtype=_PLY_VERTEX, count=n, offset=end)
    pts = np.stack([data["x"], data["y"], data["z"]], axis=1).astype(np.float64)
    cols = np.stack([data["red"], data["green"], data["blue"]], axis=1)
    return PointCloud(pts, cols)


def turntable_scale(cloud: PointCloud, size: int) -> float:
    """Pixels per millimetre such that any rotation about the vertical axis stays in frame."""
    if len(cloud) == 0:
        return 1.0
    d = cloud.points - cloud.points.mean(axis=0)
    radius = max(np.sqrt(d[:, 0] ** 2 + d[:, 2] ** 2).max(), np.abs(d[:, 1]).max(), 1e-9)
    return (size / 2 - 1) / radius


def turntable_coords(cloud: PointCloud, angle_deg: float, size: int, scale: float | None = None):
    """Rotate about the vertical axis through the centroid and map to pixel coordinates.

    Returns integer (col, row) and the rotated depth used for the z-test.
    """
    if scale is None:
        scale = turntable_scale(cloud, size)
    c = cloud.points.mean(axis=0) if len(cloud) else np.zeros(3)
    d = cloud.points - c
    a = np.radians(angle_deg)
    xr = np.cos(a) * d[:, 0] + np.sin(a) * d[:, 2]
    zr = -np.sin(a) * d[:, 0] + np.cos(a) * d[:, 2]
    col = np.floor(xr * scale + size / 2).astype(np.int64)
    row = np.floor(d[:, 1] * scale + size / 2).astype(np.int64)
    return col, row, zr


def render_turntable(cloud: PointCloud, angle_deg: float, size: int = 512,
                     scale: float | None = None, background: int = 0) -> np.ndarray:
    """Orthographic one-pixel splat render of ``cloud`` seen from ``angle_deg``."""
    if not 0 <= angle_deg < 360:
        raise ValueError("angle must be in [0, 360)")
    img = np.full((size, size, 3), background, dtype=np.uint8)
    if len(cloud) == 0:
        return img
    col, row, zr = turntable_coords(cloud, angle_deg, size, scale)
    win = kernels.zbuffer_rects(col, col + 1, row, row + 1, zr, size, size)
    hit = win >= 0
    img[hit] = cloud.colors[win[hit]]
    return img
