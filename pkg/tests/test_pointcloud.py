import logging
import struct

import numpy as np
import pytest

from rgbdface.pointcloud import (
    CameraIntrinsics,
    PointCloud,
    backproject,
    export_ply,
    project,
    read_ply,
    render_turntable,
    turntable_coords,
    turntable_scale,
)


def random_frame(rng, w=40, h=30, invalid=0.3):
    color = rng.integers(0, 256, (h, w, 3), dtype=np.uint8)
    depth = rng.integers(1, 256, (h, w)).astype(np.uint8)
    depth[rng.random((h, w)) < invalid] = 0
    return color, depth


def parse_ply(path):
    """Independent reader: header lines, then struct-unpacked records."""
    with open(path, "rb") as fh:
        lines = []
        while True:
            line = fh.readline().decode("ascii").rstrip("\n")
            lines.append(line)
            if line == "end_header":
                break
        body = fh.read()
    n = int([ln for ln in lines if ln.startswith("element vertex")][0].split()[-1])
    rec = struct.Struct("<fffBBB")
    rows = [rec.unpack_from(body, i * rec.size) for i in range(n)]
    assert len(body) == n * rec.size
    return lines, rows


def test_principal_ray():
    intr = CameraIntrinsics(500.0, 500.0, 10.0, 8.0, 21, 17)
    depth = np.zeros((17, 21), np.uint8)
    depth[8, 10] = 100
    cloud = backproject(np.zeros((17, 21, 3), np.uint8), depth, intr, 300)
    np.testing.assert_array_equal(cloud.points, [[0.0, 0.0, 400.0]])


def test_all_invalid_depth_gives_empty_cloud():
    intr = CameraIntrinsics.synthetic(16)
    cloud = backproject(np.zeros((16, 16, 3), np.uint8), np.zeros((16, 16), np.uint8), intr, 300)
    assert len(cloud) == 0


def test_size_mismatch_rejected():
    with pytest.raises(ValueError):
        backproject(np.zeros((16, 16, 3), np.uint8), np.zeros((16, 16), np.uint8),
                    CameraIntrinsics.synthetic(32), 300)


def test_point_count_matches_nonzero_codes(rng):
    color, depth = random_frame(rng)
    cloud = backproject(color, depth, CameraIntrinsics(60.0, 55.0, 19.5, 14.5, 40, 30), 300)
    assert len(cloud) == np.count_nonzero(depth)


def test_reprojection_recovers_source_pixel(rng):
    for _ in range(5):
        color, depth = random_frame(rng)
        intr = CameraIntrinsics(rng.uniform(30, 200), rng.uniform(30, 200),
                                rng.uniform(0, 39), rng.uniform(0, 29), 40, 30)
        cloud = backproject(color, depth, intr, int(rng.integers(100, 900)))
        u, v = project(cloud.points, intr)
        vv, uu = np.nonzero(depth)
        assert np.abs(u - uu).max() < 0.5 and np.abs(v - vv).max() < 0.5
        np.testing.assert_array_equal(cloud.colors, color[vv, uu])


def test_near_plane_shift_translates_z(rng):
    color, depth = random_frame(rng)
    intr = CameraIntrinsics.synthetic(40).cropped(0, 0, 40, 30, 40, 30)
    a = backproject(color, depth, intr, 300)
    b = backproject(color, depth, intr, 337)
    np.testing.assert_array_equal(b.points[:, 2] - a.points[:, 2], 37.0)


def test_cropped_intrinsics_follow_the_affine():
    base = CameraIntrinsics(600.0, 610.0, 320.0, 240.0, 640, 480)
    c = base.cropped(100, 50, 356, 306, 512, 512)
    # a 3D point must land at the same place whether cropped before or after projecting
    p = np.array([[12.0, -7.0, 450.0]])
    u, v = project(p, base)
    uc, vc = project(p, c)
    np.testing.assert_allclose([uc[0], vc[0]], [(u[0] - 100) * 2, (v[0] - 50) * 2])


def test_ply_header_single_vertex(tmp_path):
    path = tmp_path / "one.ply"
    export_ply(PointCloud([[1.0, 2.0, 3.0]], [[10, 20, 30]]), path)
    lines, rows = parse_ply(path)
    assert lines[0] == "ply"
    assert lines[1] == "format binary_little_endian 1.0"
    assert "element vertex 1" in lines
    assert [ln for ln in lines if ln.startswith("property")] == [
        "property float x", "property float y", "property float z",
        "property uchar red", "property uchar green", "property uchar blue",
    ]
    assert rows == [(1.0, 2.0, 3.0, 10, 20, 30)]


def test_ply_round_trip(tmp_path, rng):
    pts = rng.normal(0, 100, (257, 3)).astype(np.float32).astype(np.float64)
    cols = rng.integers(0, 256, (257, 3), dtype=np.uint8)
    path = tmp_path / "cloud.ply"
    export_ply(PointCloud(pts, cols), path)
    _, rows = parse_ply(path)
    np.testing.assert_array_equal(np.array([r[:3] for r in rows]), pts)
    np.testing.assert_array_equal(np.array([r[3:] for r in rows]), cols)
    back = read_ply(path)
    np.testing.assert_array_equal(back.points, pts)
    np.testing.assert_array_equal(back.colors, cols)


def test_empty_ply_warns(tmp_path, caplog):
    path = tmp_path / "empty.ply"
    with caplog.at_level(logging.WARNING):
        export_ply(PointCloud(np.zeros((0, 3)), np.zeros((0, 3))), path)
    assert "empty point cloud" in caplog.text
    lines, rows = parse_ply(path)
    assert "element vertex 0" in lines and rows == []
    assert len(read_ply(path)) == 0


def test_ply_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        export_ply(PointCloud([[0, 0, 1]], [[0, 0, 0]]), tmp_path / "missing" / "x.ply")


def _slab(rng, n=60):
    """A front-facing grid of points with unique colours plus a deeper back layer."""
    xs, ys = np.meshgrid(np.arange(n) - n / 2 + 0.5, np.arange(n) - n / 2 + 0.5)
    front = np.stack([xs.ravel(), ys.ravel(), np.full(xs.size, 400.0)], axis=1)
    back = front[::7] + [0.0, 0.0, 35.0]
    pts = np.concatenate([front, back])
    cols = rng.integers(0, 256, (len(pts), 3), dtype=np.uint8)
    return PointCloud(pts, cols), len(front)


def test_turntable_front_view_shows_front_colors(rng):
    cloud, n_front = _slab(rng)
    size = 64
    img = render_turntable(cloud, 0.0, size, scale=1.0)
    c = cloud.points.mean(axis=0)
    for i in rng.choice(n_front, 25, replace=False):
        x, y = cloud.points[i, :2] - c[:2]
        col, row = int(np.floor(x + size / 2)), int(np.floor(y + size / 2))
        np.testing.assert_array_equal(img[row, col], cloud.colors[i])


def test_turntable_profile_width_matches_depth_extent(rng):
    cloud, _ = _slab(rng)
    size = 128
    scale = turntable_scale(cloud, size)
    img = render_turntable(cloud, 90.0, size)
    cols = np.nonzero(img.any(axis=(0, 2)))[0]
    extent = np.ptp(cloud.points[:, 2]) * scale
    assert abs((cols.max() - cols.min()) - extent) <= 1.0


def test_turntable_periodic(rng):
    cloud, _ = _slab(rng)
    a = render_turntable(cloud, 0.0, 96)
    b = render_turntable(cloud, 360.0 - 1e-9, 96)
    assert np.mean(np.any(a != b, axis=2)) < 0.01


def test_turntable_angle_range():
    cloud = PointCloud([[0, 0, 1]], [[1, 2, 3]])
    with pytest.raises(ValueError):
        render_turntable(cloud, 360.0, 8)
    with pytest.raises(ValueError):
        render_turntable(cloud, -1.0, 8)


def test_turntable_keeps_cloud_in_frame(rng):
    cloud = PointCloud(rng.normal(0, 50, (500, 3)) + [0, 0, 400],
                       rng.integers(0, 256, (500, 3), dtype=np.uint8))
    for angle in np.linspace(0, 359, 37):
        col, row, _ = turntable_coords(cloud, angle, 64)
        assert col.min() >= 0 and row.min() >= 0 and col.max() < 64 and row.max() < 64
