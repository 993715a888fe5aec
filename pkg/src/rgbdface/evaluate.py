"""Quantitative evaluation: SSIM, perceptual distance, depth error in mm,
face-area masking and per-frame figure grids."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
import torch
from scipy import ndimage

from . import files
from .pointcloud import CameraIntrinsics, backproject, render_turntable
from .preprocess import DepthWindow, RgbdFrame, normalize

C1 = (0.01 * 255) ** 2
C2 = (0.03 * 255) ** 2
WINDOW = 11
SIGMA = 1.5
BELOW_MM = 4.0
FIGURE_COLUMNS = ("flm", "generated", "ground_truth", "ssim_map", "depth_error", "turntable_30_90")


def gaussian_window(size: int = WINDOW, sigma: float = SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def to_luma(img) -> np.ndarray:
    """ITU-R BT.601 luma as float64; single-channel input passes through."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        return img[..., 0] * 0.299 + img[..., 1] * 0.587 + img[..., 2] * 0.114
    return img


def _filter_valid(x, g):
    k = g.size
    h, w = x.shape
    rows = sum(g[i] * x[:, i:w - k + 1 + i] for i in range(k))
    return sum(g[i] * rows[i:h - k + 1 + i, :] for i in range(k))


def ssim(a, b, mask=None):
    """Windowed SSIM on 8-bit-range luma; returns ``(mean, map)``.

    The map holds one value per fully-inside 11x11 Gaussian window
    (sigma 1.5), so it is (H-10)x(W-10). With ``mask``, pixels outside it are
    zeroed in both images and only windows centred inside the mask count.
    """
    a, b = to_luma(a), to_luma(b)
    if a.shape != b.shape:
        raise ValueError(f"image sizes differ: {a.shape} vs {b.shape}")
    if min(a.shape) < WINDOW:
        raise ValueError(f"images must be at least {WINDOW}x{WINDOW}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        a = np.where(mask, a, 0.0)
        b = np.where(mask, b, 0.0)
    g = gaussian_window()
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    s_a = _filter_valid(a * a, g) - mu_a ** 2
    s_b = _filter_valid(b * b, g) - mu_b ** 2
    s_ab = _filter_valid(a * b, g) - mu_a * mu_b
    smap = ((2 * mu_a * mu_b + C1) * (2 * s_ab + C2)) / ((mu_a ** 2 + mu_b ** 2 + C1) * (s_a + s_b + C2))
    if mask is None:
        return float(smap.mean()), smap
    r = WINDOW // 2
    centres = mask[r:mask.shape[0] - r, r:mask.shape[1] - r]
    return (float(smap[centres].mean()) if centres.any() else float("nan")), smap


def lpips(a, b, handle) -> float:
    """Perceptual distance between two 8-bit RGB images."""
    if handle is None:
        raise ValueError("no perceptual-distance handle loaded")
    ta = torch.from_numpy(normalize(a).transpose(2, 0, 1))[None]
    tb = torch.from_numpy(normalize(b).transpose(2, 0, 1))[None]
    with torch.no_grad():
        return float(handle(ta, tb))


@dataclass
class DepthError:
    error_mm: np.ndarray  # NaN outside the common valid support
    mae_mm: float
    below_4mm: float
    support: int
    error: str | None = None


def depth_error_map(gen_depth8, gt_depth8, window: DepthWindow | None = None) -> DepthError:
    """Absolute depth difference in mm on pixels valid in both images.

    Both inputs must share one depth window, so a code difference is a
    millimetre difference.
    """
    gen = np.asarray(gen_depth8).astype(np.float64)
    gt = np.asarray(gt_depth8).astype(np.float64)
    if gen.shape != gt.shape:
        raise ValueError(f"depth sizes differ: {gen.shape} vs {gt.shape}")
    valid = (gen > 0) & (gt > 0)
    err = np.full(gen.shape, np.nan)
    err[valid] = np.abs(gen[valid] - gt[valid])
    n = int(valid.sum())
    if n == 0:
        return DepthError(err, float("nan"), float("nan"), 0, "disjoint valid depth supports")
    vals = err[valid]
    return DepthError(err, float(vals.mean()), float((vals < BELOW_MM).mean()), n)


def disc_structure(radius: int) -> np.ndarray:
    r = np.arange(-radius, radius + 1)
    return (r[:, None] ** 2 + r[None, :] ** 2) <= radius ** 2


def face_mask(depth8, erosion_radius: int = 3) -> np.ndarray:
    """Pixels with a valid depth code, eroded by a disc; the image border counts as invalid."""
    valid = np.asarray(depth8) > 0
    if erosion_radius <= 0:
        return valid
    return ndimage.binary_erosion(valid, structure=disc_structure(erosion_radius), border_value=0)


def jpeg_equivalence(gt_rgb, target_ssim: float):
    """Smallest JPEG quality whose SSIM against ``gt_rgb`` reaches ``target_ssim``.

    Returns ``(quality, jpeg_bytes / png_bytes)`` or ``(None, None)`` when even
    quality 100 falls short.
    """
    bgr = cv2.cvtColor(np.asarray(gt_rgb, np.uint8), cv2.COLOR_RGB2BGR)
    png = len(cv2.imencode(".png", bgr)[1])
    for q in range(1, 101):
        buf = cv2.imencode(".jpg", bgr, [cv2.IMWRITE_JPEG_QUALITY, q])[1]
        dec = cv2.cvtColor(cv2.imdecode(buf, cv2.IMREAD_COLOR), cv2.COLOR_BGR2RGB)
        if ssim(dec, gt_rgb)[0] >= target_ssim:
            return q, len(buf) / png
    return None, None


@dataclass
class EvalRecord:
    frame_id: int
    ssim: float
    lpips: float
    depth_mae_mm: float
    depth_below_4mm: float
    masked_ssim: float
    masked_lpips: float
    masked_depth_mae_mm: float
    jpeg_quality: int | None = None
    jpeg_size_ratio: float | None = None
    flags: list = field(default_factory=list)
    error: str | None = None

    def to_dict(self) -> dict:
        """JSON-safe: non-finite metrics become ``None``."""
        return {k: None if isinstance(v, float) and not math.isfinite(v) else v
                for k, v in dataclasses.asdict(self).items()}


@dataclass
class EvalFrame:
    """Everything the figure grid needs for one frame."""

    frame_id: int
    flm: np.ndarray
    generated: RgbdFrame
    truth: RgbdFrame
    ssim_map: np.ndarray
    depth_error: DepthError


class OracleSession:
    """Stands in for an inference session by replaying ground truth."""

    def __init__(self, pairs):
        self._by_key = {np.asarray(flm).tobytes(): frame for flm, frame in pairs}

    def synthesize(self, flm) -> RgbdFrame:
        return self._by_key[np.asarray(flm).tobytes()]


def _finite_mean(values):
    vals = [v for v in values if v is not None and math.isfinite(v)]
    return math.fsum(vals) / len(vals) if vals else None


def evaluate_frame(frame_id, flm, truth: RgbdFrame, generated: RgbdFrame, perceptual,
                   erosion_radius: int = 3, jpeg: bool = False):
    s, smap = ssim(generated.color, truth.color)
    de = depth_error_map(generated.depth8, truth.depth8, truth.window)
    mask = face_mask(truth.depth8, erosion_radius)
    ms, _ = ssim(generated.color, truth.color, mask=mask)
    m3 = mask[..., None]
    ml = lpips(generated.color * m3, truth.color * m3, perceptual)
    masked_err = de.error_mm[mask & np.isfinite(de.error_mm)]
    rec = EvalRecord(
        frame_id=int(frame_id),
        ssim=s,
        lpips=lpips(generated.color, truth.color, perceptual),
        depth_mae_mm=de.mae_mm,
        depth_below_4mm=de.below_4mm,
        masked_ssim=ms,
        masked_lpips=ml,
        masked_depth_mae_mm=float(masked_err.mean()) if masked_err.size else float("nan"),
        error=de.error,
    )
    if jpeg:
        rec.jpeg_quality, rec.jpeg_size_ratio = jpeg_equivalence(truth.color, s)
    return rec, EvalFrame(int(frame_id), np.asarray(flm), generated, truth, smap, de)


def summarize(records) -> dict:
    """Order-independent summary: records are sorted by frame id before reduction."""
    recs = sorted(records, key=lambda r: r.frame_id)
    if not recs:
        raise ValueError("no records to summarise")
    out = {"n": len(recs)}
    for key in ("ssim", "lpips", "depth_mae_mm", "depth_below_4mm", "masked_ssim",
                "masked_lpips", "masked_depth_mae_mm", "jpeg_quality", "jpeg_size_ratio"):
        out[f"mean_{key}"] = _finite_mean(getattr(r, key) for r in recs)
    # ties resolve to the lowest frame id
    out["best_ssim"] = max(recs, key=lambda r: (r.ssim, -r.frame_id)).frame_id
    out["worst_ssim"] = min(recs, key=lambda r: (r.ssim, r.frame_id)).frame_id
    out["best_lpips"] = min(recs, key=lambda r: (r.lpips, r.frame_id)).frame_id
    out["worst_lpips"] = max(recs, key=lambda r: (r.lpips, -r.frame_id)).frame_id
    for r in recs:
        r.flags = [k for k in ("best_ssim", "worst_ssim", "best_lpips", "worst_lpips")
                   if out[k] == r.frame_id]
    return out


def evaluate_dataset(test_items, session, perceptual, train_ids=(), erosion_radius: int = 3,
                     jpeg: bool = False):
    """Evaluate ``(frame_id, flm, truth)`` items with ``session.synthesize``.

    Returns ``(records, summary, frames)``.
    """
    test_items = list(test_items)
    if not test_items:
        raise ValueError("empty test set")
    overlap = {int(fid) for fid, _, _ in test_items} & {int(i) for i in train_ids}
    if overlap:
        raise ValueError(f"test frames also used for training: {sorted(overlap)}")
    records, frames = [], []
    for fid, flm, truth in test_items:
        rec, frame = evaluate_frame(fid, flm, truth, session.synthesize(flm), perceptual,
                                    erosion_radius, jpeg)
        records.append(rec)
        frames.append(frame)
    summary = summarize(records)
    return records, summary, frames


# --- report --------------------------------------------------------------------


def _gray3(img):
    img = np.asarray(img, np.uint8)
    return np.repeat(img[..., None], 3, axis=2) if img.ndim == 2 else img


def ssim_panel(smap, size) -> np.ndarray:
    """Per-pixel SSIM as brightness (darker = larger difference), padded to full size."""
    full = np.ones((size, size))
    r = WINDOW // 2
    full[r:r + smap.shape[0], r:r + smap.shape[1]] = smap
    return _gray3(np.clip(255.0 * full, 0, 255).astype(np.uint8))


def depth_error_panel(err_mm, max_mm: float = 25.0) -> np.ndarray:
    scaled = np.clip(np.nan_to_num(err_mm, nan=0.0) / max_mm * 255.0, 0, 255).astype(np.uint8)
    bgr = cv2.applyColorMap(scaled, cv2.COLORMAP_JET)
    bgr[~np.isfinite(err_mm)] = 0
    return cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)


def figure_row(frame: EvalFrame, camera: CameraIntrinsics) -> dict:
    """The six column analogues of one result row, keyed by FIGURE_COLUMNS."""
    size = frame.truth.depth8.shape[0]
    cloud = backproject(frame.generated.color, frame.generated.depth8, camera,
                        frame.generated.window.near_mm)
    half = size // 2
    views = np.concatenate(
        [render_turntable(cloud, 30.0, half), render_turntable(cloud, 90.0, half)], axis=0
    )
    views = cv2.resize(views, (half, size), interpolation=cv2.INTER_NEAREST)
    return {
        "flm": _gray3(frame.flm),
        "generated": frame.generated.color,
        "ground_truth": frame.truth.color,
        "ssim_map": ssim_panel(frame.ssim_map, size),
        "depth_error": depth_error_panel(frame.depth_error.error_mm),
        "turntable_30_90": views,
    }


def write_report(records, summary, frames, out_dir, camera: CameraIntrinsics, figures: bool = True):
    """``records.jsonl``, ``summary.json``, ``layout.json`` and ``<id>_grid.png`` per frame."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "records.jsonl", "w") as fh:
        for rec in sorted(records, key=lambda r: r.frame_id):
            fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
    (out_dir / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
    (out_dir / "layout.json").write_text(json.dumps({"columns": list(FIGURE_COLUMNS)}) + "\n")
    if figures:
        for frame in frames:
            row = figure_row(frame, camera)
            grid = np.concatenate([row[c] for c in FIGURE_COLUMNS], axis=1)
            files.write_color(out_dir, frame.frame_id, grid, kind="grid")
