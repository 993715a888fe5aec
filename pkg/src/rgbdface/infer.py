"""Generator-only inference: FLM in, 8-bit RGB + depth codes out."""

from __future__ import annotations

import threading
import time
from collections import deque
from pathlib import Path

import numpy as np
import torch

from . import files
from .config import PipelineConfig
from .model import UNetGenerator
from .pointcloud import backproject, export_ply
from .preprocess import RgbdFrame, denormalize, normalize
from .training import default_device, read_checkpoint

TIMING_WINDOW = 1000


class InferenceSession:
    """Immutable generator plus a bounded, thread-safe latency log."""

    def __init__(self, generator: UNetGenerator, config: PipelineConfig, device="cpu"):
        self.config = config
        self.window = config.window
        self.camera = config.camera_or_default()
        self.device = torch.device(device)
        self.generator = generator.to(self.device).eval().requires_grad_(False)
        self.size = generator.cfg.image_size
        self._timings = deque(maxlen=TIMING_WINDOW)
        self._lock = threading.Lock()

    def manifest(self) -> list[str]:
        """Names of the networks held by the session."""
        return [type(m).__name__ for m in (self.generator,)]

    def forward(self, flm_norm: np.ndarray) -> np.ndarray:
        x = torch.from_numpy(np.ascontiguousarray(flm_norm, dtype=np.float32)).reshape(1, 1, self.size, self.size)
        x = x.to(self.device)
        t0 = time.perf_counter()
        with torch.inference_mode():
            y = self.generator(x)
            if self.device.type == "cuda":
                torch.cuda.synchronize(self.device)
        dt = time.perf_counter() - t0
        with self._lock:
            self._timings.append(dt)
        return y[0].cpu().numpy()

    def synthesize(self, flm) -> RgbdFrame:
        flm = np.asarray(flm)
        if flm.shape != (self.size, self.size):
            raise ValueError(f"FLM must be {self.size}x{self.size}, got {flm.shape}")
        out = self.forward(normalize(flm))
        color = denormalize(out[:3].transpose(1, 2, 0))
        depth8 = denormalize(out[3])
        return RgbdFrame(np.ascontiguousarray(color), depth8, self.window)

    def timings(self) -> list[float]:
        with self._lock:
            return list(self._timings)

    def mean_latency(self) -> float:
        t = self.timings()
        return sum(t) / len(t) if t else float("nan")


def load_session(path, device=None) -> InferenceSession:
    """Build a session from a training checkpoint and run one validation pass."""
    blob = read_checkpoint(path)
    config = PipelineConfig.from_flat(blob["config"])
    gen = UNetGenerator(config.generator)
    gen.load_state_dict(blob["generator"])
    session = InferenceSession(gen, config, device or default_device())
    probe = session.forward(np.full((session.size, session.size), -1.0, np.float32))
    if not np.isfinite(probe).all():
        raise RuntimeError(f"{path}: validation forward pass produced non-finite values")
    session._timings.clear()
    return session


def infer_paths(session: InferenceSession, flm_path, out_dir, ply: bool = False) -> list[int]:
    """Run ``synthesize`` on one FLM file or every ``<id>_flm`` in a directory."""
    flm_path, out_dir = Path(flm_path), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if flm_path.is_dir():
        items = [(fid, files.read_gray(flm_path, fid, "flm")) for fid in files.frame_ids(flm_path, "flm")]
    else:
        stem = flm_path.stem.split("_")[0]
        fid = int(stem) if stem.isdigit() else 0
        items = [(fid, files.read_image_file(flm_path))]
    for fid, flm in items:
        frame = session.synthesize(flm)
        files.write_color(out_dir, fid, frame.color, kind="gen_color")
        files.write_depth8(out_dir, fid, frame.depth8, kind="gen_depth8")
        if ply:
            cloud = backproject(frame.color, frame.depth8, session.camera, session.window.near_mm)
            export_ply(cloud, files.path_for(out_dir, fid, "gen", "ply"))
    return [fid for fid, _ in items]
