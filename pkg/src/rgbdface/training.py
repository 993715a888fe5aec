"""Adversarial training loop: schedule, split, per-sample D/G alternation,
checkpointing and bit-reproducible resume."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import files
from .model import (
    D_LOSS_FACTOR,
    DiscriminatorConfig,
    GeneratorConfig,
    LossWeights,
    MultiScaleDiscriminator,
    UNetGenerator,
    init_weights,
    loss_discriminator,
    loss_generator,
)
from .preprocess import normalize

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "rgbdface-checkpoint"
CHECKPOINT_VERSION = 1
TERMS = ("d", "adv", "fm", "l1", "lpips", "g_total")


class NonFiniteLossError(FloatingPointError):
    pass


class CheckpointError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 1
    lr_initial: float = 0.0002
    lr_constant_epochs: int = 30
    lr_decay_epochs: int = 70
    seed: int = 0
    # 6/7 reproduces the published 1238/207, 1500/250, 1620/271 and 2413/403 splits
    split_train_fraction: float = 6 / 7
    betas: tuple = (0.5, 0.999)
    init_std: float = 0.02
    d_loss_factor: float = D_LOSS_FACTOR
    checkpoint_every: int = 10
    keep_last: int = 3

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.lr_constant_epochs + self.lr_decay_epochs != self.epochs:
            raise ValueError("lr_constant_epochs + lr_decay_epochs must equal epochs")
        if not 0 < self.split_train_fraction < 1:
            raise ValueError("split_train_fraction must lie in (0, 1)")
        if self.batch_size != 1:
            raise ValueError("only batch size 1 is supported")


@dataclass
class EpochReport:
    epoch: int
    losses: dict
    lr: float
    wall_time: float = 0.0

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    def comparable(self) -> dict:
        """Everything except the wall time."""
        return {"epoch": self.epoch, "losses": self.losses, "lr": self.lr}


@dataclass
class TrainingSample:
    frame_id: int
    flm: np.ndarray  # (1, H, W) float32 in [-1, 1]
    target: np.ndarray  # (4, H, W) float32 in [-1, 1], RGB + depth

    def tensors(self, dtype=torch.float32):
        return (torch.from_numpy(self.flm)[None].to(dtype), torch.from_numpy(self.target)[None].to(dtype))


def learning_rate(epoch: int, cfg: TrainConfig) -> float:
    """Constant for the first ``lr_constant_epochs``, then linear to zero at ``epochs``."""
    if not 1 <= epoch <= cfg.epochs:
        raise ValueError(f"epoch {epoch} outside 1..{cfg.epochs}")
    if epoch <= cfg.lr_constant_epochs:
        return cfg.lr_initial
    return cfg.lr_initial * (1.0 - (epoch - cfg.lr_constant_epochs) / cfg.lr_decay_epochs)


def split_sizes(n: int, fraction: float) -> tuple[int, int]:
    n_train = int(math.floor(fraction * n + 1e-9))
    n_train = min(max(n_train, 1), n - 1)
    return n_train, n - n_train


def split_dataset(samples, cfg: TrainConfig):
    """Seeded shuffle, then the first ``floor(fraction * N)`` items train."""
    samples = list(samples)
    if len(samples) < 2:
        raise ValueError("need at least 2 samples to split")
    n_train, _ = split_sizes(len(samples), cfg.split_train_fraction)
    perm = np.random.default_rng(cfg.seed).permutation(len(samples))
    return [samples[i] for i in perm[:n_train]], [samples[i] for i in perm[n_train:]]


def load_sample(flm_dir, fid: int) -> TrainingSample:
    flm = files.read_gray(flm_dir, fid, "flm")
    color = files.read_color(flm_dir, fid)
    depth8 = files.read_depth8(flm_dir, fid)
    target = np.concatenate([normalize(color).transpose(2, 0, 1), normalize(depth8)[None]], axis=0)
    return TrainingSample(fid, normalize(flm)[None], np.ascontiguousarray(target))


def load_samples(flm_dir, ids=None):
    ids = files.frame_ids(flm_dir, "flm") if ids is None else ids
    return [load_sample(flm_dir, fid) for fid in ids]


def _epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0])


class Trainer:
    """Owns G, D1..D3, their optimisers and the epoch counter."""

    def __init__(self, gen_cfg: GeneratorConfig, disc_cfg: DiscriminatorConfig,
                 weights: LossWeights, cfg: TrainConfig, perceptual=None, dtype=torch.float32,
                 device="cpu"):
        self.gen_cfg, self.disc_cfg, self.weights, self.cfg = gen_cfg, disc_cfg, weights, cfg
        self.perceptual = perceptual
        self.dtype = dtype
        self.device = torch.device(device)
        # weights are drawn on the CPU so every device starts from the same init
        self.G = init_weights(UNetGenerator(gen_cfg), cfg.seed, cfg.init_std).to(self.device, dtype)
        self.D = init_weights(MultiScaleDiscriminator(disc_cfg), cfg.seed + 1, cfg.init_std).to(self.device, dtype)
        if perceptual is not None:
            perceptual.to(self.device, dtype)
        self.opt_g = torch.optim.Adam(self.G.parameters(), lr=cfg.lr_initial, betas=cfg.betas)
        self.opt_d = torch.optim.Adam(self.D.parameters(), lr=cfg.lr_initial, betas=cfg.betas)
        self.epoch = 0

    def _set_lr(self, lr):
        for opt in (self.opt_g, self.opt_d):
            for group in opt.param_groups:
                group["lr"] = lr

    def step(self, sample: TrainingSample) -> dict:
        x, y = (t.to(self.device) for t in sample.tensors(self.dtype))
        fake = self.G(x)
        ld = loss_discriminator(self.D(y, x), self.D(fake.detach(), x), self.cfg.d_loss_factor)
        self.opt_d.zero_grad(set_to_none=True)
        ld.backward()
        self.opt_d.step()
        lg, terms = loss_generator(x, y, fake, self.D, self.weights, self.perceptual)
        self.opt_g.zero_grad(set_to_none=True)
        lg.backward()
        self.opt_g.step()
        out = {"d": ld.item(), "g_total": lg.item()}
        out.update({k: v.item() for k, v in terms.items()})
        for name, value in out.items():
            if not math.isfinite(value):
                raise NonFiniteLossError(f"non-finite {name} loss on frame {sample.frame_id}")
        return out

    def train_epoch(self, samples) -> EpochReport:
        """One pass over ``samples`` in a seeded order; returns mean losses."""
        samples = list(samples)
        if not samples:
            raise ValueError("empty training set")
        epoch = self.epoch + 1
        lr = learning_rate(epoch, self.cfg)
        self._set_lr(lr)
        torch.manual_seed(_epoch_seed(self.cfg.seed, epoch))
        order = np.random.default_rng([self.cfg.seed, epoch]).permutation(len(samples))
        self.G.train()
        self.D.train()
        t0 = time.perf_counter()
        sums = dict.fromkeys(TERMS, 0.0)
        for i in order:
            for k, v in self.step(samples[i]).items():
                sums[k] += v
        self.epoch = epoch
        return EpochReport(epoch, {k: v / len(samples) for k, v in sums.items()}, lr,
                           time.perf_counter() - t0)

    @torch.no_grad()
    def generate(self, flm: np.ndarray) -> np.ndarray:
        """Inference-mode forward pass of one (1, H, W) FLM."""
        was = self.G.training
        self.G.eval()
        out = self.G(torch.from_numpy(np.asarray(flm, np.float32))[None].to(self.device, self.dtype))
        self.G.train(was)
        return out[0].float().cpu().numpy()

    def eval_l1(self, samples) -> float:
        if not samples:
            return float("nan")
        return float(np.mean([np.abs(self.generate(s.flm) - s.target).mean() for s in samples]))

    # --- checkpoints ---------------------------------------------------------

    def state(self, extra=None) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "epoch": self.epoch,
            "generator": self.G.state_dict(),
            "discriminator": self.D.state_dict(),
            "opt_g": self.opt_g.state_dict(),
            "opt_d": self.opt_d.state_dict(),
            "config": dict(extra or {}),
            "rng": {"torch": torch.get_rng_state(), "seed": self.cfg.seed},
        }

    def save(self, path, config: dict | None = None) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        torch.save(self.state(config), tmp)
        tmp.replace(path)

    def restore(self, blob: dict) -> None:
        self.G.load_state_dict(blob["generator"])
        self.D.load_state_dict(blob["discriminator"])
        self.opt_g.load_state_dict(blob["opt_g"])
        self.opt_d.load_state_dict(blob["opt_d"])
        self.epoch = int(blob["epoch"])
        torch.set_rng_state(blob["rng"]["torch"])


def default_device() -> str:
    """Accelerator named by ``RGBDFACE_DEVICE`` (e.g. ``cuda:0``), CPU otherwise."""
    return os.environ.get("RGBDFACE_DEVICE", "cpu")


def read_checkpoint(path) -> dict:
    """Load and version-check a checkpoint container."""
    try:
        blob = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise
    except Exception as exc:  # truncated or foreign file
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(blob, dict) or blob.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if blob.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version mismatch: expected {CHECKPOINT_VERSION}, found {blob.get('version')}"
        )
    return blob


def set_deterministic(flag: bool = True) -> None:
    torch.use_deterministic_algorithms(flag)
    if flag:
        torch.set_num_threads(1)


@dataclass
class TrainResult:
    trainer: Trainer
    reports: list = field(default_factory=list)
    checkpoint: Path | None = None


def run_training(train_samples, trainer: Trainer, out_dir, config_snapshot: dict | None = None,
                 val_samples=None, stop_after: int | None = None, on_epoch=None) -> TrainResult:
    """Train ``trainer`` from its current epoch to ``cfg.epochs``.

    Writes ``train_log.jsonl`` (one EpochReport per line), periodic
    ``epoch_XXXX.pt`` checkpoints (last ``keep_last`` kept), ``best.pt`` by
    validation L1 when ``val_samples`` is given, and ``last.pt``.
    ``stop_after`` ends the run early after that epoch (used for resume tests).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = trainer.cfg
    result = TrainResult(trainer)
    best = math.inf
    periodic: list[Path] = sorted(out_dir.glob("epoch_*.pt"))
    last_epoch = cfg.epochs if stop_after is None else min(stop_after, cfg.epochs)
    with open(out_dir / "train_log.jsonl", "a") as log_fh:
        while trainer.epoch < last_epoch:
            report = trainer.train_epoch(train_samples)
            result.reports.append(report)
            log_fh.write(report.to_json() + "\n")
            log_fh.flush()
            log.info("epoch %d lr %.6g losses %s", report.epoch, report.lr, report.losses)
            if on_epoch is not None:
                on_epoch(report)
            if report.epoch % cfg.checkpoint_every == 0:
                path = out_dir / f"epoch_{report.epoch:04d}.pt"
                trainer.save(path, config_snapshot)
                periodic.append(path)
                while len(periodic) > cfg.keep_last:
                    periodic.pop(0).unlink(missing_ok=True)
                if val_samples:
                    val = trainer.eval_l1(val_samples)
                    if val < best:
                        best = val
                        trainer.save(out_dir / "best.pt", config_snapshot)
    result.checkpoint = out_dir / "last.pt"
    trainer.save(result.checkpoint, config_snapshot)
    return result
