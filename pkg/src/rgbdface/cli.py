"""``pipeline`` command line: one subcommand per stage plus ``run-all``.

Exit codes: 0 success, 1 validation failure (bad arguments, config or
dataset), 2 runtime failure. ``RGBDFACE_DEVICE`` selects the accelerator
(default ``cpu``).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import files
from .config import PipelineConfig, toy_config
from .dataset import DatasetLayout, PreflightError, preflight
from .evaluate import evaluate_dataset, write_report
from .infer import infer_paths, load_session
from .landmarks import label_dataset, make_detector
from .perceptual import make_perceptual
from .pointcloud import read_ply, render_turntable
from .preprocess import ConfigurationError, DepthWindow, RgbdFrame, preprocess_dataset
from .training import (
    CheckpointError,
    Trainer,
    default_device,
    load_samples,
    read_checkpoint,
    run_training,
    set_deterministic,
    split_dataset,
)

log = logging.getLogger("rgbdface")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
VALIDATION_ERRORS = (PreflightError, ConfigurationError, CheckpointError, FileNotFoundError)


class UsageError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        self.stage, self.cause = stage, cause
        super().__init__(f"stage '{stage}' failed: {cause}")


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which would collide with runtime failures
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        exc = exc.cause
    return EXIT_INVALID if isinstance(exc, (UsageError, *VALIDATION_ERRORS)) else EXIT_RUNTIME


def load_config(path) -> PipelineConfig:
    try:
        return PipelineConfig.load(path)
    except FileNotFoundError:
        raise
    except (ValueError, TypeError, SyntaxError) as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc


# --- stage functions -------------------------------------------------------------


def preprocess_stage(layout: DatasetLayout, near_mm: int | None = None):
    window = DepthWindow(near_mm) if near_mm is not None else layout.window()
    ids = preprocess_dataset(layout.raw, layout.processed, window, layout.calibration())
    layout.update_meta(window__near_mm=window.near_mm)
    return ids


def landmarks_stage(layout: DatasetLayout, backend: str, size: int = 512, square: bool = True,
                    annotations=None, workers: int = 1):
    detector = make_detector(backend, annotations or layout.raw)
    done = label_dataset(layout.processed, layout.flm, detector, size=size, square=square,
                         workers=workers, window=layout.window())
    skipped = sorted(set(files.frame_ids(layout.processed, "color")) - set(done))
    layout.update_meta(landmarks__skipped=skipped, landmarks__size=size)
    return done, skipped


def ensure_split(layout: DatasetLayout, frames, cfg: PipelineConfig):
    split = layout.split()
    if split is None:
        train, test = split_dataset(sorted(frames), cfg.train)
        split = sorted(train), sorted(test)
        layout.update_meta(split__train=split[0], split__test=split[1])
    return split


def train_stage(layout: DatasetLayout, cfg: PipelineConfig, out_dir, resume=None, device=None):
    rep = preflight(layout)
    rep.raise_for_problems()
    size = files.read_gray(layout.flm, rep.frames[0], "flm").shape[0]
    if size != cfg.generator.image_size:
        raise ConfigurationError(
            f"dataset frames are {size}x{size} but generator.image_size is {cfg.generator.image_size}"
        )
    cfg.window = layout.window(cfg.window)
    train_ids, test_ids = ensure_split(layout, rep.frames, cfg)
    trainer = Trainer(cfg.generator, cfg.discriminator, cfg.loss, cfg.train,
                      make_perceptual(cfg.perceptual), device=device or default_device())
    if resume is not None:
        trainer.restore(read_checkpoint(resume))
    result = run_training(load_samples(layout.flm, train_ids), trainer, out_dir, cfg.to_flat(),
                          val_samples=load_samples(layout.flm, test_ids))
    return result.checkpoint


def eval_stage(ckpt, layout: DatasetLayout, out_dir, jpeg: bool = False, figures: bool = True):
    split = layout.split()
    if split is None:
        raise ConfigurationError(f"{layout.meta_path}: no split.train/split.test entries")
    train_ids, test_ids = split
    session = load_session(ckpt)
    items = []
    for fid in test_ids:
        truth = RgbdFrame(files.read_color(layout.flm, fid), files.read_depth8(layout.flm, fid),
                          session.window, fid)
        items.append((fid, files.read_gray(layout.flm, fid, "flm"), truth))
    perceptual = make_perceptual(session.config.perceptual)
    records, summary, frames = evaluate_dataset(items, session, perceptual, train_ids, jpeg=jpeg)
    write_report(records, summary, frames, out_dir, session.camera, figures=figures)
    # wall-clock numbers stay out of summary.json so reruns compare bitwise
    timing = {"mean_latency_s": session.mean_latency(), "n": len(session.timings()),
              "device": str(session.device)}
    (Path(out_dir) / "timing.json").write_text(json.dumps(timing, indent=1) + "\n")
    return summary


def preview_stage(ply, angle: float, out, size: int = 512):
    img = render_turntable(read_ply(ply), angle % 360.0, size)
    files.write_image_file(out, img)
    return img


def new_run_dir(runs_root) -> Path:
    """``<runs_root>/<timestamp>-<n>``; never reuses an existing directory."""
    runs_root = Path(runs_root)
    runs_root.mkdir(parents=True, exist_ok=True)
    stamp = time.strftime("%Y%m%d-%H%M%S")
    n = 0
    while True:
        path = runs_root / f"{stamp}-{n}"
        try:
            path.mkdir()
            return path
        except FileExistsError:
            n += 1


def end_to_end(data_dir, cfg: PipelineConfig, runs_root, backend: str = "replay",
               figures: bool = True) -> tuple[Path, dict]:
    """Every stage from raw frames to an evaluation report in a fresh run directory.

    The run directory holds ``config.cfg``, ``dataset/`` (processed frames,
    FLMs and meta; raw frames are read in place), ``train/``, ``eval/`` and
    ``preview/``.
    """
    source = DatasetLayout(data_dir)
    if not source.raw.is_dir():
        raise FileNotFoundError(f"{source.raw} does not exist")
    run = new_run_dir(runs_root)
    cfg.save(run / "config.cfg")
    layout = DatasetLayout(run / "dataset", raw=source.raw)
    layout.root.mkdir()
    if source.meta_path.exists():
        meta = source.read_meta()
        keep = {k: v for k, v in meta.items() if k.startswith(("window.", "calibration."))}
        layout.update_meta(**{k.replace(".", "__"): v for k, v in keep.items()})

    def stage(name, fn, *args, **kwargs):
        log.info("run-all: %s", name)
        try:
            return fn(*args, **kwargs)
        except Exception as exc:
            raise StageError(name, exc) from exc

    stage("preprocess", preprocess_stage, layout)
    stage("landmarks", landmarks_stage, layout, backend, cfg.generator.image_size, cfg.square_crop)
    stage("preflight", lambda: preflight(layout).raise_for_problems())
    ckpt = stage("train", train_stage, layout, cfg, run / "train")
    summary = stage("eval", eval_stage, ckpt, layout, run / "eval", figures=figures)

    def previews():
        session = load_session(ckpt)
        fid = layout.split()[1][0]
        infer_paths(session, files.path_for(layout.flm, fid, "flm"), run / "preview", ply=True)
        ply = files.path_for(run / "preview", fid, "gen", "ply")
        for angle in (30, 90):
            preview_stage(ply, angle, run / "preview" / f"{fid:06d}_turntable_{angle}.png",
                          cfg.generator.image_size)

    stage("preview", previews)
    return run, summary


# --- argument parsing ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pipeline", description="Landmark-to-RGBD face synthesis pipeline.")
    p.add_argument("--deterministic", action="store_true",
                   help="use deterministic kernels (single-threaded)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("preprocess", help="register, clip, quantise and sharpen raw frames")
    s.add_argument("--in", dest="inp", required=True, help="raw frame directory")
    s.add_argument("--out", required=True, help="processed frame directory")
    s.add_argument("--near-mm", type=int, required=True)
    s.add_argument("--meta", help="meta file with calibration (default: <out>/../meta)")

    s = sub.add_parser("landmarks", help="detect landmarks, crop and render FLMs")
    s.add_argument("--in", dest="inp", required=True, help="dataset root")
    s.add_argument("--backend", default="replay", choices=("replay", "fan"))
    s.add_argument("--annotations", help="replay annotation directory (default: <in>/raw)")
    s.add_argument("--size", type=int, default=512)
    s.add_argument("--no-square", action="store_true")
    s.add_argument("--workers", type=int, default=1)

    s = sub.add_parser("train", help="train the generator and discriminators")
    s.add_argument("--data", required=True, help="dataset root")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True, help="checkpoint directory")
    s.add_argument("--resume", help="checkpoint to continue from")
    s.add_argument("--deterministic", action="store_true", default=argparse.SUPPRESS)

    s = sub.add_parser("infer", help="synthesise RGBD frames from FLMs")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--flm", required=True, help="FLM image or directory")
    s.add_argument("--out", required=True)
    s.add_argument("--ply", action="store_true", help="also write point clouds")

    s = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True, help="dataset root")
    s.add_argument("--out", required=True, help="report directory")
    s.add_argument("--jpeg", action="store_true", help="add the JPEG-equivalence baseline")
    s.add_argument("--no-figures", action="store_true")

    s = sub.add_parser("preview", help="render a turntable view of a point cloud")
    s.add_argument("--ply", required=True)
    s.add_argument("--angle", type=float, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--size", type=int, default=512)

    s = sub.add_parser("preflight", help="validate a dataset")
    s.add_argument("--data", required=True)

    s = sub.add_parser("run-all", help="all stages into a new run directory")
    s.add_argument("--data", required=True, help="dataset root with raw/ and meta")
    s.add_argument("--config", help="config file (default: toy config)")
    s.add_argument("--runs", default="runs")
    s.add_argument("--backend", default="replay", choices=("replay", "fan"))
    s.add_argument("--no-figures", action="store_true")

    s = sub.add_parser("make-toy", help="write a synthetic toy dataset")
    s.add_argument("--out", required=True)
    s.add_argument("-n", type=int, default=8)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--write-config", help="also write a toy config here")
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--epochs", type=int, default=20)
    return p


def _run(args) -> None:
    cmd = args.command
    if cmd == "preprocess":
        out = Path(args.out)
        meta = Path(args.meta) if args.meta else out.parent / "meta"
        layout = DatasetLayout(meta.parent, raw=args.inp)
        layout.processed, layout.meta_path = out, meta
        ids = preprocess_stage(layout, args.near_mm)
        print(f"preprocessed {len(ids)} frames -> {out}")
    elif cmd == "landmarks":
        layout = DatasetLayout(args.inp)
        done, skipped = landmarks_stage(layout, args.backend, args.size, not args.no_square,
                                        args.annotations, args.workers)
        print(f"labelled {len(done)} frames, skipped {skipped}")
    elif cmd == "train":
        ckpt = train_stage(DatasetLayout(args.data), load_config(args.config), args.out, args.resume)
        print(f"checkpoint: {ckpt}")
    elif cmd == "infer":
        ids = infer_paths(load_session(args.ckpt), args.flm, args.out, ply=args.ply)
        print(f"synthesised {len(ids)} frames -> {args.out}")
    elif cmd == "eval":
        summary = eval_stage(args.ckpt, DatasetLayout(args.data), args.out, args.jpeg,
                             not args.no_figures)
        print(json.dumps(summary, sort_keys=True, indent=1))
    elif cmd == "preview":
        preview_stage(args.ply, args.angle, args.out, args.size)
        print(f"wrote {args.out}")
    elif cmd == "preflight":
        rep = preflight(DatasetLayout(args.data))
        rep.raise_for_problems()
        print(f"preflight ok: {len(rep.frames)} frames")
    elif cmd == "run-all":
        cfg = load_config(args.config) if args.config else toy_config()
        run, summary = end_to_end(args.data, cfg, args.runs, args.backend, not args.no_figures)
        print(f"run directory: {run}")
        print(json.dumps(summary, sort_keys=True, indent=1))
    elif cmd == "make-toy":
        from .synthetic import make_toy_dataset

        if Path(args.out).exists() and any(Path(args.out).iterdir()):
            raise UsageError(f"{args.out} exists and is not empty")
        make_toy_dataset(args.out, n=args.n, seed=args.seed)
        if args.write_config:
            toy_config(args.size, args.epochs, args.seed).save(args.write_config)
        print(f"toy dataset -> {args.out}")


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.deterministic:
        set_deterministic(True)
    try:
        _run(args)
    except Exception as exc:  # noqa: BLE001 - mapped onto the exit-code contract
        code = exit_code(exc)
        print(f"error: {exc}", file=sys.stderr)
        if args.verbose:
            log.exception("details")
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
