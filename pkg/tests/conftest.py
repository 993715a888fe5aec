import contextlib
import time

import numpy as np
import pytest

from rgbdface.cli import landmarks_stage, preprocess_stage
from rgbdface.synthetic import make_toy_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    """Eight synthetic frames taken through preprocess and landmarks at 64x64."""
    root = tmp_path_factory.mktemp("toy")
    layout = make_toy_dataset(root)
    preprocess_stage(layout)
    landmarks_stage(layout, "replay", size=64)
    return layout


@pytest.fixture(scope="session")
def small_checkpoint(tmp_path_factory):
    """A 32x32 toy-config checkpoint after two epochs on random samples.

    Returns ``(path, trainer)`` so tests can compare against the in-memory model.
    """
    from rgbdface.config import toy_config
    from rgbdface.perceptual import make_perceptual
    from rgbdface.training import Trainer, TrainingSample, run_training

    cfg = toy_config(32, 2)
    rng = np.random.default_rng(7)
    data = [TrainingSample(i, np.where(rng.random((1, 32, 32)) < 0.1, 1.0, -1.0).astype(np.float32),
                           rng.uniform(-1, 1, (4, 32, 32)).astype(np.float32)) for i in range(2)]
    tr = Trainer(cfg.generator, cfg.discriminator, cfg.loss, cfg.train, make_perceptual(cfg.perceptual))
    out = tmp_path_factory.mktemp("ckpt")
    res = run_training(data, tr, out, cfg.to_flat())
    return res.checkpoint, tr


# --- acceptance verdict lines -----------------------------------------------------

VERDICTS = []


class _Criterion:
    def __init__(self, number, title):
        self.number, self.title, self.detail = number, title, ""


@pytest.fixture
def criterion(capsys):
    """Context manager that prints one PASS/FAIL line for an acceptance criterion."""

    @contextlib.contextmanager
    def run(number, title):
        c = _Criterion(number, title)
        t0 = time.perf_counter()
        ok = False
        try:
            yield c
            ok = True
        except Exception as exc:
            c.detail = c.detail or f"{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
            raise
        finally:
            line = (f"{'PASS' if ok else 'FAIL'} criterion {number:2d} {title}"
                    f" [{time.perf_counter() - t0:.1f}s] {c.detail}")
            VERDICTS.append((number, line))
            with capsys.disabled():
                print("\n" + line)

    return run


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(VERDICTS):
            terminalreporter.write_line(line)
