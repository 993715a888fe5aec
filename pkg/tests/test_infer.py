import threading

import numpy as np
import pytest

from rgbdface import files, infer
from rgbdface.infer import infer_paths, load_session
from rgbdface.pointcloud import read_ply
from rgbdface.preprocess import denormalize, normalize
from rgbdface.training import CheckpointError


def flm_image(seed=0, size=32):
    rng = np.random.default_rng(seed)
    return np.where(rng.random((size, size)) < 0.1, 255, 0).astype(np.uint8)


def test_session_holds_only_the_generator(small_checkpoint):
    session = load_session(small_checkpoint[0])
    assert session.manifest() == ["UNetGenerator"]
    assert session.timings() == []  # the validation pass is not logged
    assert not any(p.requires_grad for p in session.generator.parameters())


def test_matches_trainer_bit_for_bit(small_checkpoint):
    path, trainer = small_checkpoint
    session = load_session(path)
    for seed in range(3):
        flm = flm_image(seed)
        out = trainer.generate(normalize(flm)[None])
        frame = session.synthesize(flm)
        np.testing.assert_array_equal(frame.color, denormalize(out[:3].transpose(1, 2, 0)))
        np.testing.assert_array_equal(frame.depth8, denormalize(out[3]))


def test_synthesis_is_deterministic(small_checkpoint):
    a = load_session(small_checkpoint[0])
    b = load_session(small_checkpoint[0])
    flm = flm_image(1)
    fa, fb, fa2 = a.synthesize(flm), b.synthesize(flm), a.synthesize(flm)
    assert fa.color.tobytes() == fb.color.tobytes() == fa2.color.tobytes()
    assert fa.depth8.tobytes() == fb.depth8.tobytes() == fa2.depth8.tobytes()


def test_blank_flm_gives_valid_frame(small_checkpoint):
    frame = load_session(small_checkpoint[0]).synthesize(np.zeros((32, 32), np.uint8))
    assert frame.color.shape == (32, 32, 3) and frame.color.dtype == np.uint8
    assert frame.depth8.shape == (32, 32) and frame.depth8.dtype == np.uint8


def test_wrong_size_flm(small_checkpoint):
    with pytest.raises(ValueError, match="32x32"):
        load_session(small_checkpoint[0]).synthesize(np.zeros((64, 64), np.uint8))


def test_latency_log_is_bounded(small_checkpoint, monkeypatch):
    monkeypatch.setattr(infer, "TIMING_WINDOW", 5)
    session = load_session(small_checkpoint[0])
    for _ in range(8):
        session.synthesize(flm_image())
    t = session.timings()
    assert len(t) == 5 and all(v > 0 for v in t)
    assert session.mean_latency() == pytest.approx(sum(t) / 5, rel=1e-12)


def test_concurrent_callers(small_checkpoint):
    session = load_session(small_checkpoint[0])
    flm = flm_image(2)
    want = session.synthesize(flm).color
    results = []

    def worker():
        for _ in range(5):
            results.append(session.synthesize(flm).color)

    threads = [threading.Thread(target=worker) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(results) == 20 and all(np.array_equal(r, want) for r in results)
    assert len(session.timings()) == 21


def test_truncated_checkpoint(small_checkpoint, tmp_path):
    raw = small_checkpoint[0].read_bytes()
    (tmp_path / "t.pt").write_bytes(raw[:1000])
    with pytest.raises(CheckpointError):
        load_session(tmp_path / "t.pt")


def test_infer_paths_writes_frames_and_clouds(small_checkpoint, tmp_path):
    session = load_session(small_checkpoint[0])
    for fid in (3, 9):
        files.write_gray(tmp_path / "in", fid, flm_image(fid), "flm")
    ids = infer_paths(session, tmp_path / "in", tmp_path / "out", ply=True)
    assert ids == [3, 9]
    for fid in ids:
        frame = session.synthesize(flm_image(fid))
        np.testing.assert_array_equal(files.read_color(tmp_path / "out", fid, "gen_color"), frame.color)
        depth = files.read_depth8(tmp_path / "out", fid, "gen_depth8")
        np.testing.assert_array_equal(depth, frame.depth8)
        cloud = read_ply(files.path_for(tmp_path / "out", fid, "gen", "ply"))
        assert len(cloud.points) == np.count_nonzero(depth)


def test_infer_single_file(small_checkpoint, tmp_path):
    session = load_session(small_checkpoint[0])
    files.write_gray(tmp_path, 12, flm_image(), "flm")
    assert infer_paths(session, files.path_for(tmp_path, 12, "flm"), tmp_path / "o") == [12]
