"""Both kernel backends against scalar-loop oracles."""

import numpy as np
import pytest

from rgbdface import kernels

BACKENDS = kernels.available_backends()


def pupil_oracle(gx, gy, keep, weight):
    h, w = gx.shape
    pts = [(y, x) for y in range(h) for x in range(w) if keep[y, x]]
    out = np.zeros((h, w))
    for cy in range(h):
        for cx in range(w):
            acc = 0.0
            for y, x in pts:
                dx, dy = x - cx, y - cy
                n = (dx * dx + dy * dy) ** 0.5
                if n > 0:
                    acc += ((dx * gx[y, x] + dy * gy[y, x]) / n) ** 2
            out[cy, cx] = weight[cy, cx] * acc / len(pts) if pts else 0.0
    return out


def zbuffer_oracle(x0, x1, y0, y1, z, h, w):
    out = np.full((h, w), -1, np.int64)
    best = np.full((h, w), np.inf)
    for i in range(len(z)):
        for v in range(max(y0[i], 0), min(y1[i], h)):
            for u in range(max(x0[i], 0), min(x1[i], w)):
                if z[i] < best[v, u]:  # strict: ties keep the lower index
                    best[v, u] = z[i]
                    out[v, u] = i
    return out


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_pupil_objective_matches_loop(name, rng):
    h, w = 9, 12
    ang = rng.uniform(0, 2 * np.pi, (h, w))
    gx, gy = np.cos(ang), np.sin(ang)
    keep = rng.random((h, w)) < 0.4
    weight = rng.uniform(0, 255, (h, w))
    got = kernels.pupil_objective(gx, gy, keep, weight, impl=BACKENDS[name])
    np.testing.assert_allclose(got, pupil_oracle(gx, gy, keep, weight), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_pupil_objective_empty_keep(name):
    z = np.zeros((4, 5))
    out = kernels.pupil_objective(z, z, np.zeros((4, 5), bool), np.ones((4, 5)), impl=BACKENDS[name])
    np.testing.assert_array_equal(out, 0.0)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_zbuffer_matches_loop(name, rng):
    n, h, w = 60, 13, 17
    x0 = rng.integers(-3, w, n)
    y0 = rng.integers(-3, h, n)
    x1 = x0 + rng.integers(-1, 5, n)
    y1 = y0 + rng.integers(-1, 5, n)
    z = rng.integers(0, 6, n).astype(float)  # many ties
    got = kernels.zbuffer_rects(x0, x1, y0, y1, z, h, w, impl=BACKENDS[name])
    np.testing.assert_array_equal(got, zbuffer_oracle(x0, x1, y0, y1, z, h, w))


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_zbuffer_no_rects(name):
    e = np.zeros(0)
    out = kernels.zbuffer_rects(e, e, e, e, e, 3, 4, impl=BACKENDS[name])
    np.testing.assert_array_equal(out, -1)


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled backend not built")
def test_backends_agree_on_large_inputs(rng):
    h, w = 30, 40
    ang = rng.uniform(0, 2 * np.pi, (h, w))
    keep = rng.random((h, w)) < 0.7
    weight = rng.uniform(0, 255, (h, w))
    args = (np.cos(ang), np.sin(ang), keep, weight)
    a = kernels.pupil_objective(*args, impl=BACKENDS["cython"])
    b = kernels.pupil_objective(*args, impl=BACKENDS["python"])
    np.testing.assert_allclose(a, b, rtol=1e-10)
    n = 5000
    x0, y0 = rng.integers(0, 200, n), rng.integers(0, 150, n)
    rect = (x0, x0 + rng.integers(1, 4, n), y0, y0 + rng.integers(1, 4, n), rng.uniform(0, 1, n))
    np.testing.assert_array_equal(kernels.zbuffer_rects(*rect, 150, 200, impl=BACKENDS["cython"]),
                                  kernels.zbuffer_rects(*rect, 150, 200, impl=BACKENDS["python"]))


def test_default_backend_is_reported():
    assert kernels.BACKEND in BACKENDS
