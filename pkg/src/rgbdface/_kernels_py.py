"""Pure numpy implementations of the compiled kernels in ``_kernels.pyx``."""

import numpy as np


def pupil_objective(gx, gy, keep, weight):
    h, w = gx.shape
    ys, xs = np.nonzero(keep)
    n = ys.size
    out = np.zeros((h, w), dtype=np.float64)
    if n == 0:
        return out
    pgx = gx[ys, xs]
    pgy = gy[ys, xs]
    cols = np.arange(w, dtype=np.float64)[:, None]
    for ci in range(h):
        dx = xs[None, :] - cols
        dy = np.broadcast_to(ys[None, :] - float(ci), dx.shape)
        norm = np.sqrt(dx * dx + dy * dy)
        with np.errstate(invalid="ignore", divide="ignore"):
            dot = (dx * pgx + dy * pgy) / norm
        dot[norm == 0.0] = 0.0
        out[ci] = weight[ci] * (dot * dot).sum(axis=1) / n
    return out


def zbuffer_rects(x0, x1, y0, y1, z, height, width):
    out = np.full((height, width), -1, dtype=np.int64)
    a0 = np.clip(x0, 0, width)
    a1 = np.clip(x1, 0, width)
    b0 = np.clip(y0, 0, height)
    b1 = np.clip(y1, 0, height)
    nx = np.maximum(a1 - a0, 0)
    ny = np.maximum(b1 - b0, 0)
    counts = nx * ny
    total = int(counts.sum())
    if total == 0:
        return out
    owner = np.repeat(np.arange(z.size), counts)
    # position of each expanded pixel inside its owner's rect
    start = np.cumsum(counts) - counts
    local = np.arange(total) - np.repeat(start, counts)
    rect_w = nx[owner]
    u = a0[owner] + local % rect_w
    v = b0[owner] + local // rect_w
    pix = v * width + u
    order = np.lexsort((owner, z[owner], pix))
    pix_sorted = pix[order]
    first = np.ones(total, dtype=bool)
    first[1:] = pix_sorted[1:] != pix_sorted[:-1]
    out.ravel()[pix_sorted[first]] = owner[order][first]
    return out
