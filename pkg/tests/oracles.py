"""Independent reference computations shared by the unit and acceptance tests.

Everything here is written from the definitions, with plain loops where
that is practical, and never calls the code under test for the quantity
being checked.
"""

import math

import numpy as np
import torch

# --- conv shape arithmetic --------------------------------------------------------


def conv_len(n, k, s, p):
    return math.floor((n + 2 * p - k) / s) + 1


def patch_shapes(size, n_scales=3, n_layers=3, k=4, p=2):
    """Score-map side length per scale: strided convs, two stride-1 convs,
    and a 3x3/2 average pool (padding 1) between scales."""
    out = []
    n = size
    for scale in range(n_scales):
        if scale:
            n = conv_len(n, 3, 2, 1)
        m = n
        for s in [2] * n_layers + [1, 1]:
            m = conv_len(m, k, s, p)
        out.append(m)
    return out


# --- losses -----------------------------------------------------------------------


def _flat(t):
    return [float(v) for v in t.detach().double().reshape(-1).tolist()]


def mean_loop(values):
    total = 0.0
    for v in values:
        total += v
    return total / len(values)


def d_loss_loop(real_scores, fake_scores, factor=0.5):
    total = 0.0
    for r, f in zip(real_scores, fake_scores):
        total += mean_loop([(v - 1.0) ** 2 for v in _flat(r)]) + mean_loop([v * v for v in _flat(f)])
    return factor * total


def perceptual_numpy(handle, a, b):
    """Unit-normalised feature differences, written against the handle's raw layers."""
    total = 0.0
    fa, fb = handle.features(a), handle.features(b)
    for layer, (xa, xb) in enumerate(zip(fa, fb)):
        xa, xb = xa.detach().double().numpy(), xb.detach().double().numpy()
        na = xa / (np.sqrt((xa ** 2).sum(axis=1, keepdims=True)) + 1e-10)
        nb = xb / (np.sqrt((xb ** 2).sum(axis=1, keepdims=True)) + 1e-10)
        w = handle.channel_weights[layer].detach().double().numpy()[None, :, None, None]
        total += (w * (na - nb) ** 2).sum(axis=1).mean(axis=(1, 2)).mean()
    return total


def g_terms_loop(real_resp, fake_resp, y_real, fake, weights, perceptual):
    adv = sum(mean_loop([(v - 1.0) ** 2 for v in _flat(s)]) for s in fake_resp.scores)
    fm = 0.0
    for fr, ff in zip(real_resp.features, fake_resp.features):
        per_layer = [mean_loop([abs(a - b) for a, b in zip(_flat(x), _flat(y))]) for x, y in zip(fr, ff)]
        fm += sum(per_layer) / len(per_layer)
    l1 = mean_loop([abs(a - b) for a, b in zip(_flat(y_real), _flat(fake))])
    lp = perceptual_numpy(perceptual, y_real[:, :3], fake[:, :3]) if perceptual is not None else 0.0
    return {
        "adv": adv,
        "fm": weights.lambda_FM * fm,
        "l1": weights.lambda_L1 * l1,
        "lpips": weights.lambda_LPIPS * lp,
    }


# --- SSIM -------------------------------------------------------------------------


def ssim_loop(a, b, size=11, sigma=1.5, L=255.0):
    """Windowed SSIM by direct summation over every valid window (BT.601 luma)."""
    def luma(x):
        x = np.asarray(x, np.float64)
        return x if x.ndim == 2 else 0.299 * x[..., 0] + 0.587 * x[..., 1] + 0.114 * x[..., 2]

    x, y = luma(a), luma(b)
    r = size // 2
    g1 = [math.exp(-((i - r) ** 2) / (2 * sigma * sigma)) for i in range(size)]
    s = sum(g1)
    g1 = [v / s for v in g1]
    c1, c2 = (0.01 * L) ** 2, (0.03 * L) ** 2
    h, w = x.shape
    vals = []
    for i in range(h - size + 1):
        for j in range(w - size + 1):
            px = x[i:i + size, j:j + size]
            py = y[i:i + size, j:j + size]
            wts = np.outer(g1, g1)
            mx, my = float((wts * px).sum()), float((wts * py).sum())
            vx = float((wts * px * px).sum()) - mx * mx
            vy = float((wts * py * py).sum()) - my * my
            cxy = float((wts * px * py).sum()) - mx * my
            vals.append(((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return sum(vals) / len(vals)


# --- finite differences -------------------------------------------------------------


def gradient_check(loss_fn, params, n_samples, rng, eps=1e-7, floor=1e-7):
    """Compare autograd against central differences on ``n_samples`` random scalars.

    ``params`` are float64 leaf tensors. Returns the list of
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.
    The L1, feature-matching and ReLU terms are piecewise linear; a small
    step keeps the difference quotient from straddling their kinks.
    """
    for p in params:
        p.grad = None
    loss_fn().backward()
    analytic = [p.grad.detach().clone() for p in params]
    sizes = np.array([p.numel() for p in params])
    errors = []
    for _ in range(n_samples):
        k = int(rng.choice(len(params), p=sizes / sizes.sum()))
        idx = int(rng.integers(sizes[k]))
        flat = params[k].data.view(-1)
        orig = flat[idx].item()
        with torch.no_grad():
            flat[idx] = orig + eps
            up = float(loss_fn())
            flat[idx] = orig - eps
            down = float(loss_fn())
            flat[idx] = orig
        num = (up - down) / (2 * eps)
        ana = float(analytic[k].view(-1)[idx])
        errors.append(abs(ana - num) / max(abs(ana), abs(num), floor))
    return errors
