"""Conditional GAN: U-Net generator (1-channel FLM -> 4-channel RGBD), three
patch discriminators on 5-channel input at full, 1/2 and 1/4 resolution,
and the least-squares / feature-matching / L1 / perceptual loss stack."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import torch
from torch import nn


@dataclass
class GeneratorConfig:
    in_channels: int = 1
    out_channels: int = 4
    image_size: int = 512
    base_width: int = 64
    depth: int = 8
    dropout_stages: tuple = (0, 1, 2)  # decoder stages counted from the innermost
    dropout_rate: float = 0.5

    def __post_init__(self):
        self.dropout_stages = tuple(self.dropout_stages)
        if self.out_channels != 4:
            raise ValueError("generator must emit exactly 4 channels (RGB + depth)")
        if self.depth < 1 or self.image_size % (2 ** self.depth):
            raise ValueError(f"image_size {self.image_size} not divisible by 2**{self.depth}")


@dataclass
class DiscriminatorConfig:
    in_channels: int = 5
    num_scales: int = 3
    layers_per_scale: int = 3
    base_width: int = 64

    def __post_init__(self):
        if self.in_channels != 5:
            raise ValueError("discriminator input is RGBD + FLM = 5 channels")
        if self.num_scales != 3:
            raise ValueError("exactly three discriminator scales are used")


@dataclass
class LossWeights:
    lambda_FM: float = 10.0
    lambda_L1: float = 100.0
    lambda_LPIPS: float = 10.0

    def __post_init__(self):
        if min(self.lambda_FM, self.lambda_L1, self.lambda_LPIPS) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class PatchResponse:
    scores: list  # one (N, 1, h_k, w_k) tensor per scale
    features: list = field(default_factory=list)  # per scale: intermediate activations


def _norm(c):
    return nn.InstanceNorm2d(c, affine=False, track_running_stats=False)


class UNetGenerator(nn.Module):
    def __init__(self, cfg: GeneratorConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or GeneratorConfig()
        d = cfg.depth
        widths = [min(cfg.base_width * 2 ** i, cfg.base_width * 8) for i in range(d)]
        self.encoders = nn.ModuleList()
        for i in range(d):
            layers = [] if i == 0 else [nn.LeakyReLU(0.2)]
            layers.append(nn.Conv2d(cfg.in_channels if i == 0 else widths[i - 1], widths[i], 4, 2, 1))
            if 0 < i < d - 1:
                layers.append(_norm(widths[i]))
            self.encoders.append(nn.Sequential(*layers))
        self.decoders = nn.ModuleList()
        for j in range(d):
            skip = d - 1 - j
            c_in = widths[skip] if j == 0 else 2 * widths[skip]
            outermost = j == d - 1
            c_out = cfg.out_channels if outermost else widths[skip - 1]
            layers = [nn.ReLU(), nn.ConvTranspose2d(c_in, c_out, 4, 2, 1)]
            if outermost:
                layers.append(nn.Tanh())
            else:
                layers.append(_norm(c_out))
                if j in cfg.dropout_stages:
                    layers.append(nn.Dropout(cfg.dropout_rate))
            self.decoders.append(nn.Sequential(*layers))

    def forward(self, x):
        c, s = self.cfg.in_channels, self.cfg.image_size
        if x.dim() != 4 or tuple(x.shape[1:]) != (c, s, s):
            raise ValueError(f"generator expects (N, {c}, {s}, {s}), got {tuple(x.shape)}")
        skips = []
        h = x
        for enc in self.encoders:
            h = enc(h)
            skips.append(h)
        h = self.decoders[0](skips[-1])
        for j in range(1, len(self.decoders)):
            h = self.decoders[j](torch.cat([h, skips[-1 - j]], dim=1))
        return h


class PatchDiscriminator(nn.Module):
    """Strided 4x4 convolutions ending in a one-channel patch score map."""

    kernel = 4
    padding = 2

    def __init__(self, in_channels=5, base_width=64, n_layers=3):
        super().__init__()
        k, p = self.kernel, self.padding
        nf = base_width
        blocks = [nn.Sequential(nn.Conv2d(in_channels, nf, k, 2, p), nn.LeakyReLU(0.2))]
        for _ in range(1, n_layers):
            prev, nf = nf, min(nf * 2, 512)
            blocks.append(nn.Sequential(nn.Conv2d(prev, nf, k, 2, p), _norm(nf), nn.LeakyReLU(0.2)))
        prev, nf = nf, min(nf * 2, 512)
        blocks.append(nn.Sequential(nn.Conv2d(prev, nf, k, 1, p), _norm(nf), nn.LeakyReLU(0.2)))
        blocks.append(nn.Sequential(nn.Conv2d(nf, 1, k, 1, p)))
        self.blocks = nn.ModuleList(blocks)

    @classmethod
    def strides(cls, n_layers=3):
        return [2] * n_layers + [1, 1]

    def forward(self, x):
        feats = []
        for block in self.blocks[:-1]:
            x = block(x)
            feats.append(x)
        return self.blocks[-1](x), feats


class MultiScaleDiscriminator(nn.Module):
    def __init__(self, cfg: DiscriminatorConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or DiscriminatorConfig()
        self.scales = nn.ModuleList(
            [PatchDiscriminator(cfg.in_channels, cfg.base_width, cfg.layers_per_scale)
             for _ in range(cfg.num_scales)]
        )
        self.downsample = nn.AvgPool2d(3, stride=2, padding=1, count_include_pad=False)

    def forward(self, rgbd, flm) -> PatchResponse:
        if rgbd.dim() != 4 or rgbd.shape[1] != 4 or flm.dim() != 4 or flm.shape[1] != 1:
            raise ValueError("discriminator expects (N, 4, H, W) RGBD and (N, 1, H, W) FLM")
        if rgbd.shape[0] != flm.shape[0] or rgbd.shape[2:] != flm.shape[2:]:
            raise ValueError(f"RGBD {tuple(rgbd.shape)} and FLM {tuple(flm.shape)} are misaligned")
        x = torch.cat([rgbd, flm], dim=1)
        scores, feats = [], []
        for k, disc in enumerate(self.scales):
            if k:
                x = self.downsample(x)
            s, f = disc(x)
            scores.append(s)
            feats.append(f)
        return PatchResponse(scores, feats)


def conv_out(n: int, kernel: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - kernel) // stride + 1


def init_weights(net: nn.Module, seed: int, std: float = 0.02) -> nn.Module:
    """Draw every (transposed) convolution weight from N(0, std^2); zero the biases."""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for m in net.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
                m.weight.normal_(0.0, std, generator=g)
                if m.bias is not None:
                    m.bias.zero_()
    return net


def state_hash(*modules) -> str:
    """SHA-256 over the bytes of every tensor in the given modules' state dicts."""
    h = hashlib.sha256()
    for m in modules:
        sd = m.state_dict() if hasattr(m, "state_dict") else m
        for name in sorted(sd):
            t = sd[name]
            h.update(name.encode())
            if torch.is_tensor(t):
                h.update(t.detach().cpu().contiguous().numpy().tobytes())
            else:
                h.update(repr(t).encode())
    return h.hexdigest()


# --- losses -------------------------------------------------------------------

D_LOSS_FACTOR = 0.5


def lsgan_scale_terms(real: PatchResponse, fake: PatchResponse):
    """Per-scale mean((real - 1)^2) + mean(fake^2)."""
    return [((r - 1) ** 2).mean() + (f ** 2).mean() for r, f in zip(real.scores, fake.scores)]


def loss_discriminator(real: PatchResponse, fake: PatchResponse, factor: float = D_LOSS_FACTOR):
    """Least-squares discriminator loss summed over scales, scaled by ``factor`` (0.5)."""
    return factor * sum(lsgan_scale_terms(real, fake))


def feature_matching(real: PatchResponse, fake: PatchResponse):
    """Per scale: mean over layers of the mean absolute feature difference.

    Real features are treated as constants.
    """
    out = []
    for fr, ff in zip(real.features, fake.features):
        out.append(sum((a.detach() - b).abs().mean() for a, b in zip(fr, ff)) / len(fr))
    return out


def loss_generator(flm, y_real, fake, disc: MultiScaleDiscriminator, weights: LossWeights,
                   perceptual=None):
    """Generator objective and its weighted breakdown.

    total = sum_k [LSGAN_G_k + lambda_FM FM_k] + lambda_L1 L1 + lambda_LPIPS LPIPS(rgb)

    Returns ``(total, terms)`` where ``terms`` maps adv/fm/l1/lpips to the
    weighted contributions; ``total`` is their sum.
    """
    if weights.lambda_LPIPS > 0 and perceptual is None:
        raise ValueError("a perceptual-distance handle is required when lambda_LPIPS > 0")
    resp_fake = disc(fake, flm)
    with torch.no_grad():
        resp_real = disc(y_real, flm)
    adv = sum(((s - 1) ** 2).mean() for s in resp_fake.scores)
    fm = sum(feature_matching(resp_real, resp_fake))
    l1 = (y_real - fake).abs().mean()
    terms = {
        "adv": adv,
        "fm": weights.lambda_FM * fm,
        "l1": weights.lambda_L1 * l1,
    }
    if weights.lambda_LPIPS > 0:
        terms["lpips"] = weights.lambda_LPIPS * perceptual(y_real[:, :3], fake[:, :3])
    else:
        terms["lpips"] = torch.zeros((), dtype=fake.dtype, device=fake.device)
    total = terms["adv"] + terms["fm"] + terms["l1"] + terms["lpips"]
    return total, terms
