"""Learned-perceptual-distance handle used by the generator loss and evaluation.

Distance between two RGB images in [-1, 1]: for every backbone layer the
features are unit-normalised across channels, the squared difference is
weighted per channel, averaged over space and summed over layers.

``PerceptualDistance.random(seed)`` builds a fixed random-feature backbone
that is only meant for regression tests; real quality numbers need weights
loaded with ``PerceptualDistance.load``.
"""

from __future__ import annotations

import torch
from torch import nn

DEFAULT_WIDTHS = (16, 32, 64)


class PerceptualDistance(nn.Module):
    def __init__(self, widths=DEFAULT_WIDTHS):
        super().__init__()
        self.widths = tuple(widths)
        layers = []
        c_in = 3
        for i, c in enumerate(self.widths):
            layers.append(nn.Sequential(
                nn.Conv2d(c_in, c, 3, stride=1 if i == 0 else 2, padding=1),
                nn.LeakyReLU(0.2),
            ))
            c_in = c
        self.layers = nn.ModuleList(layers)
        self.channel_weights = nn.ParameterList(
            [nn.Parameter(torch.ones(c), requires_grad=False) for c in self.widths]
        )
        self.requires_grad_(False)
        self.eval()

    @classmethod
    def random(cls, seed: int = 0, widths=DEFAULT_WIDTHS) -> "PerceptualDistance":
        net = cls(widths)
        g = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for m in net.modules():
                if isinstance(m, nn.Conv2d):
                    fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
                    m.weight.normal_(0.0, (2.0 / fan_in) ** 0.5, generator=g)
                    m.bias.zero_()
        return net

    @classmethod
    def load(cls, path) -> "PerceptualDistance":
        blob = torch.load(path, map_location="cpu", weights_only=True)
        net = cls(blob["widths"])
        net.load_state_dict(blob["state"])
        net.requires_grad_(False)
        return net

    def save(self, path) -> None:
        torch.save({"widths": list(self.widths), "state": self.state_dict()}, path)

    def features(self, x):
        out = []
        for layer in self.layers:
            x = layer(x)
            out.append(x)
        return out

    def forward(self, a, b):
        """Mean distance over the batch; inputs are (N, 3, H, W) in [-1, 1]."""
        if a.shape != b.shape or a.shape[1] != 3:
            raise ValueError(f"expected matching (N, 3, H, W) inputs, got {tuple(a.shape)}, {tuple(b.shape)}")
        total = a.new_zeros(a.shape[0])
        for fa, fb, w in zip(self.features(a), self.features(b), self.channel_weights):
            na = fa / (fa.pow(2).sum(dim=1, keepdim=True).sqrt() + 1e-10)
            nb = fb / (fb.pow(2).sum(dim=1, keepdim=True).sqrt() + 1e-10)
            d = ((na - nb) ** 2 * w.view(1, -1, 1, 1).to(a.dtype)).sum(dim=1)
            total = total + d.mean(dim=(1, 2))
        return total.mean()


def make_perceptual(spec: str) -> PerceptualDistance:
    """``random:<seed>`` or a path written by ``PerceptualDistance.save``."""
    if spec.startswith("random:"):
        return PerceptualDistance.random(int(spec.split(":", 1)[1]))
    return PerceptualDistance.load(spec)
