"""Shared network building blocks: convolutional encoder/decoder and dense stacks.

Images are channels-last (..., 64, 64, 3) with pixel values in [-0.5, 0.5]; any number
of leading batch dimensions is accepted and restored on output.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

IMAGE_HW = 64
IMAGE_CHANNELS = 3


def mlp(in_dim: int, hidden: int, layers: int, out_dim: int) -> nn.Sequential:
    """ELU MLP with `layers` hidden layers and a linear output."""
    mods: list[nn.Module] = []
    dim = in_dim
    for _ in range(layers):
        mods += [nn.Linear(dim, hidden), nn.ELU()]
        dim = hidden
    mods.append(nn.Linear(dim, out_dim))
    return nn.Sequential(*mods)


def _flatten_leading(x: torch.Tensor, keep: int) -> tuple[torch.Tensor, tuple[int, ...]]:
    lead = x.shape[:-keep]
    return x.reshape((-1,) + x.shape[-keep:]), lead


class ConvEncoder(nn.Module):
    """Four stride-2 conv stages from 64x64 plus a linear projection to the embedding."""

    def __init__(self, embed_dim: int, base: int = 32):
        super().__init__()
        self.embed_dim = embed_dim
        self.convs = nn.ModuleList([
            nn.Conv2d(IMAGE_CHANNELS, base, 4, stride=2),
            nn.Conv2d(base, 2 * base, 4, stride=2),
            nn.Conv2d(2 * base, 4 * base, 4, stride=2),
            nn.Conv2d(4 * base, 8 * base, 4, stride=2),
        ])
        self.proj = nn.Linear(8 * base * 2 * 2, embed_dim)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        if images.ndim < 3 or images.shape[-3:] != (IMAGE_HW, IMAGE_HW, IMAGE_CHANNELS):
            raise ValueError(
                f"encoder expects (..., {IMAGE_HW}, {IMAGE_HW}, {IMAGE_CHANNELS}) images, "
                f"got {tuple(images.shape)}"
            )
        x, lead = _flatten_leading(images, 3)
        x = x.permute(0, 3, 1, 2)
        for conv in self.convs:
            x = F.elu(conv(x))
        e = self.proj(x.reshape(x.shape[0], -1))
        return e.reshape(lead + (self.embed_dim,))


class ConvDecoder(nn.Module):
    """Mirror of the encoder: latent feature -> 64x64x3 image mean."""

    def __init__(self, feature_dim: int, base: int = 32):
        super().__init__()
        self.base = base
        self.fc = nn.Linear(feature_dim, 32 * base)
        self.deconvs = nn.ModuleList([
            nn.ConvTranspose2d(32 * base, 4 * base, 5, stride=2),
            nn.ConvTranspose2d(4 * base, 2 * base, 5, stride=2),
            nn.ConvTranspose2d(2 * base, base, 6, stride=2),
            nn.ConvTranspose2d(base, IMAGE_CHANNELS, 6, stride=2),
        ])

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        x, lead = _flatten_leading(features, 1)
        x = self.fc(x).reshape(-1, 32 * self.base, 1, 1)
        for i, deconv in enumerate(self.deconvs):
            x = deconv(x)
            if i < len(self.deconvs) - 1:
                x = F.elu(x)
        x = x.permute(0, 2, 3, 1)
        return x.reshape(lead + (IMAGE_HW, IMAGE_HW, IMAGE_CHANNELS))
