"""Fixed feature extractors backing the perceptual and pose/parsing losses.

Two kinds, both frozen during main training:

* a seeded random strided-conv pyramid standing in for a pretrained
  perceptual network (an externally supplied extractor can be plugged in
  through the same interface: callable image -> list of feature maps);
* small conv encoders pre-trained by this package itself on the synthetic
  data (frame -> pose volume, frame -> part masks) whose encoder features
  drive the pose/parsing feature loss.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn


class RandomFeaturePyramid(nn.Module):
    """Seed-initialized strided conv stack; returns one feature map per stage.

    Deterministic: two instances with the same seed produce identical
    features for identical inputs.
    """

    def __init__(self, in_channels: int = 3, n_stages: int = 5, base_channels: int = 16, seed: int = 0):
        super().__init__()
        self.seed = seed
        gen = torch.Generator().manual_seed(seed)
        chans = [in_channels] + [min(base_channels * (2**i), 8 * base_channels) for i in range(n_stages)]
        self.convs = nn.ModuleList(
            [nn.Conv2d(chans[i], chans[i + 1], 3, 2, 1) for i in range(n_stages)]
        )
        with torch.no_grad():
            for conv in self.convs:
                fan_in = conv.in_channels * 9
                conv.weight.normal_(0.0, (2.0 / fan_in) ** 0.5, generator=gen)
                conv.bias.zero_()
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        for conv in self.convs:
            x = torch.nn.functional.leaky_relu(conv(x), 0.2)
            feats.append(x)
        return feats


class ConvEncoder(nn.Module):
    """Two strided conv stages plus a projection; exposes the final map."""

    def __init__(self, in_channels: int = 3, feat_channels: int = 32):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(in_channels, 16, 3, 2, 1),
            nn.LeakyReLU(0.2, True),
            nn.Conv2d(16, 32, 3, 2, 1),
            nn.LeakyReLU(0.2, True),
            nn.Conv2d(32, feat_channels, 3, 1, 1),
        )

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        return [self.net(x)]


class _EncoderDecoder(nn.Module):
    """Encoder plus a light decoder used only during self-pretraining."""

    def __init__(self, encoder: ConvEncoder, out_channels: int):
        super().__init__()
        self.encoder = encoder
        ch = encoder.net[-1].out_channels
        self.decoder = nn.Sequential(
            nn.ConvTranspose2d(ch, 16, 3, 2, 1, output_padding=1),
            nn.LeakyReLU(0.2, True),
            nn.ConvTranspose2d(16, out_channels, 3, 2, 1, output_padding=1),
            nn.Sigmoid(),
        )

    def forward(self, x):
        return self.decoder(self.encoder(x)[0])


def _freeze(module: nn.Module) -> nn.Module:
    for p in module.parameters():
        p.requires_grad_(False)
    module.eval()
    return module


def pretrain_pose_encoders(
    images: np.ndarray,
    pose_volumes: np.ndarray,
    part_masks: np.ndarray,
    steps: int = 300,
    batch: int = 8,
    lr: float = 1e-3,
    feat_channels: int = 32,
    seed: int = 0,
    history: list | None = None,
) -> tuple[ConvEncoder, ConvEncoder]:
    """Train the pose and parsing encoders on the clip itself, then freeze.

    images: (N, H, W, 3) in [-1, 1]; pose_volumes: (N, 15, H, W) in [0, 1];
    part_masks: (N, 10, H, W) bool.  Returns frozen (phi_p, phi_s); per-step
    losses are appended to ``history`` when given.
    """
    if steps < 0:
        raise ValueError("steps must be non-negative")
    torch.manual_seed(seed)
    imgs = torch.as_tensor(np.asarray(images, dtype=np.float32)).permute(0, 3, 1, 2)
    pose_t = torch.as_tensor(np.asarray(pose_volumes, dtype=np.float32))
    mask_t = torch.as_tensor(np.asarray(part_masks, dtype=np.float32))

    phi_p = _EncoderDecoder(ConvEncoder(3, feat_channels), pose_t.shape[1])
    phi_s = _EncoderDecoder(ConvEncoder(3, feat_channels), mask_t.shape[1])
    opt = torch.optim.Adam(list(phi_p.parameters()) + list(phi_s.parameters()), lr=lr)
    rng = np.random.default_rng(seed)
    n = imgs.shape[0]
    for _ in range(steps):
        idx = torch.as_tensor(rng.integers(0, n, size=min(batch, n)))
        x = imgs[idx]
        loss = (phi_p(x) - pose_t[idx]).abs().mean() + (phi_s(x) - mask_t[idx]).abs().mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
        if history is not None:
            history.append(float(loss.detach()))
    return _freeze(phi_p.encoder), _freeze(phi_s.encoder)
