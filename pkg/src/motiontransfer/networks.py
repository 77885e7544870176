"""Generator and discriminator networks for both synthesis stages.

Both stages share the same architecture: a coarse generator (strided
downsampling, residual blocks, symmetric upsampling, bounded output) that a
fine-scale enhancer can wrap for the second training scale, and a
multi-scale patch discriminator that exposes per-layer features for the
feature-matching loss.  Channel counts are half of the usual image-to-image
baseline and configurable down to desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass
class GeneratorSpec:
    in_channels: int
    base_channels: int = 32
    n_down: int = 3
    n_residual: int = 6
    n_residual_fine: int = 3
    scales: tuple[str, ...] = ("coarse",)

    def __post_init__(self):
        self.scales = tuple(self.scales)
        if not set(self.scales) <= {"coarse", "fine"}:
            raise ValueError(f"unknown scales {self.scales}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DiscriminatorSpec:
    in_channels: int
    base_channels: int = 32
    n_layers: int = 3
    n_scales: int = 2  # 2 at the lower training scale, 3 at the higher

    def to_dict(self) -> dict:
        return asdict(self)


class ResidualBlock(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(ch, ch, 3, 1, 1),
            nn.InstanceNorm2d(ch),
            nn.ReLU(inplace=True),
            nn.Conv2d(ch, ch, 3, 1, 1),
            nn.InstanceNorm2d(ch),
        )

    def forward(self, x):
        return x + self.block(x)


class CoarseGenerator(nn.Module):
    """Encoder / residual core / decoder with a tanh-bounded RGB head.

    forward() can additionally return the pre-head feature map, which the
    fine-scale enhancer taps into.
    """

    def __init__(self, in_channels: int, base_channels: int = 32, n_down: int = 3, n_residual: int = 6):
        super().__init__()
        self.in_channels = in_channels
        down = []
        ch = base_channels
        down += [nn.Conv2d(in_channels, ch, 3, 2, 1), nn.InstanceNorm2d(ch), nn.ReLU(True)]
        for _ in range(n_down - 1):
            down += [nn.Conv2d(ch, ch * 2, 3, 2, 1), nn.InstanceNorm2d(ch * 2), nn.ReLU(True)]
            ch *= 2
        self.encoder = nn.Sequential(*down)
        self.core = nn.Sequential(*[ResidualBlock(ch) for _ in range(n_residual)])
        up = []
        for _ in range(n_down - 1):
            up += [
                nn.ConvTranspose2d(ch, ch // 2, 3, 2, 1, output_padding=1),
                nn.InstanceNorm2d(ch // 2),
                nn.ReLU(True),
            ]
            ch //= 2
        up += [
            nn.ConvTranspose2d(ch, base_channels, 3, 2, 1, output_padding=1),
            nn.InstanceNorm2d(base_channels),
            nn.ReLU(True),
        ]
        self.decoder = nn.Sequential(*up)
        self.head = nn.Conv2d(base_channels, 3, 3, 1, 1)

    def forward(self, x, return_features: bool = False):
        feats = self.decoder(self.core(self.encoder(x)))
        out = torch.tanh(self.head(feats))
        if return_features:
            return out, feats
        return out


class FineGenerator(nn.Module):
    """Fine-scale wrapper around a trained coarse generator.

    The enhancer path (convolutions stacked before and after the coarse
    core's output features, with its own residual blocks) produces a bounded
    correction c; the output is

        y = u + 0.5 * (1 - u^2) * tanh(c),   u = upsampled coarse output.

    The correction vanishes where the coarse output saturates, keeping the
    output strictly inside (-1, 1); with the enhancer ablated the fine
    output equals the upsampled coarse output exactly.
    """

    def __init__(self, coarse: CoarseGenerator, base_channels: int = 32, n_residual: int = 3):
        super().__init__()
        self.coarse = coarse
        self.in_channels = coarse.in_channels
        cb = coarse.head.in_channels  # coarse feature width
        self.front = nn.Sequential(
            nn.Conv2d(coarse.in_channels, base_channels, 7, 1, 3),
            nn.InstanceNorm2d(base_channels),
            nn.ReLU(True),
            nn.Conv2d(base_channels, cb, 3, 2, 1),
            nn.InstanceNorm2d(cb),
            nn.ReLU(True),
        )
        self.core = nn.Sequential(*[ResidualBlock(cb) for _ in range(n_residual)])
        self.back = nn.Sequential(
            nn.ConvTranspose2d(cb, base_channels, 3, 2, 1, output_padding=1),
            nn.InstanceNorm2d(base_channels),
            nn.ReLU(True),
            nn.Conv2d(base_channels, 3, 3, 1, 1),
        )

    def forward(self, x, ablate_enhancer: bool = False):
        x_coarse = F.avg_pool2d(x, 2)
        y_coarse, feats = self.coarse(x_coarse, return_features=True)
        u = F.interpolate(y_coarse, scale_factor=2, mode="bilinear", align_corners=False)
        if ablate_enhancer:
            return u
        c = self.back(self.core(self.front(x) + feats))
        return u + 0.5 * (1.0 - u * u) * torch.tanh(c)


class SplitInputConv(nn.Module):
    """First discriminator layer: conv over (image ++ condition channels).

    Implemented as two partial convolutions summed, which equals a single
    convolution over the channel concatenation but avoids materializing it
    on every call.
    """

    def __init__(self, img_channels: int, cond_channels: int, out_channels: int):
        super().__init__()
        self.conv_img = nn.Conv2d(img_channels, out_channels, 4, 2, 1)
        self.conv_cond = nn.Conv2d(cond_channels, out_channels, 4, 2, 1, bias=False)

    def forward(self, img, cond):
        return self.conv_img(img) + self.conv_cond(cond)


class PatchDiscriminator(nn.Module):
    """Conditioned PatchGAN discriminator returning every layer's activations."""

    def __init__(self, img_channels: int, cond_channels: int, base_channels: int = 32, n_layers: int = 3):
        super().__init__()
        self.stem = SplitInputConv(img_channels, cond_channels, base_channels)
        layers = []
        ch = base_channels
        for i in range(1, n_layers):
            nch = min(ch * 2, base_channels * 8)
            stride = 2 if i < n_layers - 1 else 1
            layers.append(
                nn.Sequential(
                    nn.Conv2d(ch, nch, 4, stride, 1),
                    nn.InstanceNorm2d(nch),
                    nn.LeakyReLU(0.2, True),
                )
            )
            ch = nch
        layers.append(nn.Sequential(nn.Conv2d(ch, 1, 4, 1, 1)))
        self.layers = nn.ModuleList(layers)

    def forward(self, img, cond) -> list[torch.Tensor]:
        x = F.leaky_relu(self.stem(img, cond), 0.2)
        feats = [x]
        for layer in self.layers:
            x = layer(x)
            feats.append(x)
        return feats


class MultiScaleDiscriminator(nn.Module):
    """n_scales patch discriminators on progressively downsampled input.

    Called as D(img, cond); returns a list (one per scale) of per-layer
    feature lists whose last element is the patch-wise score map.
    """

    def __init__(self, spec: DiscriminatorSpec, img_channels: int = 3):
        super().__init__()
        self.spec = spec
        cond_channels = spec.in_channels - img_channels
        self.scales = nn.ModuleList(
            [
                PatchDiscriminator(img_channels, cond_channels, spec.base_channels, spec.n_layers)
                for _ in range(spec.n_scales)
            ]
        )

    def forward(self, img: torch.Tensor, cond: torch.Tensor) -> list[list[torch.Tensor]]:
        outs = []
        for i, d in enumerate(self.scales):
            if i > 0:
                img = F.avg_pool2d(img, 2)
                cond = F.avg_pool2d(cond, 2)
            outs.append(d(img, cond))
        return outs


def build_generator(spec: GeneratorSpec) -> CoarseGenerator | FineGenerator:
    coarse = CoarseGenerator(spec.in_channels, spec.base_channels, spec.n_down, spec.n_residual)
    if "fine" in spec.scales:
        return FineGenerator(coarse, spec.base_channels, spec.n_residual_fine)
    return coarse


def promote_to_fine(g: CoarseGenerator, spec: GeneratorSpec) -> FineGenerator:
    """Wrap a trained coarse generator for the fine training scale."""
    if not isinstance(g, CoarseGenerator):
        raise ValueError("promote_to_fine expects a coarse generator")
    return FineGenerator(g, spec.base_channels, spec.n_residual_fine)


def init_weights(module: nn.Module, generator: torch.Generator | None = None) -> None:
    """Normal(0, 0.02) conv init, the image-to-image GAN convention."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            with torch.no_grad():
                m.weight.normal_(0.0, 0.02, generator=generator)
                if m.bias is not None:
                    m.bias.zero_()
