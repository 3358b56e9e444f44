"""Network definitions: DCGAN-style generator, shared discriminator encoder,
and the three heads (contrastive projection for real views, contrastive
projection for fakes, real/fake scalar head).

The encoder downsamples with strided convolutions only (no pooling) and uses
LeakyReLU throughout. Batch normalization in the encoder is a config switch:
on for the plain DCGAN discriminator, off for the contrastive variants where
two-view batches would couple the statistics.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import ConfigError, ContractViolationError

LATENT_DIM = 100
IMAGE_SIZE = 32


@dataclass
class GeneratorSpec:
    latent_dim: int = LATENT_DIM
    base_channels: int = 64
    num_upsample_stages: int = 3

    def __post_init__(self):
        if self.latent_dim != LATENT_DIM:
            raise ConfigError(f"latent_dim is fixed at {LATENT_DIM}, got {self.latent_dim}")
        if self.base_channels < 1:
            raise ConfigError("base_channels must be positive")
        if 4 * 2**self.num_upsample_stages != IMAGE_SIZE:
            raise ConfigError(
                f"num_upsample_stages={self.num_upsample_stages} does not produce "
                f"{IMAGE_SIZE}x{IMAGE_SIZE} outputs"
            )


@dataclass
class EncoderSpec:
    base_channels: int = 64
    feature_dim: int = 512
    negative_slope: float = 0.2
    use_batchnorm: bool = False

    def __post_init__(self):
        if self.base_channels < 1 or self.feature_dim < 1:
            raise ConfigError("base_channels and feature_dim must be positive")
        if not (0 < self.negative_slope < 1):
            raise ConfigError("negative_slope must lie in (0, 1)")


class Generator(nn.Module):
    """Latent (b, 100) -> tanh images (b, 3, 32, 32) via fractional-stride convs."""

    def __init__(self, spec: GeneratorSpec | None = None):
        super().__init__()
        self.spec = spec or GeneratorSpec()
        chans = [self.spec.base_channels * 2**i for i in range(self.spec.num_upsample_stages)]
        chans = chans[::-1]  # widest at the 4x4 stage
        layers: list[nn.Module] = [
            nn.ConvTranspose2d(self.spec.latent_dim, chans[0], 4, 1, 0, bias=False),
            nn.BatchNorm2d(chans[0]),
            nn.ReLU(inplace=True),
        ]
        for cin, cout in zip(chans, chans[1:]):
            layers += [
                nn.ConvTranspose2d(cin, cout, 4, 2, 1, bias=False),
                nn.BatchNorm2d(cout),
                nn.ReLU(inplace=True),
            ]
        layers += [nn.ConvTranspose2d(chans[-1], 3, 4, 2, 1, bias=False), nn.Tanh()]
        self.net = nn.Sequential(*layers)

    @property
    def output_conv(self) -> nn.ConvTranspose2d:
        return self.net[-2]

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if z.ndim != 2 or z.shape[1] != self.spec.latent_dim:
            raise ContractViolationError(
                f"latent batch must have shape (b, {self.spec.latent_dim}), got {tuple(z.shape)}"
            )
        return self.net(z.reshape(z.shape[0], self.spec.latent_dim, 1, 1))


class Encoder(nn.Module):
    """Images (b, 3, 32, 32) in [-1, 1] -> features (b, feature_dim).

    Strided 4x4 convolutions halve the spatial size down to 4x4, then a
    valid 4x4 convolution maps to the feature vector. No pooling layers.
    """

    def __init__(self, spec: EncoderSpec | None = None):
        super().__init__()
        self.spec = spec or EncoderSpec()
        b = self.spec.base_channels
        slope = self.spec.negative_slope

        def block(cin, cout, stride, padding, norm):
            mods: list[nn.Module] = [nn.Conv2d(cin, cout, 4, stride, padding, bias=not norm)]
            if norm:
                mods.append(nn.BatchNorm2d(cout))
            mods.append(nn.LeakyReLU(slope, inplace=True))
            return mods

        bn = self.spec.use_batchnorm
        layers = []
        layers += block(3, b, 2, 1, norm=False)  # 16x16; first layer stays norm-free
        layers += block(b, 2 * b, 2, 1, norm=bn)  # 8x8
        layers += block(2 * b, 4 * b, 2, 1, norm=bn)  # 4x4
        layers += block(4 * b, self.spec.feature_dim, 1, 0, norm=bn)  # 1x1
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1:] != (3, IMAGE_SIZE, IMAGE_SIZE):
            raise ContractViolationError(
                f"expected (b, 3, {IMAGE_SIZE}, {IMAGE_SIZE}) input, got {tuple(x.shape)}"
            )
        return self.net(x).flatten(1)


class ProjectionHead(nn.Module):
    """Two-layer nonlinear map to the contrastive space, rows unit-normalized."""

    def __init__(self, feature_dim: int, proj_dim: int = 128, negative_slope: float = 0.2):
        super().__init__()
        self.proj_dim = proj_dim
        self.net = nn.Sequential(
            nn.Linear(feature_dim, feature_dim),
            nn.LeakyReLU(negative_slope, inplace=True),
            nn.Linear(feature_dim, proj_dim),
        )

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        pre = self.net(features)
        norms = pre.norm(dim=1, keepdim=True)
        zero_rows = norms == 0
        if zero_rows.any():
            # exactly-zero pre-activation rows map to the first basis vector
            basis = torch.zeros_like(pre)
            basis[:, 0] = 1.0
            pre = torch.where(zero_rows, basis, pre)
            norms = torch.where(zero_rows, torch.ones_like(norms), norms)
        return pre / norms


class ScalarHead(nn.Module):
    """Features -> one unbounded real/fake logit per sample."""

    def __init__(self, feature_dim: int, negative_slope: float = 0.2):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(feature_dim, feature_dim),
            nn.LeakyReLU(negative_slope, inplace=True),
            nn.Linear(feature_dim, 1),
        )

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return self.net(features).squeeze(-1)


class Discriminator(nn.Module):
    """Encoder plus the three heads used across the GAN variants."""

    def __init__(
        self,
        spec: EncoderSpec | None = None,
        proj_dim: int = 128,
    ):
        super().__init__()
        self.encoder = Encoder(spec)
        d = self.encoder.spec.feature_dim
        slope = self.encoder.spec.negative_slope
        self.project_real = ProjectionHead(d, proj_dim, slope)
        self.project_fake = ProjectionHead(d, proj_dim, slope)
        self.score_head = ScalarHead(d, slope)

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        return self.encoder(x)

    def score(self, features: torch.Tensor) -> torch.Tensor:
        return self.score_head(features)


def init_weights(module: nn.Module, generator: torch.Generator) -> None:
    """Reproducible Kaiming-scale initialization with an explicit RNG.

    The classic DCGAN N(0, 0.02) convention relies on batch norm after
    every layer; the batchnorm-free contrastive encoder collapses its
    activations under it, which starves the scalar head and the generator.
    Kaiming noise keeps activation scale stable in both regimes (generator
    layers are batch-normalized anyway, so they are insensitive to scale).
    """
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            fan_in = m.weight.shape[1] * (m.weight[0, 0].numel() if m.weight.ndim > 2 else 1)
            m.weight.data.normal_(0.0, (2.0 / fan_in) ** 0.5, generator=generator)
            if m.bias is not None:
                m.bias.data.zero_()
        elif isinstance(m, (nn.BatchNorm2d, nn.BatchNorm1d)):
            m.weight.data.normal_(1.0, 0.02, generator=generator)
            m.bias.data.zero_()
    if isinstance(module, Generator):
        # damped output layer: a fresh generator emits muted near-neutral
        # images and warms up smoothly instead of starting at a random
        # saturated point
        module.output_conv.weight.data.mul_(0.1)


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def contains_pooling(module: nn.Module) -> bool:
    pool_types = (
        nn.MaxPool1d, nn.MaxPool2d, nn.MaxPool3d,
        nn.AvgPool1d, nn.AvgPool2d, nn.AvgPool3d,
        nn.AdaptiveAvgPool2d, nn.AdaptiveMaxPool2d,
    )
    return any(isinstance(m, pool_types) for m in module.modules())
