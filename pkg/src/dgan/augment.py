"""SimCLR-style stochastic view generation for [-1, 1] image batches.

Each image in each view gets its own random stream derived from
(seed_root, epoch, batch_index, image_index, view_id), so augmentation is
bit-reproducible, order-independent across the batch, and the two views of
a pair never share a stream. All pixel operations are plain torch ops, so
gradients pass through a view back to the input batch (needed when the
generator is trained through augmented fakes).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torchvision.transforms.functional as TF

from .errors import ConfigError
from .seeding import np_rng

# luma weights (ITU-R 601), matching torchvision's grayscale conversion
_LUMA = (0.2989, 0.587, 0.114)


@dataclass
class AugmentationPolicy:
    """Parameters of the view-generation pipeline.

    Defaults are the standard SimCLR-on-CIFAR settings. A policy with
    crop_scale_range=(1, 1) and all probabilities/strengths zero is the
    identity: views come back bit-equal to the input.
    """

    crop_scale_range: tuple[float, float] = (0.2, 1.0)
    flip_probability: float = 0.5
    color_jitter_strength: float = 0.5
    grayscale_probability: float = 0.2
    seed_root: int = 0

    def __post_init__(self):
        lo, hi = self.crop_scale_range
        if not (0 < lo <= hi <= 1):
            raise ConfigError(f"crop_scale_range must satisfy 0 < min <= max <= 1, got {self.crop_scale_range}")
        for name in ("flip_probability", "grayscale_probability"):
            p = getattr(self, name)
            if not (0 <= p <= 1):
                raise ConfigError(f"{name} must lie in [0, 1], got {p}")
        if self.color_jitter_strength < 0:
            raise ConfigError("color_jitter_strength must be >= 0")

    def to_dict(self) -> dict:
        return {
            "crop_scale_range": list(self.crop_scale_range),
            "flip_probability": self.flip_probability,
            "color_jitter_strength": self.color_jitter_strength,
            "grayscale_probability": self.grayscale_probability,
            "seed_root": self.seed_root,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentationPolicy":
        return cls(
            crop_scale_range=tuple(d.get("crop_scale_range", (0.2, 1.0))),
            flip_probability=float(d.get("flip_probability", 0.5)),
            color_jitter_strength=float(d.get("color_jitter_strength", 0.5)),
            grayscale_probability=float(d.get("grayscale_probability", 0.2)),
            seed_root=int(d.get("seed_root", 0)),
        )


def _augment_one(img: torch.Tensor, policy: AugmentationPolicy, rng) -> torch.Tensor:
    """Augment a single CHW image. Draw order is fixed so streams line up."""
    size = img.shape[-1]
    scale = rng.uniform(*policy.crop_scale_range)
    side = int(round(size * math.sqrt(scale)))
    side = max(1, min(size, side))
    top = int(rng.integers(0, size - side + 1))
    left = int(rng.integers(0, size - side + 1))
    u_flip = rng.random()
    s = policy.color_jitter_strength
    f_bright = rng.uniform(max(0.0, 1 - 0.8 * s), 1 + 0.8 * s)
    f_contrast = rng.uniform(max(0.0, 1 - 0.8 * s), 1 + 0.8 * s)
    f_sat = rng.uniform(max(0.0, 1 - 0.8 * s), 1 + 0.8 * s)
    f_hue = rng.uniform(-min(0.2 * s, 0.5), min(0.2 * s, 0.5))
    u_gray = rng.random()

    out = img
    if side < size:
        patch = out[..., top : top + side, left : left + side]
        out = torch.nn.functional.interpolate(
            patch.unsqueeze(0), size=size, mode="bilinear", align_corners=False
        ).squeeze(0)
    if u_flip < policy.flip_probability:
        out = torch.flip(out, dims=(-1,))

    apply_gray = u_gray < policy.grayscale_probability
    jitter = (f_bright != 1.0, f_contrast != 1.0, f_sat != 1.0, f_hue != 0.0)
    if any(jitter) or apply_gray:
        x = (out + 1.0) * 0.5  # color ops are defined on [0, 1]
        if jitter[0]:
            x = x * f_bright
        if jitter[1]:
            mean = _luma(x).mean()
            x = f_contrast * x + (1 - f_contrast) * mean
        if jitter[2]:
            gray = _luma(x)
            x = f_sat * x + (1 - f_sat) * gray
        if jitter[3]:
            x = TF.adjust_hue(x.clamp(0.0, 1.0), f_hue)
        if apply_gray:
            x = _luma(x)
        out = (x.clamp(0.0, 1.0) * 2.0) - 1.0
    return out


def _luma(x: torch.Tensor) -> torch.Tensor:
    g = _LUMA[0] * x[0] + _LUMA[1] * x[1] + _LUMA[2] * x[2]
    return g.unsqueeze(0).expand_as(x)


def simclr_view(
    batch: torch.Tensor,
    policy: AugmentationPolicy,
    epoch: int,
    batch_index: int,
    view_id: int,
) -> torch.Tensor:
    """One augmented view of a [-1, 1] batch (b, 3, h, w)."""
    if batch.ndim != 4 or batch.shape[1] != 3:
        raise ConfigError(f"expected a (b, 3, h, w) batch, got {tuple(batch.shape)}")
    views = [
        _augment_one(batch[j], policy, np_rng(policy.seed_root, epoch, batch_index, j, view_id))
        for j in range(batch.shape[0])
    ]
    return torch.stack(views)


def simclr_views(
    batch: torch.Tensor,
    policy: AugmentationPolicy,
    epoch: int,
    batch_index: int,
) -> tuple[torch.Tensor, torch.Tensor]:
    """The two independently augmented views used by the contrastive losses."""
    return (
        simclr_view(batch, policy, epoch, batch_index, view_id=0),
        simclr_view(batch, policy, epoch, batch_index, view_id=1),
    )
