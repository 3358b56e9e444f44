"""Magnitude pruning over the encoder: the "self-competitor" branch.

A PruneMask zeroes the smallest-magnitude fraction of the encoder's conv and
linear weights. The pruned branch shares parameters with the dense branch:
the forward pass multiplies each weight tensor by its mask, never mutating
the dense values, and gradients flow to the dense parameters through the
mask (zero on pruned coordinates).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import torch
from torch.func import functional_call

from .errors import ConfigError, ContractViolationError
from .losses import LossValue, ntxent

logger = logging.getLogger(__name__)


@dataclass
class DamageConfig:
    prune_ratio: float = 0.3
    refresh_every_epochs: int = 1
    per_tensor: bool = False
    scope: list[str] | None = None  # explicit parameter names; None = all conv/linear weights

    def __post_init__(self):
        if not (0 < self.prune_ratio < 1):
            raise ConfigError(f"prune_ratio must lie in (0, 1), got {self.prune_ratio}")
        if self.refresh_every_epochs < 1:
            raise ConfigError("refresh_every_epochs must be a positive integer")

    def to_dict(self) -> dict:
        return {
            "prune_ratio": self.prune_ratio,
            "refresh_every_epochs": self.refresh_every_epochs,
            "per_tensor": self.per_tensor,
            "scope": self.scope,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DamageConfig":
        return cls(
            prune_ratio=float(d.get("prune_ratio", 0.3)),
            refresh_every_epochs=int(d.get("refresh_every_epochs", 1)),
            per_tensor=bool(d.get("per_tensor", False)),
            scope=d.get("scope"),
        )


@dataclass
class PruneMask:
    """Binary masks per parameter tensor, plus the sparsity they realize."""

    masks: dict[str, torch.Tensor]
    ratio: float
    created_at_epoch: int = 0

    def sparsity(self) -> float:
        total = sum(m.numel() for m in self.masks.values())
        zeros = sum(int((m == 0).sum()) for m in self.masks.values())
        return zeros / total if total else 0.0

    @staticmethod
    def all_ones_like(params: dict[str, torch.Tensor], names: list[str] | None = None) -> "PruneMask":
        names = names if names is not None else default_prune_scope(params)
        masks = {n: torch.ones_like(params[n], requires_grad=False) for n in names}
        return PruneMask(masks, ratio=0.0)


def default_prune_scope(params: dict[str, torch.Tensor]) -> list[str]:
    """Conv and linear weights (ndim >= 2); biases and norm parameters stay dense."""
    return sorted(n for n, p in params.items() if p.ndim >= 2)


def compute_prune_masks(
    params: dict[str, torch.Tensor], config: DamageConfig, created_at_epoch: int = 0
) -> PruneMask:
    """Global magnitude pruning with a deterministic tie-break.

    The `prune_ratio` fraction of in-scope weights with smallest |w| get a
    zero mask; ties go to the earlier (name-lexicographic, then flat-index)
    coordinate. With per_tensor=True the quota is applied inside each tensor
    instead of across the whole scope.
    """
    names = config.scope if config.scope is not None else default_prune_scope(params)
    if not names:
        raise ConfigError("pruning scope is empty")
    missing = [n for n in names if n not in params]
    if missing:
        raise ConfigError(f"scope names not found in params: {missing}")
    names = sorted(names)

    masks: dict[str, torch.Tensor] = {}
    if config.per_tensor:
        for n in names:
            masks[n] = _magnitude_mask(params[n], config.prune_ratio)
    else:
        flat = np.concatenate(
            [params[n].detach().abs().cpu().numpy().ravel() for n in names]
        )
        k = math.floor(config.prune_ratio * flat.size)
        keep = np.ones(flat.size, dtype=np.float32)
        if k > 0:
            order = np.argsort(flat, kind="stable")  # stable: ties keep concat order
            keep[order[:k]] = 0.0
        offset = 0
        for n in names:
            numel = params[n].numel()
            chunk = keep[offset : offset + numel].reshape(params[n].shape)
            masks[n] = torch.from_numpy(chunk).to(params[n].dtype)
            offset += numel
    for n, m in masks.items():
        if not m.any():
            # a fully-zeroed tensor degrades the pruned branch but is legal
            logger.warning("prune mask zeroes every weight of %r", n)
    return PruneMask(masks, ratio=config.prune_ratio, created_at_epoch=created_at_epoch)


def _magnitude_mask(p: torch.Tensor, ratio: float) -> torch.Tensor:
    flat = p.detach().abs().cpu().numpy().ravel()
    k = math.floor(ratio * flat.size)
    keep = np.ones(flat.size, dtype=np.float32)
    if k > 0:
        keep[np.argsort(flat, kind="stable")[:k]] = 0.0
    return torch.from_numpy(keep.reshape(p.shape)).to(p.dtype)


def pruned_forward(module: torch.nn.Module, mask: PruneMask, x: torch.Tensor) -> torch.Tensor:
    """Forward pass with masked parameters; dense parameters are untouched."""
    params = dict(module.named_parameters())
    for name, m in mask.masks.items():
        if name not in params:
            raise ContractViolationError(f"mask names unknown parameter {name!r}")
        if m.shape != params[name].shape:
            raise ContractViolationError(
                f"mask shape {tuple(m.shape)} != parameter shape {tuple(params[name].shape)} for {name!r}"
            )
    overlay = {
        name: (p * mask.masks[name] if name in mask.masks else p) for name, p in params.items()
    }
    overlay.update(dict(module.named_buffers()))
    return functional_call(module, overlay, (x,))


def should_refresh(epoch: int, config: DamageConfig) -> bool:
    if epoch < 0:
        raise ConfigError("epoch must be non-negative")
    return epoch % config.refresh_every_epochs == 0


def damage_real_loss(
    encoder: torch.nn.Module,
    projection: torch.nn.Module,
    mask: PruneMask,
    view1: torch.Tensor,
    view2: torch.Tensor,
    tau: float,
) -> LossValue:
    """Dense-vs-pruned real-view contrast: the Damage GAN replacement for the
    two-dense-view term. Gradients reach the dense parameters through both
    branches (the mask is a constant)."""
    z1 = projection(encoder(view1))
    z2 = projection(pruned_forward(encoder, mask, view2))
    loss = ntxent(z1, z2, tau)
    return LossValue(loss.value, {"damage_real": float(loss.value.detach())})


def pack_mask(mask: PruneMask) -> dict:
    """Bit-packed, checkpoint-friendly encoding of a mask."""
    packed = {}
    for name, m in mask.masks.items():
        bits = np.packbits(m.detach().cpu().numpy().astype(np.uint8).ravel())
        packed[name] = {"shape": list(m.shape), "bits": torch.from_numpy(bits)}
    return {"ratio": mask.ratio, "created_at_epoch": mask.created_at_epoch, "masks": packed}


def unpack_mask(payload: dict) -> PruneMask:
    masks = {}
    for name, entry in payload["masks"].items():
        shape = entry["shape"]
        numel = int(np.prod(shape))
        bits = np.unpackbits(entry["bits"].numpy())[:numel]
        masks[name] = torch.from_numpy(bits.reshape(shape).astype(np.float32))
    return PruneMask(masks, ratio=payload["ratio"], created_at_epoch=payload["created_at_epoch"])
