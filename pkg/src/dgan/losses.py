"""Loss functions: NT-Xent over two real views, the fake-vs-real supervised
contrastive term, hinge adversarial losses, and the BCE pair for the plain
DCGAN baseline. All of them are pure functions of their tensor inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .errors import ConfigError, ContractViolationError, InsufficientBatchError

_UNIT_NORM_ATOL = 1e-4


@dataclass
class LossValue:
    """A scalar loss tensor plus its named sub-terms (floats, for logging)."""

    value: torch.Tensor
    components: dict[str, float] = field(default_factory=dict)

    def item(self) -> float:
        return float(self.value.detach())

    def is_finite(self) -> bool:
        return bool(torch.isfinite(self.value.detach()))


def _check_tau(tau: float) -> float:
    tau = float(tau)
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    return tau


def _check_embeddings(name: str, z: torch.Tensor) -> None:
    if z.ndim != 2:
        raise ContractViolationError(f"{name} must be a (n, proj_dim) matrix, got {tuple(z.shape)}")
    norms = z.detach().norm(dim=1)
    err = (norms - 1).abs().max()
    if float(err) > _UNIT_NORM_ATOL:
        raise ContractViolationError(f"{name} rows must be unit-norm; worst deviation {float(err):.2e}")


def ntxent(z1: torch.Tensor, z2: torch.Tensor, tau: float) -> LossValue:
    """Normalized-temperature cross entropy over 2N views.

    View i's positive is its partner in the other view; the softmax runs
    over all other 2N-1 views (self excluded). Returns the mean over all
    2N anchors.
    """
    tau = _check_tau(tau)
    if z1.shape != z2.shape:
        raise ContractViolationError(f"view shapes differ: {tuple(z1.shape)} vs {tuple(z2.shape)}")
    _check_embeddings("z1", z1)
    _check_embeddings("z2", z2)
    n = z1.shape[0]
    if n < 2:
        raise InsufficientBatchError(f"ntxent needs at least 2 pairs, got {n}")

    z = torch.cat([z1, z2], dim=0)
    sim = (z @ z.T) / tau
    eye = torch.eye(2 * n, dtype=torch.bool, device=z.device)
    sim = sim.masked_fill(eye, float("-inf"))
    pos_index = torch.arange(2 * n, device=z.device).roll(n)
    loss = (torch.logsumexp(sim, dim=1) - sim[torch.arange(2 * n), pos_index]).mean()
    return LossValue(loss, {"ntxent": float(loss.detach())})


def supcon_fake(
    z_fake: torch.Tensor,
    z_real_1: torch.Tensor,
    z_real_2: torch.Tensor,
    tau: float,
) -> LossValue:
    """Supervised-contrastive loss with all fakes as one class.

    Each fake anchor treats every other fake as a positive and every real
    view embedding as a negative; the mean runs first over positives, then
    over anchors.
    """
    tau = _check_tau(tau)
    for name, z in (("z_fake", z_fake), ("z_real_1", z_real_1), ("z_real_2", z_real_2)):
        _check_embeddings(name, z)
    m = z_fake.shape[0]
    if m < 2:
        raise InsufficientBatchError(f"supcon_fake needs at least 2 fake embeddings, got {m}")

    reals = torch.cat([z_real_1, z_real_2], dim=0)
    sim_ff = (z_fake @ z_fake.T) / tau
    sim_fr = (z_fake @ reals.T) / tau
    eye = torch.eye(m, dtype=torch.bool, device=z_fake.device)
    denom = torch.logsumexp(torch.cat([sim_ff.masked_fill(eye, float("-inf")), sim_fr], dim=1), dim=1)
    # mean over the m-1 positives of (denom_i - sim(i, j)), then over anchors
    pos_mean = sim_ff.masked_fill(eye, 0.0).sum(dim=1) / (m - 1)
    loss = (denom - pos_mean).mean()
    return LossValue(loss, {"supcon_fake": float(loss.detach())})


def d_head_loss(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> LossValue:
    """Hinge discriminator loss on raw logits."""
    if real_scores.numel() == 0 or fake_scores.numel() == 0:
        raise InsufficientBatchError("hinge loss needs non-empty score batches")
    real_term = F.relu(1.0 - real_scores).mean()
    fake_term = F.relu(1.0 + fake_scores).mean()
    loss = real_term + fake_term
    return LossValue(
        loss,
        {"real_hinge": float(real_term.detach()), "fake_hinge": float(fake_term.detach())},
    )


def g_loss(fake_scores: torch.Tensor) -> LossValue:
    """Hinge generator loss: maximize the fake scores."""
    if fake_scores.numel() == 0:
        raise InsufficientBatchError("generator loss needs non-empty scores")
    loss = -fake_scores.mean()
    return LossValue(loss, {"g_hinge": float(loss.detach())})


def dcgan_bce_losses(
    real_scores: torch.Tensor, fake_scores: torch.Tensor
) -> tuple[LossValue, LossValue]:
    """Baseline BCE pair: discriminator loss and non-saturating generator loss."""
    if real_scores.numel() == 0 or fake_scores.numel() == 0:
        raise InsufficientBatchError("BCE losses need non-empty score batches")
    real_term = F.binary_cross_entropy_with_logits(real_scores, torch.ones_like(real_scores))
    fake_term = F.binary_cross_entropy_with_logits(fake_scores, torch.zeros_like(fake_scores))
    d_value = real_term + fake_term
    g_value = F.binary_cross_entropy_with_logits(fake_scores, torch.ones_like(fake_scores))
    d = LossValue(
        d_value,
        {"bce_real": float(real_term.detach()), "bce_fake": float(fake_term.detach())},
    )
    g = LossValue(g_value, {"bce_gen": float(g_value.detach())})
    return d, g
