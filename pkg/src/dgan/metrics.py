"""Evaluation stack: Gaussian feature statistics, FID, Inception Score,
the frozen-encoder linear evaluator, class-distribution deviation, and
per-class FID with the small-sample scale factor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .data import LabeledImageSet, gan_preprocess
from .errors import (
    ConfigError,
    ContractViolationError,
    CorruptDataError,
    DegenerateLabelsError,
    InsufficientClassSamplesError,
    InsufficientSamplesError,
    NumericalInstabilityError,
    UndefinedDeviationError,
)
from .extractors import FeatureExtractor
from .seeding import np_rng
from .training import load_checkpoint, sample

_EIG_CLAMP_REL = 1e-6
_LOG_EPS = 1e-16
_STATS_MAGIC = b"DGANSTAT"


@dataclass
class FeatureStats:
    """Sample mean and covariance of extractor activations."""

    mu: np.ndarray
    sigma: np.ndarray
    n: int

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        d = self.mu.shape[0]
        if self.sigma.shape != (d, d):
            raise ContractViolationError(f"sigma must be ({d}, {d}), got {self.sigma.shape}")
        if self.n < 2:
            raise InsufficientSamplesError("feature stats need at least 2 samples")
        asym = np.abs(self.sigma - self.sigma.T).max() if d else 0.0
        if asym > 1e-8:
            raise ContractViolationError(f"sigma is not symmetric (max asymmetry {asym:.2e})")


def gaussian_stats(features: np.ndarray) -> FeatureStats:
    """Sample mean and unbiased covariance of feature rows."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2:
        raise ContractViolationError(f"features must be (n, d), got {feats.shape}")
    n = feats.shape[0]
    if n < 2:
        raise InsufficientSamplesError(f"need at least 2 feature rows, got {n}")
    mu = feats.mean(axis=0)
    centered = feats - mu
    sigma = centered.T @ centered / (n - 1)
    sigma = (sigma + sigma.T) / 2
    return FeatureStats(mu=mu, sigma=sigma, n=n)


def _clamped_eigvals(w: np.ndarray, context: str) -> np.ndarray:
    scale = max(float(np.abs(w).max()), 1.0e-12) if w.size else 0.0
    floor = -_EIG_CLAMP_REL * scale
    worst = float(w.min()) if w.size else 0.0
    if worst < floor:
        raise NumericalInstabilityError(
            f"{context}: eigenvalue {worst:.6e} below clamp tolerance {floor:.6e}"
        )
    return np.clip(w, 0.0, None)


def fid(stats_r: FeatureStats, stats_g: FeatureStats) -> float:
    """Fréchet distance between two Gaussian feature fits.

    ||mu_r - mu_g||^2 + tr(S_r + S_g - 2 (S_r S_g)^{1/2}), with the product
    square root taken through the symmetric form sqrt(S_r)^T S_g sqrt(S_r)
    so everything stays an eigendecomposition of a symmetric matrix. Tiny
    negative eigenvalues (relative to the spectrum) clamp to zero; anything
    worse raises.
    """
    if stats_r.mu.shape != stats_g.mu.shape:
        raise ContractViolationError(
            f"feature dims differ: {stats_r.mu.shape[0]} vs {stats_g.mu.shape[0]}"
        )
    diff = stats_r.mu - stats_g.mu
    w_r, v_r = np.linalg.eigh(stats_r.sigma)
    w_r = _clamped_eigvals(w_r, "sqrt of reference covariance")
    sqrt_r = (v_r * np.sqrt(w_r)) @ v_r.T
    inner = sqrt_r @ stats_g.sigma @ sqrt_r
    inner = (inner + inner.T) / 2
    w = np.linalg.eigh(inner)[0]
    w = _clamped_eigvals(w, "sqrt of covariance product")
    value = float(
        diff @ diff
        + np.trace(stats_r.sigma)
        + np.trace(stats_g.sigma)
        - 2.0 * np.sqrt(w).sum()
    )
    return max(value, 0.0)


def inception_score(probs: np.ndarray, splits: int) -> tuple[float, float]:
    """exp(mean KL(p(y|x) || p(y))) per contiguous split; mean and std across splits."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2:
        raise ContractViolationError(f"probs must be (n, k), got {p.shape}")
    if splits < 1 or p.shape[0] < splits:
        raise InsufficientSamplesError(
            f"need n >= splits >= 1, got n={p.shape[0]}, splits={splits}"
        )
    row_err = np.abs(p.sum(axis=1) - 1.0).max()
    if row_err > 1e-4:
        raise ContractViolationError(f"probability rows must sum to 1 (worst error {row_err:.2e})")
    scores = []
    for part in np.array_split(p, splits):
        marginal = part.mean(axis=0)
        kl = np.sum(
            part * (np.log(np.maximum(part, _LOG_EPS)) - np.log(np.maximum(marginal, _LOG_EPS))),
            axis=1,
        )
        scores.append(np.exp(kl.mean()))
    scores = np.asarray(scores)
    return float(scores.mean()), float(scores.std())


@dataclass
class LinearEvaluator:
    """Affine probe over frozen encoder features; prediction is the argmax."""

    weights: np.ndarray  # (feature_dim, num_classes)
    bias: np.ndarray  # (num_classes,)

    def predict(self, features: np.ndarray) -> np.ndarray:
        f = np.asarray(features, dtype=np.float64)
        return np.argmax(f @ self.weights + self.bias, axis=1)

    def accuracy(self, features: np.ndarray, labels: np.ndarray) -> float:
        return float((self.predict(features) == np.asarray(labels)).mean())

    def save(self, path: str | Path):
        np.savez(path, weights=self.weights, bias=self.bias)

    @classmethod
    def load(cls, path: str | Path) -> "LinearEvaluator":
        payload = np.load(path)
        return cls(weights=payload["weights"], bias=payload["bias"])


def fit_linear_evaluator(
    features: np.ndarray,
    labels: np.ndarray,
    num_classes: int | None = None,
    epochs: int = 100,
    lr: float = 1e-3,
    batch_size: int = 256,
) -> LinearEvaluator:
    """Multinomial logistic regression with a fixed training budget.

    Zero-initialized weights and a fixed internal shuffling stream make
    repeated fits on the same features identical.
    """
    feats = torch.as_tensor(np.asarray(features), dtype=torch.float32)
    labs = np.asarray(labels, dtype=np.int64)
    if feats.shape[0] != labs.shape[0]:
        raise ContractViolationError("features and labels must have equal length")
    if np.unique(labs).size < 2:
        raise DegenerateLabelsError("linear evaluation needs at least two distinct labels")
    c = num_classes if num_classes is not None else int(labs.max()) + 1
    target = torch.from_numpy(labs)

    probe = torch.nn.Linear(feats.shape[1], c)
    probe.weight.data.zero_()
    probe.bias.data.zero_()
    opt = torch.optim.Adam(probe.parameters(), lr=lr)
    loss_fn = torch.nn.CrossEntropyLoss()
    n = feats.shape[0]
    for epoch in range(epochs):
        order = np_rng(0x11EA1, "linear-eval", epoch).permutation(n)
        for i in range(0, n, batch_size):
            idx = order[i : i + batch_size]
            opt.zero_grad()
            loss = loss_fn(probe(feats[idx]), target[idx])
            loss.backward()
            opt.step()
    return LinearEvaluator(
        weights=probe.weight.detach().numpy().T.astype(np.float64),
        bias=probe.bias.detach().numpy().astype(np.float64),
    )


def encoder_features(encoder: torch.nn.Module, images: torch.Tensor, batch_size: int = 256) -> np.ndarray:
    """Frozen-encoder features for [-1, 1] image tensors."""
    was_training = encoder.training
    encoder.eval()
    try:
        with torch.no_grad():
            chunks = [
                encoder(images[i : i + batch_size].float()).cpu().numpy()
                for i in range(0, images.shape[0], batch_size)
            ]
    finally:
        encoder.train(was_training)
    return np.concatenate(chunks).astype(np.float64)


def train_linear_evaluator(
    encoder: torch.nn.Module, train_set: LabeledImageSet, **fit_kwargs
) -> LinearEvaluator:
    """Fit the probe on frozen encoder features of a labeled image set."""
    feats = encoder_features(encoder, gan_preprocess(train_set.images))
    return fit_linear_evaluator(
        feats, train_set.labels, num_classes=train_set.num_classes, **fit_kwargs
    )


@dataclass
class DeviationTable:
    """Generated-vs-training class-frequency ratios."""

    per_class: list[float]
    mean: float


def class_deviation(gen_labels, train_counts) -> DeviationTable:
    """deviation_c = (generated share of class c) / (training share of class c)."""
    labels = np.asarray(gen_labels, dtype=np.int64)
    counts = np.asarray(train_counts, dtype=np.int64)
    c = counts.shape[0]
    if labels.size == 0:
        raise InsufficientSamplesError("need at least one generated label")
    if labels.min() < 0 or labels.max() >= c:
        raise ContractViolationError(f"generated labels must lie in [0, {c})")
    zero = np.flatnonzero(counts == 0)
    if zero.size:
        raise UndefinedDeviationError(
            f"training count is zero for class(es) {zero.tolist()}; deviation undefined"
        )
    gen_frac = np.bincount(labels, minlength=c) / labels.size
    train_frac = counts / counts.sum()
    dev = gen_frac / train_frac
    return DeviationTable(per_class=dev.tolist(), mean=float(dev.mean()))


def _stats_cache_path(cache_dir: Path, extractor_id: str, dataset_hash: str) -> Path:
    return cache_dir / f"refstats-{extractor_id}-{dataset_hash[:16]}.bin"


def save_stats(path: str | Path, stats: FeatureStats, dataset_hash: str, extractor_id: str):
    header = json.dumps(
        {
            "dataset_hash": dataset_hash,
            "extractor_id": extractor_id,
            "n": stats.n,
            "dim": int(stats.mu.shape[0]),
            "dtype": "float64",
        },
        sort_keys=True,
    ).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(_STATS_MAGIC)
        fh.write(len(header).to_bytes(8, "little"))
        fh.write(header)
        fh.write(stats.mu.tobytes())
        fh.write(stats.sigma.tobytes())


def load_stats(path: str | Path) -> tuple[FeatureStats, dict]:
    raw = Path(path).read_bytes()
    if raw[: len(_STATS_MAGIC)] != _STATS_MAGIC:
        raise CorruptDataError(f"{path}: not a feature-stats container")
    off = len(_STATS_MAGIC)
    hlen = int.from_bytes(raw[off : off + 8], "little")
    off += 8
    header = json.loads(raw[off : off + hlen])
    off += hlen
    d = header["dim"]
    mu = np.frombuffer(raw, dtype=np.float64, count=d, offset=off).copy()
    off += d * 8
    sigma = np.frombuffer(raw, dtype=np.float64, count=d * d, offset=off).copy().reshape(d, d)
    return FeatureStats(mu=mu, sigma=sigma, n=header["n"]), header


def reference_stats(
    dataset: LabeledImageSet,
    extractor: FeatureExtractor,
    cache_dir: str | Path | None = None,
    dataset_hash: str | None = None,
) -> FeatureStats:
    """Gaussian stats of the real dataset under the extractor, cached by content hash."""
    cache_path = None
    if cache_dir is not None and dataset_hash is not None:
        cache_path = _stats_cache_path(Path(cache_dir), extractor.extractor_id, dataset_hash)
        if cache_path.is_file():
            stats, header = load_stats(cache_path)
            if header["dataset_hash"] == dataset_hash and header["extractor_id"] == extractor.extractor_id:
                return stats
    stats = gaussian_stats(extractor.features(gan_preprocess(dataset.images)))
    if cache_path is not None:
        save_stats(cache_path, stats, dataset_hash, extractor.extractor_id)
    return stats


def evaluate_images(
    images: torch.Tensor,
    dataset: LabeledImageSet,
    extractor: FeatureExtractor,
    splits: int = 10,
    cache_dir: str | Path | None = None,
    dataset_hash: str | None = None,
) -> dict:
    """FID against the dataset's reference stats plus IS of the class posteriors."""
    ref = reference_stats(dataset, extractor, cache_dir, dataset_hash)
    feats, probs = extractor.features_and_probs(images)
    fid_value = fid(ref, gaussian_stats(feats))
    is_mean, is_std = inception_score(probs, splits)
    return {"fid": fid_value, "is_mean": is_mean, "is_std": is_std}


def evaluate_gan(
    checkpoint: str | Path,
    dataset: LabeledImageSet,
    extractor: FeatureExtractor,
    n_gen: int,
    seed: int,
    splits: int = 10,
    cache_dir: str | Path | None = None,
    dataset_hash: str | None = None,
) -> dict:
    """Sample a checkpointed generator and score it (FID + IS)."""
    if n_gen < 2 * splits:
        raise InsufficientSamplesError(f"n_gen must be >= 2*splits, got n_gen={n_gen}, splits={splits}")
    state, _ = load_checkpoint(checkpoint)
    images = sample(state.generator, n_gen, seed)
    return evaluate_images(images, dataset, extractor, splits, cache_dir, dataset_hash)


def per_class_fid_from_images(
    pool: torch.Tensor,
    labels: np.ndarray,
    dataset: LabeledImageSet,
    extractor: FeatureExtractor,
    classes: list[int],
    n_per_class: int,
    seed: int,
    subset_draws: int = 5,
    cache_dir: str | Path | None = None,
    dataset_hash: str | None = None,
) -> dict[int, float]:
    """Scaled per-class FID for an already-labeled generated pool.

    Each requested class's raw FID (its first n_per_class labeled samples
    against the real samples of that class) is multiplied by a small-sample
    scale factor: FID(whole pool vs dataset) over FID(random
    n_per_class-subset of the pool vs dataset), averaged over seeded draws.
    """
    if not classes:
        raise ConfigError("per-class FID needs at least one class")
    if n_per_class < 2:
        raise InsufficientSamplesError("n_per_class must be >= 2")
    labels = np.asarray(labels)
    pool_n = pool.shape[0]
    pool_feats = extractor.features(pool)

    ref = reference_stats(dataset, extractor, cache_dir, dataset_hash)
    numerator = fid(gaussian_stats(pool_feats), ref)
    scales = []
    for draw in range(subset_draws):
        idx = np_rng(seed, "pcf-subset", draw).choice(
            pool_n, size=min(n_per_class, pool_n), replace=False
        )
        denom = fid(gaussian_stats(pool_feats[idx]), ref)
        scales.append(numerator / denom if denom > 1e-12 else 1.0)
    scale = float(np.mean(scales))

    real_feats = extractor.features(gan_preprocess(dataset.images))
    out: dict[int, float] = {}
    for c in classes:
        gen_idx = np.flatnonzero(labels == c)
        if gen_idx.size < n_per_class:
            name = dataset.class_names[c] if 0 <= c < dataset.num_classes else str(c)
            raise InsufficientClassSamplesError(
                f"class {c} ({name}): only {gen_idx.size} generated samples labeled, "
                f"need {n_per_class}"
            )
        real_idx = np.flatnonzero(dataset.labels == c)
        if real_idx.size < 2:
            raise InsufficientSamplesError(f"class {c} has fewer than 2 real samples")
        raw = fid(
            gaussian_stats(pool_feats[gen_idx[:n_per_class]]),
            gaussian_stats(real_feats[real_idx]),
        )
        out[int(c)] = raw * scale
    return out


def per_class_fid(
    checkpoint: str | Path,
    dataset: LabeledImageSet,
    extractor: FeatureExtractor,
    classes: list[int],
    n_per_class: int,
    evaluator: LinearEvaluator,
    seed: int,
    n_pool: int | None = None,
    subset_draws: int = 5,
    cache_dir: str | Path | None = None,
    dataset_hash: str | None = None,
) -> dict[int, float]:
    """Scaled per-class FID for a checkpointed generator; the linear
    evaluator labels the generated pool via the checkpoint's own encoder."""
    state, _ = load_checkpoint(checkpoint)
    pool = sample(state.generator, n_pool if n_pool is not None else len(dataset), seed)
    labels = evaluator.predict(encoder_features(state.discriminator.encoder, pool))
    return per_class_fid_from_images(
        pool,
        labels,
        dataset,
        extractor,
        classes,
        n_per_class,
        seed,
        subset_draws=subset_draws,
        cache_dir=cache_dir,
        dataset_hash=dataset_hash,
    )
