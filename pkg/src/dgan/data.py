"""CIFAR-10 ingestion, long-tailed split construction, and GAN preprocessing.

The three named dataset profiles are:

* ``full`` -- the whole 50,000-image training partition.
* ``partial`` -- 1,116 images per class (11,160 total).
* ``imbalanced`` -- exponential long tail with imbalance factor 100,
  largest class 4,500, smallest 45 (11,165 total).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import (
    ConfigError,
    CorruptDataError,
    DatasetNotFoundError,
    DegenerateSpecError,
    InsufficientSamplesError,
)
from .seeding import np_rng

CIFAR10_CLASS_NAMES = [
    "airplane", "automobile", "bird", "cat", "deer",
    "dog", "frog", "horse", "ship", "truck",
]

# Short column labels used in the report tables.
CIFAR10_SHORT_NAMES = ["air", "car", "bird", "cat", "deer", "dog", "frog", "hrs", "ship", "truck"]

# Descending-count rank -> class index for the imbalanced profile
# (frog largest ... truck smallest).
IMBALANCED_CLASS_PERMUTATION = (6, 8, 4, 1, 7, 0, 3, 2, 5, 9)

_RECORD_BYTES = 3073  # 1 label byte + 32*32*3 pixel bytes
_TRAIN_BATCH_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]

PROFILE_NAMES = ("full", "partial", "imbalanced")


@dataclass
class LabeledImageSet:
    """Ordered (image, label) pairs with per-class bookkeeping.

    images are uint8 HWC arrays of shape (n, 32, 32, 3); labels are class
    indices into class_names.
    """

    images: np.ndarray
    labels: np.ndarray
    class_names: list[str] = field(default_factory=lambda: list(CIFAR10_CLASS_NAMES))

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.uint8)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or self.images.shape[1:] != (32, 32, 3):
            raise ConfigError(f"images must have shape (n, 32, 32, 3), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ConfigError("images and labels must have equal length")
        c = len(self.class_names)
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= c):
            raise ConfigError(f"labels must lie in [0, {c})")

    def __len__(self) -> int:
        return len(self.images)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def per_class_counts(self) -> list[int]:
        return np.bincount(self.labels, minlength=self.num_classes).tolist()

    def select(self, indices: np.ndarray) -> "LabeledImageSet":
        return LabeledImageSet(self.images[indices], self.labels[indices], list(self.class_names))


@dataclass
class LongTailSpec:
    """Exponential long-tail profile: rank-i count is n_max * f^(-i/(C-1))."""

    n_max: int
    imbalance_factor: float
    num_classes: int
    class_permutation: tuple[int, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_max < 1:
            raise ConfigError("n_max must be >= 1")
        if self.imbalance_factor < 1:
            raise ConfigError("imbalance_factor must be >= 1")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.class_permutation is None:
            self.class_permutation = tuple(range(self.num_classes))
        else:
            self.class_permutation = tuple(int(i) for i in self.class_permutation)
        if sorted(self.class_permutation) != list(range(self.num_classes)):
            raise ConfigError("class_permutation must be a permutation of [0, num_classes)")

    def to_dict(self) -> dict:
        return {
            "n_max": self.n_max,
            "imbalance_factor": self.imbalance_factor,
            "num_classes": self.num_classes,
            "class_permutation": list(self.class_permutation),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LongTailSpec":
        return cls(
            n_max=int(d["n_max"]),
            imbalance_factor=float(d["imbalance_factor"]),
            num_classes=int(d["num_classes"]),
            class_permutation=d.get("class_permutation"),
            seed=int(d.get("seed", 0)),
        )


def _read_batch_file(path: Path) -> tuple[np.ndarray, np.ndarray]:
    raw = np.frombuffer(path.read_bytes(), dtype=np.uint8)
    if raw.size == 0 or raw.size % _RECORD_BYTES != 0:
        raise CorruptDataError(
            f"{path}: size {raw.size} is not a positive multiple of {_RECORD_BYTES}-byte records"
        )
    records = raw.reshape(-1, _RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    # pixel payload is three row-major 1024-byte color planes (R, G, B)
    images = records[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    return np.ascontiguousarray(images), labels


def load_cifar10(path: str | Path) -> LabeledImageSet:
    """Load the CIFAR-10 binary-version training partition.

    `path` must contain data_batch_1.bin .. data_batch_5.bin, either
    directly or under a cifar-10-batches-bin/ subdirectory. Ordering is
    the on-disk record order, so repeated loads are identical.
    """
    root = Path(path)
    if (root / "cifar-10-batches-bin").is_dir():
        root = root / "cifar-10-batches-bin"
    missing = [name for name in _TRAIN_BATCH_FILES if not (root / name).is_file()]
    if missing:
        raise DatasetNotFoundError(
            f"CIFAR-10 batch files not found under {path}: missing {', '.join(missing)}"
        )
    images, labels = [], []
    for name in _TRAIN_BATCH_FILES:
        imgs, labs = _read_batch_file(root / name)
        images.append(imgs)
        labels.append(labs)
    class_names = _read_class_names(root)
    return LabeledImageSet(np.concatenate(images), np.concatenate(labels), class_names)


def _read_class_names(root: Path) -> list[str]:
    meta = root / "batches.meta.txt"
    if meta.is_file():
        names = [line.strip() for line in meta.read_text().splitlines() if line.strip()]
        if len(names) >= 10:
            return names[:10]
    return list(CIFAR10_CLASS_NAMES)


def build_longtail_counts(spec: LongTailSpec) -> list[int]:
    """Per-class counts for an exponential long-tail profile.

    Rank-i count is floor(n_max * factor^(-i/(C-1))); rank i lands at class
    spec.class_permutation[i]. The floor reproduces the published
    imbalanced-profile counts exactly.
    """
    c = spec.num_classes
    rank_counts = [
        math.floor(spec.n_max * spec.imbalance_factor ** (-i / (c - 1))) for i in range(c)
    ]
    if rank_counts[-1] < 1:
        raise DegenerateSpecError(
            f"smallest class count is {rank_counts[-1]}; "
            f"n_max={spec.n_max} cannot support imbalance_factor={spec.imbalance_factor}"
        )
    counts = [0] * c
    for rank, cls in enumerate(spec.class_permutation):
        counts[cls] = rank_counts[rank]
    return counts


def build_subset(full: LabeledImageSet, counts: list[int], seed: int) -> LabeledImageSet:
    """Draw counts[c] examples per class without replacement, deterministically."""
    indices = subset_indices(full, counts, seed)
    return full.select(indices)


def subset_indices(full: LabeledImageSet, counts: list[int], seed: int) -> np.ndarray:
    """Index list into `full` realizing `counts`; class-grouped then shuffled."""
    if len(counts) != full.num_classes:
        raise ConfigError(f"expected {full.num_classes} counts, got {len(counts)}")
    available = full.per_class_counts
    chosen = []
    for c, want in enumerate(counts):
        if want > available[c]:
            raise InsufficientSamplesError(
                f"class {c} ({full.class_names[c]}): requested {want}, only {available[c]} available"
            )
        pool = np.flatnonzero(full.labels == c)
        picked = np_rng(seed, "subset", c).choice(pool, size=want, replace=False)
        chosen.append(np.sort(picked))
    indices = np.concatenate(chosen) if chosen else np.empty(0, dtype=np.int64)
    np_rng(seed, "subset-order").shuffle(indices)
    return indices


def profile_counts(profile: str, full: LabeledImageSet) -> tuple[list[int], LongTailSpec | None]:
    """Counts (and spec, where one applies) for a named dataset profile."""
    if profile == "full":
        return full.per_class_counts, None
    if profile == "partial":
        spec = LongTailSpec(n_max=1116, imbalance_factor=1.0, num_classes=full.num_classes)
        return build_longtail_counts(spec), spec
    if profile == "imbalanced":
        spec = LongTailSpec(
            n_max=4500,
            imbalance_factor=100.0,
            num_classes=full.num_classes,
            class_permutation=IMBALANCED_CLASS_PERMUTATION,
        )
        return build_longtail_counts(spec), spec
    raise ConfigError(f"unknown profile {profile!r}; expected one of {PROFILE_NAMES}")


def gan_preprocess(raw: np.ndarray | torch.Tensor) -> torch.Tensor:
    """Map uint8 images (n, 32, 32, 3) or (n, 3, 32, 32) to float CHW in [-1, 1]."""
    if isinstance(raw, np.ndarray):
        raw = torch.from_numpy(np.ascontiguousarray(raw))
    x = raw.float() / 127.5 - 1.0
    if x.ndim == 4 and x.shape[-1] == 3:
        x = x.permute(0, 3, 1, 2).contiguous()
    return x


def gan_postprocess(x: torch.Tensor) -> np.ndarray:
    """Inverse of gan_preprocess: [-1, 1] CHW floats back to uint8 HWC."""
    arr = ((x.detach().clamp(-1, 1) + 1.0) * 127.5).round().to(torch.uint8)
    return arr.permute(0, 2, 3, 1).cpu().numpy()


def _indices_sha256(indices: np.ndarray) -> str:
    return hashlib.sha256(np.asarray(indices, dtype=np.int64).tobytes()).hexdigest()


def write_manifest(
    out_dir: str | Path,
    *,
    source: str | Path,
    profile: str,
    counts: list[int],
    seed: int,
    indices: np.ndarray,
    spec: LongTailSpec | None = None,
    class_names: list[str] | None = None,
) -> Path:
    """Persist a dataset manifest plus its selected-index list."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    indices = np.asarray(indices, dtype=np.int64)
    manifest = {
        "format_version": 1,
        "source": str(Path(source).resolve()),
        "profile": profile,
        "spec": spec.to_dict() if spec is not None else None,
        "counts": [int(c) for c in counts],
        "total": int(sum(counts)),
        "seed": int(seed),
        "class_names": class_names or list(CIFAR10_CLASS_NAMES),
        "indices_sha256": _indices_sha256(indices),
    }
    (out / "indices.json").write_text(json.dumps(indices.tolist()))
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_manifest(manifest_path: str | Path) -> dict:
    path = Path(manifest_path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.is_file():
        raise DatasetNotFoundError(f"no manifest at {manifest_path}")
    manifest = json.loads(path.read_text())
    manifest["_path"] = str(path)
    return manifest


def manifest_hash(manifest: dict) -> str:
    """Content hash identifying a dataset build (used to key metric caches)."""
    stable = {k: v for k, v in manifest.items() if not k.startswith("_")}
    return hashlib.sha256(json.dumps(stable, sort_keys=True).encode()).hexdigest()


def dataset_from_manifest(manifest: dict, source: str | Path | None = None) -> LabeledImageSet:
    """Materialize the subset a manifest describes from its CIFAR-10 source."""
    indices_path = Path(manifest["_path"]).parent / "indices.json"
    if not indices_path.is_file():
        raise DatasetNotFoundError(f"no index list next to manifest: {indices_path}")
    indices = np.asarray(json.loads(indices_path.read_text()), dtype=np.int64)
    if _indices_sha256(indices) != manifest["indices_sha256"]:
        raise CorruptDataError(f"{indices_path}: index list does not match manifest hash")
    full = load_cifar10(source if source is not None else manifest["source"])
    subset = full.select(indices)
    if subset.per_class_counts != manifest["counts"]:
        raise CorruptDataError(f"{indices_path}: realized counts differ from manifest counts")
    return subset
