"""Feature extractors behind the FID/IS stack.

Two implementations of one interface: the reference Inception-v3 pool3
extractor (2048-d activations, 1000-way class posteriors, weights loaded
from a checksum-pinned local file) and a toy extractor (a small fixed-seed
random convolutional net with a linear probe) that lets the whole
evaluation pipeline run with no external weights.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, ContractViolationError, CorruptDataError

# torchvision convention: the published file name carries the first 8 hex
# chars of its sha256 (inception_v3_google-0cc3c7bd.pth)
INCEPTION_SHA256_PREFIX = "0cc3c7bd"

_IMAGENET_MEAN = (0.485, 0.456, 0.406)
_IMAGENET_STD = (0.229, 0.224, 0.225)

_TOY_SEED = 0xD06FACE


class FeatureExtractor:
    """Maps [-1, 1] image batches to feature rows and class posteriors."""

    feature_dim: int
    class_count: int
    extractor_id: str
    batch_size: int = 256

    def _forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        raise NotImplementedError

    def _run(self, images: torch.Tensor) -> tuple[np.ndarray, np.ndarray]:
        if images.ndim != 4 or images.shape[1] != 3:
            raise ContractViolationError(f"expected (n, 3, h, w) images, got {tuple(images.shape)}")
        feats, probs = [], []
        with torch.no_grad():
            for i in range(0, images.shape[0], self.batch_size):
                f, p = self._forward(images[i : i + self.batch_size].float())
                feats.append(f.cpu().numpy())
                probs.append(p.cpu().numpy())
        return (
            np.concatenate(feats).astype(np.float64),
            np.concatenate(probs).astype(np.float64),
        )

    def features(self, images: torch.Tensor) -> np.ndarray:
        return self._run(images)[0]

    def class_probs(self, images: torch.Tensor) -> np.ndarray:
        return self._run(images)[1]

    def features_and_probs(self, images: torch.Tensor) -> tuple[np.ndarray, np.ndarray]:
        return self._run(images)


class ToyFeatureExtractor(FeatureExtractor):
    """Fixed-seed random conv net + linear probe; backs all offline tests."""

    def __init__(self, feature_dim: int = 64, class_count: int = 10):
        self.feature_dim = feature_dim
        self.class_count = class_count
        self.extractor_id = f"toy-v1-d{feature_dim}"
        g = torch.Generator().manual_seed(_TOY_SEED)
        c1, c2 = max(8, feature_dim // 4), max(16, feature_dim // 2)
        self._net = nn.Sequential(
            nn.Conv2d(3, c1, 3, 2, 1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(c1, c2, 3, 2, 1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(c2, feature_dim, 3, 2, 1),
            nn.LeakyReLU(0.2),
        )
        self._probe = nn.Linear(feature_dim, class_count)
        for m in list(self._net.modules()) + [self._probe]:
            if isinstance(m, (nn.Conv2d, nn.Linear)):
                fan_in = m.weight.shape[1] * (m.weight[0, 0].numel() if m.weight.ndim > 2 else 1)
                m.weight.data.normal_(0.0, (2.0 / fan_in) ** 0.5, generator=g)
                m.bias.data.zero_()
        self._net.eval().requires_grad_(False)
        self._probe.eval().requires_grad_(False)

    def _forward(self, x):
        f = self._net(x).mean(dim=(2, 3))
        return f, torch.softmax(self._probe(f), dim=1)


class InceptionV3FeatureExtractor(FeatureExtractor):
    """Inception-v3 pool3 activations (2048-d) and 1000-way posteriors.

    Images come in as 32x32 [-1, 1] tensors and are bilinearly resized to
    299x299 then ImageNet-normalized. Weights load from a local file whose
    sha256 must start with the pinned prefix; weights_path=None builds a
    randomly initialized network (interface testing only).
    """

    feature_dim = 2048
    class_count = 1000
    extractor_id = "inception-v3-pool3"
    batch_size = 32

    def __init__(self, weights_path: str | Path | None, expected_sha256: str = INCEPTION_SHA256_PREFIX):
        import torchvision.models as tvm

        self._model = tvm.inception_v3(weights=None, init_weights=False, aux_logits=True)
        if weights_path is not None:
            path = Path(weights_path)
            if not path.is_file():
                raise ConfigError(f"inception weights file not found: {path}")
            digest = hashlib.sha256(path.read_bytes()).hexdigest()
            if not digest.startswith(expected_sha256.lower()):
                raise CorruptDataError(
                    f"{path}: sha256 {digest[:16]}... does not match pinned prefix {expected_sha256}"
                )
            self._model.load_state_dict(torch.load(path, map_location="cpu", weights_only=True))
        self._model.eval().requires_grad_(False)
        self._pool: dict[str, torch.Tensor] = {}
        self._model.avgpool.register_forward_hook(
            lambda _m, _inp, out: self._pool.__setitem__("feat", out)
        )
        mean = torch.tensor(_IMAGENET_MEAN).view(1, 3, 1, 1)
        std = torch.tensor(_IMAGENET_STD).view(1, 3, 1, 1)
        self._mean, self._std = mean, std

    def _forward(self, x):
        x = (x + 1.0) * 0.5
        x = F.interpolate(x, size=(299, 299), mode="bilinear", align_corners=False)
        x = (x - self._mean) / self._std
        logits = self._model(x)
        feat = self._pool["feat"].flatten(1)
        return feat, torch.softmax(logits, dim=1)


def get_extractor(name: str, weights_path: str | Path | None = None) -> FeatureExtractor:
    if name == "toy":
        return ToyFeatureExtractor()
    if name == "reference":
        return InceptionV3FeatureExtractor(weights_path)
    raise ConfigError(f"unknown extractor {name!r}; expected 'toy' or 'reference'")
