"""Named random substreams derived from a single root seed.

Every source of randomness in the package draws from a stream obtained via
``derive_seed(root, *tags)``, where the tags name the purpose ("dataset",
"init", "latent", ...) plus any loop indices. Identical (root, tags) tuples
yield identical streams on every platform, which is what makes training
runs, dataset builds, and evaluations reproducible end to end.
"""

from __future__ import annotations

import hashlib

import numpy as np
import torch

_MASK64 = (1 << 64) - 1


def _encode_tag(tag) -> bytes:
    if isinstance(tag, (int, np.integer)):
        return b"i" + int(tag).to_bytes(16, "little", signed=True)
    if isinstance(tag, str):
        return b"s" + tag.encode("utf-8")
    raise TypeError(f"seed tags must be int or str, got {type(tag).__name__}")


def derive_seed(root: int, *tags) -> int:
    """Derive a 64-bit substream seed from a root seed and named tags."""
    h = hashlib.blake2b(digest_size=8)
    h.update(int(root).to_bytes(16, "little", signed=True))
    for tag in tags:
        h.update(_encode_tag(tag))
    return int.from_bytes(h.digest(), "little") & _MASK64


def np_rng(root: int, *tags) -> np.random.Generator:
    """NumPy generator for the named substream."""
    return np.random.default_rng(derive_seed(root, *tags))


def torch_generator(root: int, *tags) -> torch.Generator:
    """Torch CPU generator for the named substream."""
    g = torch.Generator()
    # manual_seed accepts signed 64-bit values; keep the derived seed positive.
    g.manual_seed(derive_seed(root, *tags) >> 1)
    return g
