import numpy as np
import pytest
import torch

from dgan.models import Discriminator, EncoderSpec, Generator, GeneratorSpec, init_weights

RECORD_BYTES = 3073


# ten saturated, well-separated base colors: distribution statistics sit far
# from anything an untrained generator emits, and matching them is the first
# thing a working GAN learns
_PALETTE = np.array(
    [
        (245, 10, 10), (10, 245, 10), (10, 10, 245), (245, 245, 10), (245, 10, 245),
        (10, 245, 245), (250, 120, 5), (5, 120, 250), (120, 250, 5), (250, 5, 120),
    ],
    dtype=np.float64,
)


def make_cifar_images(n, seed=0):
    """Synthetic 32x32x3 uint8 images with strong class-dependent statistics.

    Class c: a saturated background color plus a band of a second palette
    color at a random vertical offset, with mild noise.
    """
    rng = np.random.default_rng(seed)
    images = np.empty((n, 32, 32, 3), dtype=np.uint8)
    labels = np.arange(n) % 10
    for i in range(n):
        c = labels[i]
        img = np.broadcast_to(_PALETTE[c], (32, 32, 3)).copy()
        band_top = int(rng.integers(0, 28))
        img[band_top : band_top + 4, :, :] = _PALETTE[(c + 3) % 10]
        img += rng.normal(0, 4, size=(32, 32, 3))
        images[i] = np.clip(img, 0, 255).astype(np.uint8)
    return images, labels.astype(np.int64)


def write_cifar_dir(root, n_per_file=10_000, n_files=5, seed=0):
    """Write a CIFAR-10-binary-format directory with balanced classes."""
    root.mkdir(parents=True, exist_ok=True)
    for b in range(n_files):
        images, labels = make_cifar_images(n_per_file, seed=seed + b)
        records = np.empty((n_per_file, RECORD_BYTES), dtype=np.uint8)
        records[:, 0] = labels
        records[:, 1:] = images.transpose(0, 3, 1, 2).reshape(n_per_file, -1)
        (root / f"data_batch_{b + 1}.bin").write_bytes(records.tobytes())
    return root


@pytest.fixture(scope="session")
def cifar_dir(tmp_path_factory):
    """Full-size synthetic CIFAR-10 source (50,000 records, 5,000 per class)."""
    return write_cifar_dir(tmp_path_factory.mktemp("cifar") / "cifar-10-batches-bin")


@pytest.fixture(scope="session")
def small_cifar_dir(tmp_path_factory):
    """Small synthetic source (1,000 records, 100 per class) for fast tests."""
    return write_cifar_dir(
        tmp_path_factory.mktemp("cifar-small") / "cifar-10-batches-bin",
        n_per_file=200,
    )


def tiny_generator(seed=0, base=8):
    gen = Generator(GeneratorSpec(base_channels=base))
    init_weights(gen, torch.Generator().manual_seed(seed))
    return gen


def tiny_discriminator(seed=0, base=8, feature_dim=32, proj_dim=16, batchnorm=False):
    disc = Discriminator(
        EncoderSpec(base_channels=base, feature_dim=feature_dim, use_batchnorm=batchnorm),
        proj_dim=proj_dim,
    )
    init_weights(disc, torch.Generator().manual_seed(seed))
    return disc


def param_checksum(module):
    return {name: p.detach().clone() for name, p in module.named_parameters()}


def params_equal(a, b):
    return set(a) == set(b) and all(torch.equal(a[k], b[k]) for k in a)


def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per acceptance criterion at the end of the run."""
    lines = {}
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, ""):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_criterion" in nodeid:
                name = nodeid.split("::")[-1]
                lines[name] = "PASS" if status == "passed" else "FAIL"
    if lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name in sorted(lines):
            terminalreporter.write_line(f"{lines[name]}  {name}")
