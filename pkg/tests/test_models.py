import pytest
import torch

from dgan.errors import ConfigError, ContractViolationError
from dgan.models import (
    Discriminator,
    Encoder,
    EncoderSpec,
    Generator,
    GeneratorSpec,
    ProjectionHead,
    ScalarHead,
    contains_pooling,
    init_weights,
    parameter_count,
)

from .conftest import tiny_discriminator, tiny_generator
from .helpers import central_difference_grad, relative_error

# frozen at implementation time; changing an architecture must be deliberate
GENERATOR_DEFAULT_PARAMS = 1_068_928
ENCODER_DEFAULT_PARAMS = 2_756_544
ENCODER_BN_PARAMS = 2_757_440
DISCRIMINATOR_DEFAULT_PARAMS = 3_676_353


class TestGenerator:
    def test_shape_and_range(self):
        gen = tiny_generator()
        z = torch.randn(16, 100, generator=torch.Generator().manual_seed(0))
        out = gen(z)
        assert out.shape == (16, 3, 32, 32)
        assert out.abs().max() <= 1.0

    def test_inference_determinism(self):
        gen = tiny_generator().eval()
        z = torch.randn(4, 100, generator=torch.Generator().manual_seed(1))
        with torch.no_grad():
            assert torch.equal(gen(z), gen(z))

    def test_latent_dim_checked(self):
        gen = tiny_generator()
        with pytest.raises(ContractViolationError):
            gen(torch.randn(2, 64))

    def test_latent_dim_fixed_at_100(self):
        with pytest.raises(ConfigError):
            GeneratorSpec(latent_dim=64)

    def test_stage_count_must_reach_32(self):
        with pytest.raises(ConfigError):
            GeneratorSpec(num_upsample_stages=2)

    def test_latent_gradient_matches_finite_differences(self):
        gen = tiny_generator(base=4).double().eval()
        z0 = torch.randn(1, 100, generator=torch.Generator().manual_seed(2), dtype=torch.double)

        def fn(zc):
            z = z0.clone()
            z[0, 7] = zc[0]
            return gen(z).mean()

        coord = z0[0, 7].reshape(1).clone().requires_grad_(True)
        z = z0.clone()
        z[0, 7] = coord[0]
        gen(z).mean().backward()
        fd = central_difference_grad(fn, z0[0, 7].reshape(1), h=1e-3)
        assert relative_error(coord.grad.numpy(), fd.numpy(), floor=1e-6) < 1e-3


class TestEncoder:
    def test_shape(self):
        disc = tiny_discriminator(feature_dim=32)
        out = disc.encode(torch.randn(8, 3, 32, 32, generator=torch.Generator().manual_seed(0)))
        assert out.shape == (8, 32)

    @pytest.mark.parametrize("batchnorm", [False, True])
    def test_permutation_equivariance(self, batchnorm):
        enc = Encoder(EncoderSpec(base_channels=8, feature_dim=32, use_batchnorm=batchnorm)).eval()
        x = torch.randn(6, 3, 32, 32, generator=torch.Generator().manual_seed(1))
        perm = torch.tensor([3, 0, 5, 1, 4, 2])
        with torch.no_grad():
            assert torch.equal(enc(x)[perm], enc(x[perm]))

    def test_zero_input_finite(self):
        disc = tiny_discriminator()
        assert torch.isfinite(disc.encode(torch.zeros(2, 3, 32, 32))).all()

    def test_wrong_spatial_size(self):
        disc = tiny_discriminator()
        with pytest.raises(ContractViolationError):
            disc.encode(torch.randn(2, 3, 16, 16))

    def test_no_pooling_layers(self):
        assert not contains_pooling(Encoder(EncoderSpec()))
        assert not contains_pooling(Encoder(EncoderSpec(use_batchnorm=True)))

    def test_all_hidden_activations_leaky(self):
        enc = Encoder(EncoderSpec())
        acts = [m for m in enc.modules() if isinstance(m, (torch.nn.ReLU, torch.nn.LeakyReLU))]
        assert acts and all(isinstance(m, torch.nn.LeakyReLU) for m in acts)
        assert all(m.negative_slope == 0.2 for m in acts)


class TestParameterCounts:
    def test_golden_values(self):
        assert parameter_count(Generator(GeneratorSpec())) == GENERATOR_DEFAULT_PARAMS
        assert parameter_count(Encoder(EncoderSpec())) == ENCODER_DEFAULT_PARAMS
        assert parameter_count(Encoder(EncoderSpec(use_batchnorm=True))) == ENCODER_BN_PARAMS
        assert (
            parameter_count(Discriminator(EncoderSpec(), proj_dim=128))
            == DISCRIMINATOR_DEFAULT_PARAMS
        )


class TestProjectionHead:
    def test_rows_unit_norm(self):
        head = ProjectionHead(32, 16)
        z = head(torch.randn(10, 32, generator=torch.Generator().manual_seed(3)))
        assert ((z.norm(dim=1) - 1).abs() < 1e-5).all()

    def test_deterministic(self):
        head = ProjectionHead(16, 8)
        x = torch.randn(4, 16, generator=torch.Generator().manual_seed(4))
        assert torch.equal(head(x), head(x))

    def test_zero_preactivation_branch(self):
        head = ProjectionHead(8, 4)
        for p in head.parameters():
            p.data.zero_()
        z = head(torch.zeros(3, 8))
        expected = torch.zeros(3, 4)
        expected[:, 0] = 1.0
        assert torch.equal(z, expected)


class TestScalarHead:
    def test_shape_and_finite(self):
        disc = tiny_discriminator()
        scores = disc.score(torch.randn(8, 32, generator=torch.Generator().manual_seed(5)))
        assert scores.shape == (8,)
        assert torch.isfinite(scores).all()

    def test_duplicate_rows_duplicate_scores(self):
        head = ScalarHead(16)
        row = torch.randn(1, 16, generator=torch.Generator().manual_seed(6))
        scores = head(torch.cat([row, row]))
        assert scores[0] == scores[1]

    def test_feature_gradient_matches_finite_differences(self):
        head = ScalarHead(6).double()
        f0 = torch.randn(3, 6, generator=torch.Generator().manual_seed(7), dtype=torch.double)

        def fn(f):
            return head(f).mean()

        f = f0.clone().requires_grad_(True)
        fn(f).backward()
        fd = central_difference_grad(fn, f0, h=1e-4)
        assert relative_error(f.grad.numpy(), fd.numpy(), floor=1e-6) < 1e-3


def test_init_is_seed_deterministic():
    a = Generator(GeneratorSpec(base_channels=8))
    b = Generator(GeneratorSpec(base_channels=8))
    init_weights(a, torch.Generator().manual_seed(42))
    init_weights(b, torch.Generator().manual_seed(42))
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert torch.equal(pa, pb)
    c = Generator(GeneratorSpec(base_channels=8))
    init_weights(c, torch.Generator().manual_seed(43))
    assert any(not torch.equal(pa, pc) for pa, pc in zip(a.parameters(), c.parameters()))
