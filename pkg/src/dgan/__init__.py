"""DCGAN / ContraD / Damage GAN experimentation framework."""

from .augment import AugmentationPolicy, simclr_view, simclr_views
from .data import (
    LabeledImageSet,
    LongTailSpec,
    build_longtail_counts,
    build_subset,
    gan_preprocess,
    load_cifar10,
)
from .losses import LossValue, d_head_loss, dcgan_bce_losses, g_loss, ntxent, supcon_fake
from .metrics import (
    DeviationTable,
    FeatureStats,
    LinearEvaluator,
    class_deviation,
    evaluate_gan,
    fid,
    fit_linear_evaluator,
    gaussian_stats,
    inception_score,
    per_class_fid,
    train_linear_evaluator,
)
from .models import Discriminator, Encoder, EncoderSpec, Generator, GeneratorSpec
from .pruning import (
    DamageConfig,
    PruneMask,
    compute_prune_masks,
    damage_real_loss,
    pruned_forward,
    should_refresh,
)
from .training import TrainConfig, TrainState, build_state, sample, train, train_step

__version__ = "0.1.0"
