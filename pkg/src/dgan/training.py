"""Adversarial training orchestration for the three variants.

One train_step = one discriminator update plus, every d_steps_per_g_step
calls, one generator update. All randomness (init, latents, augmentation,
batch order) comes from named substreams of the config seed, so a (config,
seed) pair fully determines the loss log and any run can resume from a
checkpoint with an identical continuation.
"""

from __future__ import annotations

import dataclasses
import json
import os
import re
import time
from dataclasses import dataclass, field
from pathlib import Path

import torch

from . import data as data_mod
from .augment import AugmentationPolicy, simclr_view, simclr_views
from .errors import ConfigError, ContractViolationError, TrainingDivergedError
from .losses import LossValue, d_head_loss, dcgan_bce_losses, g_loss, ntxent, supcon_fake
from .models import (
    Discriminator,
    EncoderSpec,
    Generator,
    GeneratorSpec,
    init_weights,
)
from .pruning import (
    DamageConfig,
    PruneMask,
    compute_prune_masks,
    damage_real_loss,
    pack_mask,
    should_refresh,
    unpack_mask,
)
from .seeding import derive_seed, np_rng, torch_generator

VARIANTS = ("dcgan", "contrad", "damage")
CHECKPOINT_FORMAT_VERSION = 1
DATA_DIR_ENV = "DGAN_DATA_DIR"


@dataclass
class OptimizerConfig:
    kind: str = "adam"
    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999

    def __post_init__(self):
        if self.kind != "adam":
            raise ConfigError(f"unsupported optimizer kind {self.kind!r}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizerConfig":
        return cls(**{k: d[k] for k in ("kind", "learning_rate", "beta1", "beta2") if k in d})


@dataclass
class ModelConfig:
    gen_base_channels: int = 64
    enc_base_channels: int = 64
    feature_dim: int = 512
    proj_dim: int = 128
    negative_slope: float = 0.2
    # None resolves per variant: batch norm on for dcgan, off for the
    # contrastive variants (two-view batches would couple the statistics)
    encoder_batchnorm: bool | None = None
    # contrastive variants: scalar and fake-projection heads see detached
    # encoder features, so only the real-view contrast shapes the encoder
    stop_gradient_heads: bool = True

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class TrainConfig:
    variant: str
    dataset: str
    total_steps: int
    batch_size: int = 64
    d_steps_per_g_step: int = 1
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    augment: AugmentationPolicy = field(default_factory=AugmentationPolicy)
    tau: float = 0.1
    lambda_con: float = 1.0
    lambda_dis: float = 1.0
    damage: DamageConfig | None = None
    seed: int = 0
    checkpoint_every: int = 0  # 0: only the initial and final checkpoints
    eval_every: int = 0  # extra checkpoint snapshots for offline evaluation

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.total_steps < 0:
            raise ConfigError("total_steps must be >= 0")
        if self.batch_size < 4:
            raise ConfigError("batch_size must be >= 4 (contrastive minimum)")
        if self.d_steps_per_g_step < 1:
            raise ConfigError("d_steps_per_g_step must be >= 1")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.lambda_con < 0 or self.lambda_dis < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.checkpoint_every < 0 or self.eval_every < 0:
            raise ConfigError("checkpoint_every and eval_every must be >= 0")
        if self.variant == "damage" and self.damage is None:
            self.damage = DamageConfig()

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "dataset": self.dataset,
            "total_steps": self.total_steps,
            "batch_size": self.batch_size,
            "d_steps_per_g_step": self.d_steps_per_g_step,
            "optimizer": self.optimizer.to_dict(),
            "model": self.model.to_dict(),
            "augment": self.augment.to_dict(),
            "tau": self.tau,
            "lambda_con": self.lambda_con,
            "lambda_dis": self.lambda_dis,
            "damage": self.damage.to_dict() if self.damage else None,
            "seed": self.seed,
            "checkpoint_every": self.checkpoint_every,
            "eval_every": self.eval_every,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        missing = [k for k in ("variant", "dataset", "total_steps") if k not in d]
        if missing:
            raise ConfigError(f"config missing required field(s): {', '.join(missing)}")
        kwargs = dict(
            variant=d["variant"],
            dataset=str(d["dataset"]),
            total_steps=int(d["total_steps"]),
        )
        for k in ("batch_size", "d_steps_per_g_step", "seed", "checkpoint_every", "eval_every"):
            if k in d:
                kwargs[k] = int(d[k])
        for k in ("tau", "lambda_con", "lambda_dis"):
            if k in d:
                kwargs[k] = float(d[k])
        if "optimizer" in d:
            kwargs["optimizer"] = OptimizerConfig.from_dict(d["optimizer"])
        if "model" in d:
            kwargs["model"] = ModelConfig.from_dict(d["model"])
        if "augment" in d:
            kwargs["augment"] = AugmentationPolicy.from_dict(d["augment"])
        if d.get("damage") is not None:
            kwargs["damage"] = DamageConfig.from_dict(d["damage"])
        return cls(**kwargs)


@dataclass
class TrainState:
    generator: Generator
    discriminator: Discriminator
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    mask: PruneMask | None = None
    step: int = 0


@dataclass
class RunArtifacts:
    run_dir: Path
    loss_log: Path
    checkpoints: list[Path]
    manifest_path: Path | None
    state: TrainState


def _encoder_batchnorm(config: TrainConfig) -> bool:
    if config.model.encoder_batchnorm is not None:
        return config.model.encoder_batchnorm
    return config.variant == "dcgan"


def build_state(config: TrainConfig) -> TrainState:
    """Fresh models and optimizers, deterministically initialized."""
    m = config.model
    gen = Generator(GeneratorSpec(base_channels=m.gen_base_channels))
    disc = Discriminator(
        EncoderSpec(
            base_channels=m.enc_base_channels,
            feature_dim=m.feature_dim,
            negative_slope=m.negative_slope,
            use_batchnorm=_encoder_batchnorm(config),
        ),
        proj_dim=m.proj_dim,
    )
    init_weights(gen, torch_generator(config.seed, "init", "generator"))
    init_weights(disc, torch_generator(config.seed, "init", "discriminator"))
    opt = config.optimizer
    opt_g = torch.optim.Adam(gen.parameters(), lr=opt.learning_rate, betas=(opt.beta1, opt.beta2))
    opt_d = torch.optim.Adam(disc.parameters(), lr=opt.learning_rate, betas=(opt.beta1, opt.beta2))
    mask = None
    if config.variant == "damage":
        mask = compute_prune_masks(
            dict(disc.encoder.named_parameters()), config.damage, created_at_epoch=0
        )
    return TrainState(gen, disc, opt_g, opt_d, mask=mask, step=0)


def _latents(config: TrainConfig, step: int, substep: str) -> torch.Tensor:
    g = torch_generator(config.seed, "latent", step, substep)
    return torch.randn(config.batch_size, GeneratorSpec().latent_dim, generator=g)


def _policy(config: TrainConfig) -> AugmentationPolicy:
    p = config.augment
    return AugmentationPolicy(
        crop_scale_range=p.crop_scale_range,
        flip_probability=p.flip_probability,
        color_jitter_strength=p.color_jitter_strength,
        grayscale_probability=p.grayscale_probability,
        seed_root=derive_seed(config.seed, "aug"),
    )


def _record(rec: dict, step: int, lv: LossValue, total_key: str | None = None):
    for name, value in lv.components.items():
        if not torch.isfinite(torch.as_tensor(value)):
            raise TrainingDivergedError(step, name)
        rec[name] = value
    if total_key is not None:
        if not lv.is_finite():
            raise TrainingDivergedError(step, total_key)
        rec[total_key] = lv.item()


def _zero_grads(state: TrainState):
    state.opt_d.zero_grad(set_to_none=True)
    state.opt_g.zero_grad(set_to_none=True)


def _dcgan_step(state: TrainState, real: torch.Tensor, config: TrainConfig, g_turn: bool) -> dict:
    rec: dict[str, float] = {}
    step = state.step
    disc, gen = state.discriminator, state.generator

    real_scores = disc.score(disc.encode(real))
    fake = gen(_latents(config, step, "d")).detach()
    fake_scores = disc.score(disc.encode(fake))
    d_lv, _ = dcgan_bce_losses(real_scores, fake_scores)
    _record(rec, step, d_lv, "d_total")
    d_lv.value.backward()
    state.opt_d.step()
    _zero_grads(state)

    if g_turn:
        fake = gen(_latents(config, step, "g"))
        scores = disc.score(disc.encode(fake))
        _, g_lv = dcgan_bce_losses(real_scores.detach(), scores)
        _record(rec, step, g_lv, "g_total")
        g_lv.value.backward()
        state.opt_g.step()
        _zero_grads(state)
    return rec


def _contrastive_step(
    state: TrainState,
    real: torch.Tensor,
    config: TrainConfig,
    epoch: int,
    batch_index: int,
    g_turn: bool,
) -> dict:
    rec: dict[str, float] = {}
    step = state.step
    disc, gen = state.discriminator, state.generator
    policy = _policy(config)
    detach = config.model.stop_gradient_heads

    v1, v2 = simclr_views(real, policy, epoch, batch_index)
    f1 = disc.encode(v1)
    f2 = disc.encode(v2)

    if config.variant == "damage":
        real_lv = damage_real_loss(disc.encoder, disc.project_real, state.mask, v1, v2, config.tau)
    else:
        real_lv = ntxent(disc.project_real(f1), disc.project_real(f2), config.tau)
    rec["real_contrast"] = real_lv.item()
    if not real_lv.is_finite():
        raise TrainingDivergedError(step, "real_contrast")

    fake = gen(_latents(config, step, "d")).detach()
    fake_view = simclr_view(fake, policy, epoch, batch_index, view_id=2)
    ff = disc.encode(fake_view)

    def maybe_detach(t: torch.Tensor) -> torch.Tensor:
        return t.detach() if detach else t

    supcon_lv = supcon_fake(
        disc.project_fake(maybe_detach(ff)),
        disc.project_fake(maybe_detach(f1)),
        disc.project_fake(maybe_detach(f2)),
        config.tau,
    )
    _record(rec, step, supcon_lv)

    real_scores = disc.score(maybe_detach(torch.cat([f1, f2], dim=0)))
    fake_scores = disc.score(maybe_detach(ff))
    adv_lv = d_head_loss(real_scores, fake_scores)
    _record(rec, step, adv_lv, "d_head")

    total = real_lv.value + config.lambda_con * supcon_lv.value + config.lambda_dis * adv_lv.value
    if not torch.isfinite(total.detach()):
        raise TrainingDivergedError(step, "d_total")
    rec["d_total"] = float(total.detach())
    total.backward()
    state.opt_d.step()
    _zero_grads(state)

    if g_turn:
        fake = gen(_latents(config, step, "g"))
        fake_view = simclr_view(fake, policy, epoch, batch_index, view_id=3)
        scores = disc.score(disc.encode(fake_view))
        g_lv = g_loss(scores)
        _record(rec, step, g_lv, "g_total")
        g_lv.value.backward()
        state.opt_g.step()
        _zero_grads(state)
    return rec


def train_step(
    state: TrainState,
    real_batch: torch.Tensor,
    config: TrainConfig,
    epoch: int = 0,
    batch_index: int | None = None,
) -> tuple[TrainState, dict]:
    """One discriminator update (plus a generator update every
    d_steps_per_g_step calls). Returns the mutated state and the step's
    loss record."""
    if real_batch.ndim != 4 or real_batch.shape[0] < 4:
        raise ContractViolationError(
            f"real batch must be (b>=4, 3, 32, 32), got {tuple(real_batch.shape)}"
        )
    if config.variant == "damage" and state.mask is None:
        raise ConfigError("damage variant requires a prune mask on the state")
    bi = batch_index if batch_index is not None else state.step
    g_turn = (state.step + 1) % config.d_steps_per_g_step == 0
    if config.variant == "dcgan":
        rec = _dcgan_step(state, real_batch, config, g_turn)
    else:
        rec = _contrastive_step(state, real_batch, config, epoch, bi, g_turn)
    record = {"step": state.step, "epoch": epoch, "losses": rec}
    state.step += 1
    return state, record


def save_checkpoint(path: str | Path, state: TrainState, config: TrainConfig) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "step": state.step,
        "config": config.to_dict(),
        "generator": state.generator.state_dict(),
        "discriminator": state.discriminator.state_dict(),
        "opt_g": state.opt_g.state_dict(),
        "opt_d": state.opt_d.state_dict(),
        "mask": pack_mask(state.mask) if state.mask is not None else None,
        "rng": {"scheme": "derived-substreams", "seed": config.seed},
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path: str | Path) -> tuple[TrainState, TrainConfig]:
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ConfigError(f"unsupported checkpoint format version {version!r}")
    config = TrainConfig.from_dict(payload["config"])
    state = build_state(config)
    state.generator.load_state_dict(payload["generator"])
    state.discriminator.load_state_dict(payload["discriminator"])
    state.opt_g.load_state_dict(payload["opt_g"])
    state.opt_d.load_state_dict(payload["opt_d"])
    state.mask = unpack_mask(payload["mask"]) if payload["mask"] is not None else None
    state.step = int(payload["step"])
    return state, config


def _checkpoint_path(run_dir: Path, step: int) -> Path:
    return run_dir / "checkpoints" / f"step-{step}.pt"


def list_checkpoints(run_dir: str | Path) -> list[tuple[int, Path]]:
    ckpt_dir = Path(run_dir) / "checkpoints"
    found = []
    if ckpt_dir.is_dir():
        for p in ckpt_dir.iterdir():
            m = re.fullmatch(r"step-(\d+)\.pt", p.name)
            if m:
                found.append((int(m.group(1)), p))
    return sorted(found)


def resolve_dataset(
    config: TrainConfig, run_dir: Path, data_dir: str | Path | None = None
) -> tuple[data_mod.LabeledImageSet, Path]:
    """Materialize the configured dataset and persist its manifest in the run dir."""
    if config.dataset in data_mod.PROFILE_NAMES:
        source = data_dir or os.environ.get(DATA_DIR_ENV)
        if not source:
            raise ConfigError(
                f"dataset profile {config.dataset!r} needs a CIFAR-10 source: "
                f"pass --data-dir or set {DATA_DIR_ENV}"
            )
        full = data_mod.load_cifar10(source)
        counts, spec = data_mod.profile_counts(config.dataset, full)
        ds_seed = derive_seed(config.seed, "dataset")
        indices = data_mod.subset_indices(full, counts, ds_seed)
        manifest_path = data_mod.write_manifest(
            run_dir,
            source=source,
            profile=config.dataset,
            counts=counts,
            seed=ds_seed,
            indices=indices,
            spec=spec,
            class_names=full.class_names,
        )
        return full.select(indices), manifest_path
    manifest = data_mod.load_manifest(config.dataset)
    ds = data_mod.dataset_from_manifest(manifest)
    src = Path(manifest["_path"]).parent
    manifest_path = run_dir / "manifest.json"
    if manifest_path.resolve() != Path(manifest["_path"]).resolve():
        manifest_path.write_text(Path(manifest["_path"]).read_text())
        (run_dir / "indices.json").write_text((src / "indices.json").read_text())
    return ds, manifest_path


def append_timing(run_dir: str | Path, phase: str, seconds: float, **extra):
    """Record a wall-clock phase duration under reports/timings.json."""
    path = Path(run_dir) / "reports" / "timings.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = json.loads(path.read_text()) if path.is_file() else []
    entries.append({"phase": phase, "seconds": round(seconds, 3), **extra})
    path.write_text(json.dumps(entries, indent=2) + "\n")


def read_timings(run_dir: str | Path) -> list[dict]:
    path = Path(run_dir) / "reports" / "timings.json"
    return json.loads(path.read_text()) if path.is_file() else []


def _truncate_loss_log(log_path: Path, before_step: int):
    if not log_path.is_file():
        return
    kept = []
    for line in log_path.read_text().splitlines():
        if not line.strip():
            continue
        if json.loads(line)["step"] < before_step:
            kept.append(line)
    log_path.write_text("".join(l + "\n" for l in kept))


def train(
    config: TrainConfig,
    out_dir: str | Path,
    data_dir: str | Path | None = None,
    resume: bool = False,
) -> RunArtifacts:
    """Run the configured training job inside `out_dir`.

    The run directory ends up with config.json, manifest.json, losses.jsonl,
    checkpoints/step-N.pt, and reports/. With resume=True the latest
    checkpoint is loaded and the continuation matches an uninterrupted run.
    """
    t_start = time.perf_counter()
    run_dir = Path(out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "reports").mkdir(exist_ok=True)
    (run_dir / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")

    ds, manifest_path = resolve_dataset(config, run_dir, data_dir)
    steps_per_epoch = len(ds) // config.batch_size
    if steps_per_epoch < 1 and config.total_steps > 0:
        raise ConfigError(
            f"dataset of {len(ds)} images cannot fill a batch of {config.batch_size}"
        )

    log_path = run_dir / "losses.jsonl"
    checkpoints: list[Path] = []

    existing = list_checkpoints(run_dir) if resume else []
    if existing:
        last_step, last_path = existing[-1]
        state, ckpt_config = load_checkpoint(last_path)
        # total_steps may grow on resume (continue an interrupted or extended
        # run); everything else must match for the continuation to be valid
        ours, theirs = config.to_dict(), ckpt_config.to_dict()
        ours.pop("total_steps"), theirs.pop("total_steps")
        if ours != theirs:
            raise ConfigError("resume config does not match the checkpointed config")
        _truncate_loss_log(log_path, state.step)
        checkpoints = [p for _, p in existing]
    else:
        state = build_state(config)
        log_path.write_text("")
        checkpoints.append(save_checkpoint(_checkpoint_path(run_dir, 0), state, config))

    with log_path.open("a") as log:
        for step in range(state.step, config.total_steps):
            epoch, bi = divmod(step, steps_per_epoch)
            if (
                config.variant == "damage"
                and bi == 0
                and should_refresh(epoch, config.damage)
                and state.mask.created_at_epoch != epoch
            ):
                state.mask = compute_prune_masks(
                    dict(state.discriminator.encoder.named_parameters()),
                    config.damage,
                    created_at_epoch=epoch,
                )
            order = np_rng(config.seed, "order", epoch).permutation(len(ds))
            idx = order[bi * config.batch_size : (bi + 1) * config.batch_size]
            real = data_mod.gan_preprocess(ds.images[idx])
            state, record = train_step(state, real, config, epoch=epoch, batch_index=bi)
            for name in sorted(record["losses"]):
                log.write(
                    json.dumps(
                        {"step": record["step"], "loss": name, "value": record["losses"][name]}
                    )
                    + "\n"
                )
            done = step + 1
            due = done == config.total_steps
            due = due or (config.checkpoint_every and done % config.checkpoint_every == 0)
            due = due or (config.eval_every and done % config.eval_every == 0)
            if due:
                path = _checkpoint_path(run_dir, done)
                if not path.exists():
                    checkpoints.append(save_checkpoint(path, state, config))
                log.flush()

    append_timing(run_dir, "train", time.perf_counter() - t_start, steps=state.step)
    return RunArtifacts(
        run_dir=run_dir,
        loss_log=log_path,
        checkpoints=checkpoints,
        manifest_path=manifest_path,
        state=state,
    )


def sample(
    generator: Generator, n: int, seed: int, chunk_size: int = 64
) -> torch.Tensor:
    """Generate n images in [-1, 1], deterministically for (params, n, seed).

    Latents are drawn in one block and pushed through the generator in
    chunks, so chunked and one-shot generation agree exactly.
    """
    if n < 1:
        raise ConfigError("sample size must be >= 1")
    z = torch.randn(n, generator.spec.latent_dim, generator=torch_generator(seed, "sample"))
    was_training = generator.training
    generator.eval()
    try:
        with torch.no_grad():
            chunks = [generator(z[i : i + chunk_size]) for i in range(0, n, chunk_size)]
    finally:
        generator.train(was_training)
    return torch.cat(chunks, dim=0)
