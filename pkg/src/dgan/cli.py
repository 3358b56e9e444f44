"""Command-line surface: dataset building, training, evaluation, reporting.

Exit codes follow one rule everywhere: 0 success, 1 runtime failure,
2 usage or config error. All randomness flows from --seed through named
substreams (see seeding.py), so any command with a fixed seed is
reproducible end to end.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from contextlib import contextmanager
from pathlib import Path

from . import data as data_mod
from .errors import ConfigError, DganError, RunDirLockedError, TrainingDivergedError
from .extractors import get_extractor
from .metrics import (
    LinearEvaluator,
    class_deviation,
    evaluate_gan,
    per_class_fid,
    train_linear_evaluator,
)
from .presets import load_train_config
from .report import append_metric_record, generate_report, read_metric_records
from .seeding import derive_seed
from .training import DATA_DIR_ENV, append_timing, list_checkpoints, load_checkpoint, train

VALID_METRICS = ("fid", "is", "deviation", "per-class-fid")


@contextmanager
def run_lock(run_dir: Path):
    """One command at a time per run directory."""
    run_dir.mkdir(parents=True, exist_ok=True)
    lock = run_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RunDirLockedError(f"{run_dir} is locked by another command (remove {lock} if stale)")
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _source_or_env(value: str | None) -> str:
    source = value or os.environ.get(DATA_DIR_ENV)
    if not source:
        raise ConfigError(f"no dataset source: pass --source or set {DATA_DIR_ENV}")
    return source


def cmd_build_dataset(args) -> int:
    source = _source_or_env(args.source)
    full = data_mod.load_cifar10(source)
    if args.profile in data_mod.PROFILE_NAMES:
        profile = args.profile
        counts, spec = data_mod.profile_counts(profile, full)
    else:
        spec_path = Path(args.profile)
        if not spec_path.is_file():
            raise ConfigError(
                f"--profile must be one of {data_mod.PROFILE_NAMES} or a spec JSON file; "
                f"got {args.profile!r}"
            )
        spec = data_mod.LongTailSpec.from_dict(json.loads(spec_path.read_text()))
        counts = data_mod.build_longtail_counts(spec)
        profile = spec_path.stem
    indices = data_mod.subset_indices(full, counts, args.seed)
    manifest_path = data_mod.write_manifest(
        args.out,
        source=source,
        profile=profile,
        counts=counts,
        seed=args.seed,
        indices=indices,
        spec=spec,
        class_names=full.class_names,
    )
    print(f"wrote {manifest_path}")
    print(f"{'class':<12} count")
    for name, count in zip(full.class_names, counts):
        print(f"{name:<12} {count}")
    print(f"{'total':<12} {sum(counts)}")
    return 0


def cmd_train(args) -> int:
    config = load_train_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.dataset is not None:
        overrides["dataset"] = args.dataset
    if overrides:
        raw = config.to_dict()
        raw.update(overrides)
        config = type(config).from_dict(raw)

    out = Path(args.out)
    if args.resume:
        existing = list_checkpoints(out)
        if existing and existing[-1][0] >= config.total_steps:
            print(f"already complete at step {existing[-1][0]}")
            return 0
    with run_lock(out):
        artifacts = train(config, out, data_dir=args.data_dir, resume=args.resume)
    print(f"finished at step {artifacts.state.step}; run dir {artifacts.run_dir}")
    return 0


def _resolve_checkpoint(args) -> tuple[Path, Path]:
    if args.checkpoint:
        ckpt = Path(args.checkpoint)
        run_dir = Path(args.run) if args.run else ckpt.parent.parent
    else:
        if not args.run:
            raise ConfigError("pass --run or --checkpoint")
        run_dir = Path(args.run)
        checkpoints = list_checkpoints(run_dir)
        if not checkpoints:
            raise ConfigError(f"no checkpoints under {run_dir}")
        if args.step is not None:
            by_step = dict(checkpoints)
            if args.step not in by_step:
                raise ConfigError(
                    f"no checkpoint at step {args.step}; have {sorted(by_step)}"
                )
            return by_step[args.step], run_dir
        ckpt = checkpoints[-1][1]
    if not ckpt.is_file():
        raise ConfigError(f"checkpoint not found: {ckpt}")
    return ckpt, run_dir


def _load_or_train_evaluator(run_dir: Path, ckpt: Path, dataset) -> LinearEvaluator:
    path = run_dir / "reports" / "linear_evaluator.npz"
    if path.is_file():
        return LinearEvaluator.load(path)
    print("no linear evaluator found; training one on the dataset (frozen encoder)")
    state, _ = load_checkpoint(ckpt)
    evaluator = train_linear_evaluator(state.discriminator.encoder, dataset)
    path.parent.mkdir(parents=True, exist_ok=True)
    evaluator.save(path)
    return evaluator


def _class_indices(names_or_ids: str, dataset) -> list[int]:
    out = []
    for token in names_or_ids.split(","):
        token = token.strip()
        if not token:
            continue
        if token.isdigit():
            out.append(int(token))
        elif token in dataset.class_names:
            out.append(dataset.class_names.index(token))
        else:
            raise ConfigError(f"unknown class {token!r}; classes: {dataset.class_names}")
    return out


def _write_metrics_csv(run_dir: Path):
    records = read_metric_records(run_dir)
    lines = ["name,step,seed,extractor,dataset_hash,value"]
    for rec in records:
        value = rec["value"]
        value_str = (
            f"{value:.6f}" if isinstance(value, (int, float)) else json.dumps(value, sort_keys=True).replace(",", ";")
        )
        lines.append(
            f"{rec['name']},{rec['step']},{rec['seed']},{rec['extractor']},{rec['dataset_hash']},{value_str}"
        )
    (run_dir / "reports" / "metrics.csv").write_text("\n".join(lines) + "\n")


def cmd_eval(args) -> int:
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = [m for m in metrics if m not in VALID_METRICS]
    if unknown:
        raise ConfigError(
            f"unknown metric(s) {', '.join(unknown)}; valid names: {', '.join(VALID_METRICS)}"
        )
    ckpt, run_dir = _resolve_checkpoint(args)
    manifest = data_mod.load_manifest(args.dataset if args.dataset else run_dir)
    dataset = data_mod.dataset_from_manifest(manifest)
    dataset_hash = data_mod.manifest_hash(manifest)
    extractor = get_extractor(args.extractor, args.weights)
    cache_dir = run_dir / "reports" / "cache"
    step = int(ckpt.stem.split("-")[1]) if ckpt.stem.startswith("step-") else -1
    base = {
        "step": step,
        "seed": args.seed,
        "extractor": extractor.extractor_id,
        "dataset_hash": dataset_hash,
    }

    t_start = time.perf_counter()
    with run_lock(run_dir):
        current = metrics[0] if metrics else ""
        try:
            if "fid" in metrics or "is" in metrics:
                current = "fid/is"
                result = evaluate_gan(
                    ckpt,
                    dataset,
                    extractor,
                    n_gen=args.n_gen,
                    seed=args.seed,
                    splits=args.splits,
                    cache_dir=cache_dir,
                    dataset_hash=dataset_hash,
                )
                if "fid" in metrics:
                    append_metric_record(run_dir, {**base, "name": "fid", "value": result["fid"]})
                    print(f"fid {result['fid']:.4f}")
                if "is" in metrics:
                    value = {"mean": result["is_mean"], "std": result["is_std"]}
                    append_metric_record(run_dir, {**base, "name": "is", "value": value})
                    print(f"is {result['is_mean']:.4f} +/- {result['is_std']:.4f}")

            needs_evaluator = "deviation" in metrics or "per-class-fid" in metrics
            evaluator = _load_or_train_evaluator(run_dir, ckpt, dataset) if needs_evaluator else None

            if "deviation" in metrics:
                current = "deviation"
                from .metrics import encoder_features
                from .training import sample

                state, _ = load_checkpoint(ckpt)
                pool = sample(state.generator, args.n_gen, derive_seed(args.seed, "deviation"))
                labels = evaluator.predict(encoder_features(state.discriminator.encoder, pool))
                table = class_deviation(labels, dataset.per_class_counts)
                value = {"per_class": table.per_class, "mean": table.mean}
                append_metric_record(run_dir, {**base, "name": "deviation", "value": value})
                print(f"deviation mean {table.mean:.4f}")

            if "per-class-fid" in metrics:
                current = "per-class-fid"
                majors = _class_indices(args.major_classes, dataset)
                minors = _class_indices(args.minor_classes, dataset)
                result = per_class_fid(
                    ckpt,
                    dataset,
                    extractor,
                    classes=majors + minors,
                    n_per_class=args.n_per_class,
                    evaluator=evaluator,
                    seed=args.seed,
                    n_pool=args.n_gen,
                    cache_dir=cache_dir,
                    dataset_hash=dataset_hash,
                )
                named = {dataset.class_names[c]: v for c, v in result.items()}
                record = {
                    **base,
                    "name": "per_class_fid",
                    "value": named,
                    "params": {
                        "n_per_class": args.n_per_class,
                        "major_classes": [dataset.class_names[c] for c in majors],
                        "minor_classes": [dataset.class_names[c] for c in minors],
                    },
                }
                append_metric_record(run_dir, record)
                for name, v in named.items():
                    print(f"per-class-fid {name} {v:.4f}")
        except DganError as err:
            raise DganError(f"metric {current!r} failed: {err}") from err
        _write_metrics_csv(run_dir)
        append_timing(run_dir, "eval", time.perf_counter() - t_start, metrics=metrics, step=step)
    return 0


def cmd_report(args) -> int:
    written = generate_report(args.runs, args.out)
    for path in written:
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dgan", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-dataset", help="materialize a dataset profile from CIFAR-10")
    p.add_argument("--source", help=f"CIFAR-10 binary directory (default: ${DATA_DIR_ENV})")
    p.add_argument("--profile", required=True,
                   help="full | partial | imbalanced, or a path to a long-tail spec JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("train", help="run a training job")
    p.add_argument("--config", required=True, help="config JSON path or preset name")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--dataset", default=None, help="override the config dataset (profile or manifest)")
    p.add_argument("--data-dir", default=None, help=f"CIFAR-10 source for profiles (default: ${DATA_DIR_ENV})")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--run", help="run directory (latest checkpoint unless --step)")
    p.add_argument("--checkpoint", help="explicit checkpoint path")
    p.add_argument("--step", type=int, default=None)
    p.add_argument("--dataset", help="dataset manifest (default: the run's own manifest)")
    p.add_argument("--extractor", choices=("toy", "reference"), default="toy")
    p.add_argument("--weights", default=None, help="inception weights file (reference extractor)")
    p.add_argument("--metrics", default="fid,is", help=f"comma list of {','.join(VALID_METRICS)}")
    p.add_argument("--n-gen", type=int, default=500)
    p.add_argument("--splits", type=int, default=10)
    p.add_argument("--n-per-class", type=int, default=100)
    p.add_argument("--major-classes", default="frog,ship")
    p.add_argument("--minor-classes", default="dog,truck")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="emit tables and plots for one or more runs")
    p.add_argument("runs", nargs="+", help="run directories")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except TrainingDivergedError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except DganError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
