"""Run-directory persistence and report generation.

Metric records append to reports/metrics.jsonl inside each run directory;
the report command collects one or more runs and emits the three table
layouts (overall FID/IS grid, per-class deviation, major/minor per-class
FID) as CSV and markdown, plus a loss-curve plot per run. Regeneration
from untouched run directories is byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

from . import __version__ as _version
from .data import CIFAR10_SHORT_NAMES, load_manifest
from .errors import MissingMetricError
from .training import VARIANTS, read_timings

_FLOAT_FMT = "{:.4f}"


def append_metric_record(run_dir: str | Path, record: dict) -> Path:
    path = Path(run_dir) / "reports" / "metrics.jsonl"
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
    return path


def read_metric_records(run_dir: str | Path) -> list[dict]:
    path = Path(run_dir) / "reports" / "metrics.jsonl"
    if not path.is_file():
        return []
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def latest_record(records: list[dict], name: str) -> dict | None:
    hits = [r for r in records if r.get("name") == name]
    return hits[-1] if hits else None


@dataclass
class RunInfo:
    run_id: str
    run_dir: Path
    variant: str
    dataset_label: str
    config: dict
    records: list[dict] = field(default_factory=list)
    timings: list[dict] = field(default_factory=list)


def load_run(run_dir: str | Path) -> RunInfo:
    run_dir = Path(run_dir)
    config_path = run_dir / "config.json"
    if not config_path.is_file():
        raise MissingMetricError(f"{run_dir}: not a run directory (no config.json)")
    config = json.loads(config_path.read_text())
    label = config.get("dataset", "?")
    manifest_path = run_dir / "manifest.json"
    if manifest_path.is_file():
        label = load_manifest(manifest_path).get("profile", label)
    return RunInfo(
        run_id=run_dir.name,
        run_dir=run_dir,
        variant=config.get("variant", "?"),
        dataset_label=label,
        config=config,
        records=read_metric_records(run_dir),
        timings=read_timings(run_dir),
    )


@dataclass
class RunReport:
    """Persisted summary of one experiment run."""

    run_id: str
    variant: str
    dataset_label: str
    version: str
    config: dict
    records: list[dict]
    artifacts: list[str]
    timings: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "variant": self.variant,
            "dataset_label": self.dataset_label,
            "version": self.version,
            "config": self.config,
            "records": self.records,
            "artifacts": self.artifacts,
            "timings": self.timings,
        }


def _fmt(value) -> str:
    return _FLOAT_FMT.format(value)


def _write_csv(path: Path, header: list[str], rows: list[list[str]]):
    lines = [",".join(header)] + [",".join(row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


def _write_markdown(path: Path, title: str, header: list[str], rows: list[list[str]]):
    lines = [f"# {title}", "", "| " + " | ".join(header) + " |",
             "|" + "|".join(["---"] * len(header)) + "|"]
    lines += ["| " + " | ".join(row) + " |" for row in rows]
    path.write_text("\n".join(lines) + "\n")


def _ordered_variants(runs: list[RunInfo]) -> list[str]:
    present = {r.variant for r in runs}
    return [v for v in VARIANTS if v in present] + sorted(present - set(VARIANTS))


def _ordered_datasets(runs: list[RunInfo]) -> list[str]:
    seen: list[str] = []
    for r in runs:
        if r.dataset_label not in seen:
            seen.append(r.dataset_label)
    return seen


def build_overall_table(runs: list[RunInfo]) -> tuple[list[str], list[list[str]]]:
    """FID / IS(mean) / IS(std) grid: one row per dataset, one column group
    per variant. Every (variant, dataset) cell present in the runs must have
    fid and is records."""
    variants = _ordered_variants(runs)
    datasets = _ordered_datasets(runs)
    by_cell: dict[tuple[str, str], RunInfo] = {}
    for r in runs:
        by_cell[(r.variant, r.dataset_label)] = r

    header = ["dataset"]
    for v in variants:
        header += [f"{v}_fid", f"{v}_is_mean", f"{v}_is_std"]
    rows = []
    for ds in datasets:
        row = [ds]
        for v in variants:
            run = by_cell.get((v, ds))
            if run is None:
                raise MissingMetricError(f"no run for cell (variant={v}, dataset={ds})")
            fid_rec = latest_record(run.records, "fid")
            is_rec = latest_record(run.records, "is")
            for metric, rec in (("fid", fid_rec), ("is", is_rec)):
                if rec is None:
                    raise MissingMetricError(
                        f"missing metric record (variant={v}, dataset={ds}, metric={metric})"
                    )
            row += [
                _fmt(fid_rec["value"]),
                _fmt(is_rec["value"]["mean"]),
                _fmt(is_rec["value"]["std"]),
            ]
        rows.append(row)
    return header, rows


def build_deviation_table(runs: list[RunInfo]) -> tuple[list[str], list[list[str]]]:
    class_names = None
    rows = []
    for r in runs:
        rec = latest_record(r.records, "deviation")
        if rec is None:
            continue
        per_class = rec["value"]["per_class"]
        if class_names is None:
            class_names = (
                CIFAR10_SHORT_NAMES if len(per_class) == 10 else [str(i) for i in range(len(per_class))]
            )
        rows.append([r.dataset_label, r.variant] + [_fmt(v) for v in per_class]
                    + [_fmt(rec["value"]["mean"])])
    header = ["dataset", "model"] + (class_names or []) + ["mean"]
    return header, rows


def build_class_fid_table(runs: list[RunInfo]) -> tuple[list[str], list[list[str]]]:
    rows = []
    for r in runs:
        rec = latest_record(r.records, "per_class_fid")
        if rec is None:
            continue
        values = rec["value"]
        majors = rec.get("params", {}).get("major_classes", [])
        minors = rec.get("params", {}).get("minor_classes", [])
        fid_rec = latest_record(r.records, "fid")
        total = _fmt(fid_rec["value"]) if fid_rec else ""

        def group_mean(names):
            vals = [values[n] for n in names if n in values]
            return _fmt(sum(vals) / len(vals)) if vals else ""

        rows.append([r.variant, r.dataset_label, total, group_mean(majors), group_mean(minors)])
    header = ["model", "dataset", "total_fid", "major_fid", "minor_fid"]
    return header, rows


def plot_losses(run: RunInfo, out_path: Path):
    import matplotlib.pyplot as plt

    log_path = run.run_dir / "losses.jsonl"
    series: dict[str, tuple[list[int], list[float]]] = {}
    if log_path.is_file():
        for line in log_path.read_text().splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            steps, values = series.setdefault(rec["loss"], ([], []))
            steps.append(rec["step"])
            values.append(rec["value"])
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for name in sorted(series):
        steps, values = series[name]
        ax.plot(steps, values, label=name, linewidth=1.0)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title(run.run_id)
    if series:
        ax.legend(loc="upper right", fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path, dpi=100, metadata={"Software": None})
    plt.close(fig)


def generate_report(run_dirs: list[str | Path], out_dir: str | Path) -> list[Path]:
    """Emit the table artifacts and loss plots for a set of runs."""
    runs = [load_run(d) for d in run_dirs]
    if not runs:
        raise MissingMetricError("no run directories given")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    header, rows = build_overall_table(runs)
    _write_csv(out / "table_overall.csv", header, rows)
    _write_markdown(out / "table_overall.md", "FID and IS by variant and dataset", header, rows)
    written += [out / "table_overall.csv", out / "table_overall.md"]

    header, rows = build_deviation_table(runs)
    if rows:
        _write_csv(out / "table_deviation.csv", header, rows)
        _write_markdown(out / "table_deviation.md", "Class-distribution deviation", header, rows)
        written += [out / "table_deviation.csv", out / "table_deviation.md"]

    header, rows = build_class_fid_table(runs)
    if rows:
        _write_csv(out / "table_class_fid.csv", header, rows)
        _write_markdown(out / "table_class_fid.md", "Per-class FID (major vs minor)", header, rows)
        written += [out / "table_class_fid.csv", out / "table_class_fid.md"]

    for run in runs:
        plot_path = out / f"losses_{run.run_id}.png"
        plot_losses(run, plot_path)
        written.append(plot_path)

    for run in runs:
        report = RunReport(
            run_id=run.run_id,
            variant=run.variant,
            dataset_label=run.dataset_label,
            version=_version,
            config=run.config,
            records=run.records,
            artifacts=[str(p.name) for p in written],
            timings=run.timings,
        )
        path = out / f"report_{run.run_id}.json"
        path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
        written.append(path)
    return written
