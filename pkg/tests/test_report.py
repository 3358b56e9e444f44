import json

import pytest

from dgan.errors import MissingMetricError
from dgan.report import (
    build_class_fid_table,
    build_deviation_table,
    build_overall_table,
    generate_report,
    load_run,
)

VARIANTS = ("dcgan", "contrad", "damage")
DATASETS = ("desk_full", "desk_partial", "desk_imbalanced")


def make_run(root, variant, dataset, records, losses=None):
    run_dir = root / f"{variant}-{dataset}"
    (run_dir / "reports").mkdir(parents=True)
    (run_dir / "config.json").write_text(json.dumps({"variant": variant, "dataset": "x"}))
    (run_dir / "manifest.json").write_text(
        json.dumps({"profile": dataset, "counts": [1], "seed": 0, "indices_sha256": "", "source": ""})
    )
    with (run_dir / "reports" / "metrics.jsonl").open("w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    if losses:
        with (run_dir / "losses.jsonl").open("w") as fh:
            for step, name, value in losses:
                fh.write(json.dumps({"step": step, "loss": name, "value": value}) + "\n")
    return run_dir


def fid_is_records(fid=12.5, is_mean=3.2, is_std=0.4):
    base = {"step": 500, "seed": 0, "extractor": "toy-v1-d64", "dataset_hash": "h"}
    return [
        {**base, "name": "fid", "value": fid},
        {**base, "name": "is", "value": {"mean": is_mean, "std": is_std}},
    ]


def nine_runs(root):
    runs = []
    for i, variant in enumerate(VARIANTS):
        for j, dataset in enumerate(DATASETS):
            runs.append(make_run(root, variant, dataset, fid_is_records(fid=10 + i + j)))
    return runs


class TestOverallTable:
    def test_nine_cell_grid(self, tmp_path):
        runs = [load_run(d) for d in nine_runs(tmp_path)]
        header, rows = build_overall_table(runs)
        assert header[0] == "dataset"
        assert len(header) == 1 + 3 * 3
        assert [r[0] for r in rows] == list(DATASETS)
        assert rows[0][1] == "10.0000"  # dcgan fid on desk_full

    def test_single_run_single_row(self, tmp_path):
        run = load_run(make_run(tmp_path, "contrad", "desk_full", fid_is_records()))
        header, rows = build_overall_table([run])
        assert len(rows) == 1
        assert header == ["dataset", "contrad_fid", "contrad_is_mean", "contrad_is_std"]

    def test_missing_metric_named(self, tmp_path):
        records = fid_is_records()[:1]  # fid only, no is
        run = load_run(make_run(tmp_path, "damage", "desk_partial", records))
        with pytest.raises(MissingMetricError, match=r"variant=damage.*dataset=desk_partial.*metric=is"):
            build_overall_table([run])

    def test_latest_record_wins(self, tmp_path):
        records = fid_is_records(fid=50.0) + [
            {"name": "fid", "value": 25.0, "step": 500, "seed": 0, "extractor": "t", "dataset_hash": "h"}
        ]
        run = load_run(make_run(tmp_path, "dcgan", "desk_full", records))
        _, rows = build_overall_table([run])
        assert rows[0][1] == "25.0000"


class TestOtherTables:
    def test_deviation_table(self, tmp_path):
        rec = {
            "name": "deviation",
            "value": {"per_class": [1.0] * 10, "mean": 1.0},
            "step": 500, "seed": 0, "extractor": "t", "dataset_hash": "h",
        }
        run = load_run(make_run(tmp_path, "damage", "desk_imbalanced", fid_is_records() + [rec]))
        header, rows = build_deviation_table([run])
        assert header[:2] == ["dataset", "model"]
        assert "truck" in header
        assert rows[0][2:] == ["1.0000"] * 11

    def test_class_fid_table(self, tmp_path):
        rec = {
            "name": "per_class_fid",
            "value": {"frog": 30.0, "ship": 32.0, "dog": 40.0, "truck": 44.0},
            "params": {"major_classes": ["frog", "ship"], "minor_classes": ["dog", "truck"]},
            "step": 500, "seed": 0, "extractor": "t", "dataset_hash": "h",
        }
        run = load_run(make_run(tmp_path, "damage", "desk_imbalanced", fid_is_records(fid=28.0) + [rec]))
        header, rows = build_class_fid_table([run])
        assert rows[0] == ["damage", "desk_imbalanced", "28.0000", "31.0000", "42.0000"]


class TestGenerateReport:
    def test_report_files_and_byte_stability(self, tmp_path):
        run_dirs = nine_runs(tmp_path / "runs")
        for d in run_dirs:
            with (d / "losses.jsonl").open("w") as fh:
                for step in range(5):
                    fh.write(json.dumps({"step": step, "loss": "d_total", "value": 1.0 / (step + 1)}) + "\n")
        out1, out2 = tmp_path / "report1", tmp_path / "report2"
        first = generate_report(run_dirs, out1)
        second = generate_report(run_dirs, out2)
        assert (out1 / "table_overall.csv").is_file()
        assert (out1 / "table_overall.md").is_file()
        pngs = sorted(out1.glob("losses_*.png"))
        assert len(pngs) == 9
        for a, b in zip(sorted(p.name for p in first), sorted(p.name for p in second)):
            assert a == b
            assert (out1 / a).read_bytes() == (out2 / b).read_bytes()

    def test_regeneration_in_place_is_byte_identical(self, tmp_path):
        run_dirs = [make_run(tmp_path / "runs", "dcgan", "desk_full", fid_is_records(), losses=[(0, "d_total", 2.0)])]
        out = tmp_path / "report"
        generate_report(run_dirs, out)
        before = {p.name: p.read_bytes() for p in out.iterdir()}
        generate_report(run_dirs, out)
        after = {p.name: p.read_bytes() for p in out.iterdir()}
        assert before == after

    def test_non_run_dir_rejected(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        with pytest.raises(MissingMetricError, match="config.json"):
            generate_report([empty], tmp_path / "out")
