import json

import numpy as np
import pytest

from mnn.data import generate_corpus
from mnn.experiment import (AXES, ExperimentError, ExperimentPlan, ModuleConfig,
                            ReportTable, load_plan, make_plan, read_report_csv,
                            run, save_plan, _write_csv)


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    """One small noise-axis experiment shared by the assertions below."""
    root = tmp_path_factory.mktemp("exp")
    generate_corpus(root / "corpus", speakers=4, utterances=2, seed=11,
                    noise_seconds=20.0)
    plan = make_plan(root / "corpus", "noise", root / "plans", seed=11,
                     iterations=120, batch_size=128, hidden=[64],
                     dae_hidden=[64])
    table = run(plan, root / "out", cache_dir=root / "cache")
    return root, plan, table


class TestPlan:
    def test_json_roundtrip(self, tiny_run, tmp_path):
        _, plan, _ = tiny_run
        save_plan(plan, tmp_path / "p.json")
        back = load_plan(tmp_path / "p.json")
        assert back.to_dict() == plan.to_dict()

    def test_rejects_single_module(self):
        with pytest.raises(ExperimentError):
            ExperimentPlan(axis="noise",
                           modules=[ModuleConfig("a", "a", "m.json")],
                           daes=[], test_manifest="t.json", dae_clean_paths=[])

    def test_rejects_unknown_axis(self, tmp_path):
        with pytest.raises(ExperimentError):
            make_plan(tmp_path, "weather", tmp_path / "plans")

    def test_all_axes_build(self, tiny_run):
        root, _, _ = tiny_run
        for axis in AXES:
            plan = make_plan(root / "corpus", axis, root / f"plans_{axis}",
                             seed=1)
            assert len(plan.modules) >= 2


class TestRun:
    def test_report_files_exist(self, tiny_run):
        root, _, _ = tiny_run
        out = root / "out"
        for name in ("report.csv", "report.txt", "selection.jsonl",
                     "sdr_matrix.png", "policies_sdr.png"):
            assert (out / name).exists(), name

    def test_csv_roundtrip_matches_table(self, tiny_run):
        root, _, table = tiny_run
        cells = read_report_csv(root / "out" / "report.csv")
        for (metric, label), row in table.rows.items():
            for col, value in row.items():
                assert cells[(metric, label, col)] == value

    def test_oracle_dominates_every_column(self, tiny_run):
        _, _, table = tiny_run
        for (metric, label), row in table.rows.items():
            if metric != "SDR":
                continue
            for col, value in row.items():
                if col != "oracle":
                    assert row["oracle"] >= value - 1e-9, (label, col)

    def test_chance_near_module_mean(self, tiny_run):
        _, _, table = tiny_run
        for (metric, label), row in table.rows.items():
            mean = np.mean([row[m] for m in table.module_ids])
            spread = max(abs(row[m] - mean) for m in table.module_ids)
            assert abs(row["chance"] - mean) <= spread + 1e-9

    def test_selection_jsonl_well_formed(self, tiny_run):
        root, plan, table = tiny_run
        lines = (root / "out" / "selection.jsonl").read_text().splitlines()
        assert len(lines) == table.num_utterances * len(plan.daes)
        for line in lines:
            doc = json.loads(line)
            assert doc["chosen_ae"] in table.module_ids
            assert doc["oracle"] in table.module_ids

    def test_cached_rerun_is_identical(self, tiny_run):
        root, plan, _ = tiny_run
        run(plan, root / "out2", cache_dir=root / "cache")
        assert (root / "out" / "report.csv").read_bytes() == \
            (root / "out2" / "report.csv").read_bytes()

    def test_missing_label_rejected(self, tiny_run, tmp_path):
        root, plan, _ = tiny_run
        from mnn.data import load_manifest, save_manifest
        manifest = load_manifest(plan.test_manifest)
        for r in manifest.records:
            r.label = None
        bad = tmp_path / "bad_test.json"
        save_manifest(manifest, bad)
        import dataclasses
        plan2 = dataclasses.replace(plan, test_manifest=str(bad))
        with pytest.raises(ExperimentError):
            run(plan2, tmp_path / "out")


class TestRendering:
    def test_missing_cell_is_an_error(self, tiny_run, tmp_path):
        _, _, table = tiny_run
        broken = ReportTable(table.axis, table.module_ids + ["ghost"],
                             table.policy_ids, table.rows, table.accuracy,
                             table.num_utterances)
        with pytest.raises(ExperimentError):
            _write_csv(broken, tmp_path / "r.csv")
