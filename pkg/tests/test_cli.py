"""Command-line workflows on miniature runs: artifacts, exit codes, manifests."""

import json

import numpy as np
import pytest

from chokevfm import cli
from chokevfm.hybrid import HybridModel
from chokevfm.synth import WellScenario, save_scenario

SCENARIO = dict(
    seed=11,
    duration_days=120.0,
    sampling_minutes=60.0,
    p1_initial=1.4e7,
    p2=3.0e6,
    t1=355.0,
    u_initial=0.3,
    rate_setpoint=0.014,
    decline_pa_per_day=6e3,
    u_dither=0.03,
    noise_flow=0.03,
    noise_pressure=0.005,
    eta_g=0.08,
    eta_w_start=0.18,
    eta_w_end=0.25,
)

CONFIG = """
learning_rate = 1e-3
batch_size = 64
max_epochs = 3
patience = 2
repetitions = 2
seed = 5
validation_fraction = 0.2
chunk_days = 7.0
widths = 4
window_hours = 1.0
test_span_days = 30.0
pretrain = 0
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cliruns")
    scenario_path = root / "scenario.txt"
    save_scenario(WellScenario(**SCENARIO), scenario_path)
    config_path = root / "train.cfg"
    config_path.write_text(CONFIG, encoding="utf-8")
    data_dir = root / "data"
    assert cli.main(["generate", str(scenario_path), "--out", str(data_dir)]) == 0
    return {
        "root": root,
        "scenario": scenario_path,
        "config": config_path,
        "csv": data_dir / "dataset.csv",
    }


@pytest.fixture(scope="module")
def trained(workspace):
    out = workspace["root"] / "models"
    code = cli.main([
        "train", str(workspace["csv"]), "--variant", "MM,DM,HM_EPS",
        "--config", str(workspace["config"]), "--out", str(out),
    ])
    assert code == 0
    return out


def manifest_without_clock(path):
    record = json.loads((path / "manifest.json").read_text())
    record.pop("wall_clock_seconds")
    return record


class TestGenerate:
    def test_csv_row_count(self, workspace):
        lines = workspace["csv"].read_text().splitlines()
        assert len(lines) == 1 + int(120 * 24)

    def test_same_seed_byte_identical(self, workspace, tmp_path):
        again = tmp_path / "again"
        assert cli.main(["generate", str(workspace["scenario"]), "--out", str(again)]) == 0
        assert (again / "dataset.csv").read_bytes() == workspace["csv"].read_bytes()

    def test_missing_scenario_exits_2(self, tmp_path):
        assert cli.main(["generate", str(tmp_path / "nope.txt"), "--out", str(tmp_path)]) == 2

    def test_manifest_records_inputs_and_outputs(self, workspace):
        record = manifest_without_clock(workspace["csv"].parent)
        assert record["command"] == "generate"
        assert str(workspace["scenario"]) in record["inputs"]
        assert any(p.endswith("dataset.csv") for p in record["outputs"])


class TestTrain:
    def test_mm_archive_has_six_parameters(self, trained):
        model = HybridModel.load(trained / "model_MM.json")
        assert len(model.physical_values()) == 6
        assert model.net is None

    def test_hm_eps_report_covers_both_blocks(self, trained):
        text = (trained / "training_report_HM_EPS.txt").read_text()
        assert "parameter rho_o" in text
        assert "network parameters" in text

    def test_unknown_variant_exits_2_listing_tags(self, workspace, tmp_path, capsys):
        code = cli.main([
            "train", str(workspace["csv"]), "--variant", "HM_BOGUS",
            "--config", str(workspace["config"]), "--out", str(tmp_path / "x"),
        ])
        assert code == 2
        assert "HM_A2" in capsys.readouterr().err

    def test_training_reports_written_per_variant(self, trained):
        for tag in ("MM", "DM", "HM_EPS"):
            assert (trained / f"model_{tag}.json").exists()
            assert (trained / f"training_report_{tag}.txt").exists()


class TestPredictEvaluate:
    def test_predict_writes_predictions(self, workspace, trained, tmp_path):
        out = tmp_path / "pred"
        code = cli.main([
            "predict", str(trained / "model_MM.json"), str(workspace["csv"]),
            "--config", str(workspace["config"]), "--out", str(out),
        ])
        assert code == 0
        lines = (out / "predictions.csv").read_text().splitlines()
        assert lines[0] == "timestamp,qo_pred_m3s,qo_meas_m3s"
        assert len(lines) > 10

    def test_evaluate_emits_mape_table_and_curves(self, workspace, trained, tmp_path, capsys):
        out = tmp_path / "eval"
        code = cli.main([
            "evaluate", str(workspace["csv"]),
            str(trained / "model_MM.json"), str(trained / "model_DM.json"),
            "--config", str(workspace["config"]), "--out", str(out),
        ])
        assert code == 0
        printed = capsys.readouterr().out
        assert "MM full mape" in printed and "DM full mape" in printed
        assert (out / "evaluation_MM.txt").exists()
        assert (out / "curve_DM.csv").exists()
        assert (out / "correlation.csv").exists()

    def test_sensitivity_writes_five_curves_per_variable(self, workspace, trained, tmp_path):
        out = tmp_path / "sens"
        code = cli.main([
            "sensitivity", str(workspace["csv"]), str(trained / "model_MM.json"),
            "--base-points", "5", "--config", str(workspace["config"]), "--out", str(out),
        ])
        assert code == 0
        for variable in ("u", "p1"):
            lines = (out / f"sweep_MM_{variable}.csv").read_text().splitlines()
            bases = {line.split(",")[1] for line in lines[1:]}
            assert len(bases) == 5
        summary = (out / "sensitivity_summary.txt").read_text()
        assert "MM u violations 0" in summary

    def test_consistency_on_mm_exits_2(self, trained, tmp_path, capsys):
        code = cli.main([
            "consistency", str(trained / "model_MM.json"), "--out", str(tmp_path / "c"),
        ])
        assert code == 2
        assert "no subfunction" in capsys.readouterr().err


class TestReproducibility:
    def test_rerun_train_identical_artifacts_and_manifest(self, workspace, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            code = cli.main([
                "train", str(workspace["csv"]), "--variant", "MM",
                "--config", str(workspace["config"]), "--out", str(out),
            ])
            assert code == 0
            outs.append(out)
        a, b = outs
        assert (a / "model_MM.json").read_bytes() == (b / "model_MM.json").read_bytes()
        assert (a / "training_report_MM.txt").read_bytes() == (b / "training_report_MM.txt").read_bytes()
        ma, mb = manifest_without_clock(a), manifest_without_clock(b)
        ma["outputs"] = {k.rsplit("/", 2)[-1]: v for k, v in ma["outputs"].items()}
        mb["outputs"] = {k.rsplit("/", 2)[-1]: v for k, v in mb["outputs"].items()}
        assert ma == mb
