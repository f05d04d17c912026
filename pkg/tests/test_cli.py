"""End-to-end command pipeline: artifacts, reruns, and exit codes."""

import json

import numpy as np
import pytest

from kernelbank import periodic_series
from kernelbank.cli import main

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


@pytest.fixture()
def dataset(tmp_path):
    series = periodic_series(
        300, n_sensors=2, steps_per_period=24, amplitude=100.0,
        noise_scale=4.0, seed=0, step_interval_minutes=60.0,
    )
    data = tmp_path / "series.csv"
    np.savetxt(data, series.values, delimiter=",", fmt="%.6f")
    manifest = tmp_path / "series.json"
    manifest.write_text(json.dumps({
        "steps_per_period": 24,
        "step_interval_minutes": 60.0,
        "start_timestamp": "2024-01-01T00:00:00",
    }))
    return {"data": str(data), "manifest": str(manifest), "root": tmp_path}


def base_args(dataset, out, *extra):
    return [
        "--data", dataset["data"], "--manifest", dataset["manifest"],
        "--out", str(out), "--seq-len", "6", "--pred-len", "4",
        "--layers", "3", "--tolerance", "2", *extra,
    ]


class TestBuild:
    def test_writes_banks_and_run_manifest(self, dataset):
        out = dataset["root"] / "banks"
        assert main(["build", *base_args(dataset, out)]) == 0
        assert (out / "run_manifest.json").exists()
        assert (out / "sensor_0000.bank").exists()
        assert (out / "sensor_0001.bank").exists()
        run = json.loads((out / "run_manifest.json").read_text())
        assert run["command"] == "build"
        assert run["config"]["layers"] == 3
        assert set(run["inputs"]) == {"series.csv", "series.json"}

    def test_sensor_selection(self, dataset, capsys):
        out = dataset["root"] / "banks"
        code = main(["build", *base_args(dataset, out),
                     "--sensors", "1", "--json"])
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["banks"] == [str(out / "sensor_0001.bank")]
        assert not (out / "sensor_0000.bank").exists()

    def test_missing_data_exits_2(self, dataset):
        args = base_args(dataset, dataset["root"] / "banks")
        args[args.index("--data") + 1] = str(dataset["root"] / "absent.csv")
        assert main(["build", *args]) == 2

    def test_missing_required_flag_exits_1(self, dataset):
        assert main(["build", "--data", dataset["data"]]) == 1

    def test_bad_split_exits_1(self, dataset):
        out = dataset["root"] / "banks"
        assert main(["build", *base_args(dataset, out),
                     "--split", "0.6,0.4"]) == 1

    def test_unknown_option_exits_1(self, dataset):
        assert main(["build", "--frobnicate"]) == 1


class TestPredict:
    @pytest.fixture()
    def bank_dir(self, dataset):
        out = dataset["root"] / "banks"
        assert main(["build", *base_args(dataset, out),
                     "--sensors", "0"]) == 0
        return out

    def predict_args(self, dataset, bank_dir, out, *extra):
        return [
            "predict", "--data", dataset["data"],
            "--manifest", dataset["manifest"],
            "--bank", str(bank_dir / "sensor_0000.bank"),
            "--out", str(out), *extra,
        ]

    def test_default_queries_cover_the_test_split(self, dataset, bank_dir):
        out = dataset["root"] / "pred"
        assert main(self.predict_args(dataset, bank_dir, out)) == 0
        lines = (out / "predictions.csv").read_text().strip().splitlines()
        assert lines[0] == "query_id,step_1,step_2,step_3,step_4"
        # test split [240, 300) with T=6, T'=4 holds 51 windows
        assert len(lines) == 52
        assert lines[1].startswith("245,")

    def test_explicit_queries_trace_and_figures(self, dataset, bank_dir):
        out = dataset["root"] / "pred"
        code = main(self.predict_args(
            dataset, bank_dir, out,
            "--queries", "250,260", "--trace", "--figures",
        ))
        assert code == 0
        lines = (out / "predictions.csv").read_text().strip().splitlines()
        assert [l.split(",")[0] for l in lines[1:]] == ["250", "260"]
        traces = json.loads((out / "traces.json").read_text())
        assert len(traces) == 2
        assert traces[0]["query_id"] == 250
        assert len(traces[0]["layers"]) == 3
        total = np.sum(
            [layer["prediction"] for layer in traces[0]["layers"]], axis=0
        )
        np.testing.assert_allclose(total, traces[0]["prediction"],
                                   rtol=1e-12)
        assert (out / "forecasts.png").read_bytes()[:8] == PNG_MAGIC

    def test_rerun_from_manifest_is_byte_identical(self, dataset, bank_dir):
        first = dataset["root"] / "pred1"
        second = dataset["root"] / "pred2"
        args = self.predict_args(dataset, bank_dir, first,
                                 "--queries", "250,260", "--trace")
        assert main(args) == 0
        assert main(["predict",
                     "--from-manifest", str(first / "run_manifest.json"),
                     "--out", str(second)]) == 0
        for name in ("predictions.csv", "traces.json"):
            assert (second / name).read_bytes() == (first / name).read_bytes()

    def test_explicit_flag_overrides_stored_manifest(self, dataset, bank_dir):
        first = dataset["root"] / "pred1"
        second = dataset["root"] / "pred2"
        assert main(self.predict_args(dataset, bank_dir, first,
                                      "--queries", "250")) == 0
        assert main(["predict", "--from-manifest", str(first),
                     "--out", str(second), "--layers", "1"]) == 0
        one = (second / "predictions.csv").read_text()
        full = (first / "predictions.csv").read_text()
        assert one != full
        run = json.loads((second / "run_manifest.json").read_text())
        assert run["layers"] == 1

    def test_query_without_complete_window_exits_2(self, dataset, bank_dir):
        out = dataset["root"] / "pred"
        assert main(self.predict_args(dataset, bank_dir, out,
                                      "--queries", "2")) == 2

    def test_too_many_layers_for_stored_bank_exits_3(self, dataset, bank_dir):
        out = dataset["root"] / "pred"
        assert main(self.predict_args(dataset, bank_dir, out,
                                      "--queries", "250",
                                      "--layers", "5")) == 3

    def test_corrupt_bank_exits_2(self, dataset, bank_dir):
        bank_path = bank_dir / "sensor_0000.bank"
        blob = bytearray(bank_path.read_bytes())
        blob[len(blob) // 2] ^= 0xFF
        bank_path.write_bytes(bytes(blob))
        out = dataset["root"] / "pred"
        assert main(self.predict_args(dataset, bank_dir, out)) == 2

    def test_json_error_reporting(self, dataset, bank_dir, capsys):
        out = dataset["root"] / "pred"
        code = main(self.predict_args(dataset, bank_dir, out,
                                      "--queries", "2", "--json"))
        assert code == 2
        err = json.loads(capsys.readouterr().err)
        assert err["error"]["type"] == "data"
        assert err["exit_code"] == 2


class TestEvaluate:
    def test_writes_metrics_and_summary(self, dataset, capsys):
        out = dataset["root"] / "eval"
        code = main(["evaluate", *base_args(dataset, out), "--json"])
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert "average" in payload
        lines = (out / "metrics.csv").read_text().strip().splitlines()
        assert len(lines) == 4
        summary = json.loads((out / "summary.json").read_text())
        assert summary["metrics"]["average"]["mae"] == \
            payload["average"]["mae"]
        assert summary["historical_inertia"]["average"]["mae"] == \
            payload["historical_inertia"]["mae"]
        assert len(summary["near_zero_ratio"]["per_sensor"]) == 2
        assert summary["config"]["seq_len"] == 6

    def test_figures_flag_renders_png(self, dataset):
        out = dataset["root"] / "eval"
        assert main(["evaluate", *base_args(dataset, out),
                     "--figures"]) == 0
        assert (out / "metrics.png").read_bytes()[:8] == PNG_MAGIC

    def test_on_split_and_threads(self, dataset):
        out = dataset["root"] / "eval"
        assert main(["evaluate", *base_args(dataset, out),
                     "--on-split", "validation", "--threads", "2"]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["on_split"] == "validation"

    def test_rerun_from_manifest_is_byte_identical(self, dataset):
        first = dataset["root"] / "eval1"
        second = dataset["root"] / "eval2"
        assert main(["evaluate", *base_args(dataset, first), "--pooled"]) == 0
        assert main(["evaluate", "--from-manifest", str(first),
                     "--out", str(second)]) == 0
        for name in ("metrics.csv", "summary.json"):
            assert (second / name).read_bytes() == (first / name).read_bytes()


class TestSweep:
    def test_layer_sweep_artifacts(self, dataset):
        out = dataset["root"] / "sweep"
        code = main(["sweep", *base_args(dataset, out),
                     "--axis", "layers", "--grid", "1,2,3", "--figures"])
        assert code == 0
        lines = (out / "sweep.csv").read_text().strip().splitlines()
        assert len(lines) == 4
        payload = json.loads((out / "sweep.json").read_text())
        assert [p["value"] for p in payload["points"]] == [1, 2, 3]
        assert (out / "sweep.png").read_bytes()[:8] == PNG_MAGIC

    def test_missing_axis_exits_1(self, dataset):
        out = dataset["root"] / "sweep"
        assert main(["sweep", *base_args(dataset, out),
                     "--grid", "1,2"]) == 1

    def test_scaling_grid(self, dataset):
        out = dataset["root"] / "sweep"
        assert main(["sweep", *base_args(dataset, out), "--axis", "scaling",
                     "--grid", "exp,invsq"]) == 0
        payload = json.loads((out / "sweep.json").read_text())
        assert [p["value"] for p in payload["points"]] == ["exp", "invsq"]


class TestExplain:
    def test_writes_reports_with_day_summaries(self, dataset):
        out = dataset["root"] / "explain"
        code = main(["explain", *base_args(dataset, out),
                     "--query", "250", "--figures"])
        assert code == 0
        payload = json.loads((out / "contributions_q250.json").read_text())
        assert payload["query_id"] == 250
        assert payload["by_day"] is not None
        assert payload["by_weekday"] is not None
        assert (out / "contributions_q250.csv").exists()
        assert (out / "contributions_q250.png").read_bytes()[:8] == PNG_MAGIC

    def test_reuses_a_built_bank(self, dataset):
        banks = dataset["root"] / "banks"
        assert main(["build", *base_args(dataset, banks),
                     "--sensors", "1"]) == 0
        out = dataset["root"] / "explain"
        code = main(["explain", "--data", dataset["data"],
                     "--manifest", dataset["manifest"], "--out", str(out),
                     "--bank", str(banks / "sensor_0001.bank"),
                     "--query", "250,260"])
        assert code == 0
        assert (out / "contributions_q250.json").exists()
        assert (out / "contributions_q260.json").exists()
        run = json.loads((out / "run_manifest.json").read_text())
        assert run["sensors"] == [1]

    def test_multi_sensor_selection_exits_1(self, dataset):
        out = dataset["root"] / "explain"
        assert main(["explain", *base_args(dataset, out),
                     "--query", "250", "--sensors", "0,1"]) == 1

    def test_requires_query(self, dataset):
        out = dataset["root"] / "explain"
        assert main(["explain", *base_args(dataset, out)]) == 1
