import csv
import json
from pathlib import Path

import numpy as np
import pytest

from mfreactor import cli, rtd
from mfreactor.config import CampaignConfig, config_hash, default_config


def small_campaign_config(tmp_path, **overrides):
    cfg = {
        "design_variables": [
            {"name": "x1", "low": 0.0, "high": 1.0, "unit": ""},
            {"name": "x2", "low": 0.0, "high": 1.0, "unit": ""},
        ],
        "fidelities": [
            {"name": "z1", "low": 0.25, "high": 1.0},
            {"name": "z2", "low": 0.25, "high": 1.0},
        ],
        "evaluator": {"kind": "synthetic-benchmark", "name": "bumps2d"},
        "doe_count": 6,
        "budget_total": 3.0,
        "gp_restarts": 1,
        "acq_restarts": 4,
        "acq_local_steps": 15,
        "seed": 0,
        "output_dir": str(tmp_path / "out"),
    }
    cfg.update(overrides)
    return cfg


def write_config(tmp_path, cfg, name="campaign.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def mock_campaign_config(tmp_path, **overrides):
    cfg = default_config()
    cfg.update({
        "doe_count": 6,
        "budget_total": 1.2,
        "gp_restarts": 1,
        "acq_restarts": 4,
        "acq_local_steps": 12,
        "output_dir": str(tmp_path / "mock_out"),
        "evaluator": {"kind": "mock-reactor", "cost_base": 0.4,
                      "cost_exponents": [1.0, 1.0]},
    })
    cfg.update(overrides)
    return cfg


class TestValidate:
    def test_default_config_valid(self, tmp_path):
        path = write_config(tmp_path, default_config())
        assert cli.main(["validate", str(path)]) == 0

    def test_bad_bounds_name_surfaces(self, tmp_path, capsys):
        cfg = small_campaign_config(tmp_path)
        cfg["design_variables"][1] = {"name": "x2", "low": 2.0, "high": 1.0, "unit": ""}
        path = write_config(tmp_path, cfg)
        assert cli.main(["validate", str(path)]) == 2
        err = capsys.readouterr().err
        assert "x2" in err and "below" in err

    def test_invalid_json_reports_location(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        assert cli.main(["validate", str(path)]) == 2
        assert "line" in capsys.readouterr().err

    def test_unknown_key_rejected(self, tmp_path):
        cfg = small_campaign_config(tmp_path)
        cfg["bogus_key"] = 1
        assert cli.main(["validate", str(write_config(tmp_path, cfg))]) == 2

    def test_run_bad_config_exit_2(self, tmp_path):
        cfg = small_campaign_config(tmp_path, doe_count=1)
        assert cli.main(["run", str(write_config(tmp_path, cfg))]) == 2


class TestRun:
    def test_run_writes_products_and_exits_zero(self, tmp_path, capsys):
        cfg = small_campaign_config(tmp_path)
        assert cli.main(["run", str(write_config(tmp_path, cfg))]) == 0
        out = tmp_path / "out"
        assert (out / "trace.jsonl").exists()
        assert (out / "checkpoint.json").exists()
        assert (out / "result.json").exists()
        assert (out / "config.json").exists()
        result = json.loads((out / "result.json").read_text())
        assert result["termination_reason"] == "budget-stopping-rule"
        assert result["z_star"] == [1.0, 1.0]

    def test_mock_reactor_final_record_highest_fidelity(self, tmp_path):
        cfg = mock_campaign_config(tmp_path)
        assert cli.main(["run", str(write_config(tmp_path, cfg))]) == 0
        lines = (tmp_path / "mock_out" / "trace.jsonl").read_text().splitlines()
        last = json.loads(lines[-1])
        assert last["provenance"] == "greedy"
        assert last["z"] == [60.0, 5.0]
        # Mock reactor records carry stored curves with checksums.
        assert "rtd_file" in last["meta"] and "rtd_crc32" in last["meta"]
        assert (tmp_path / "mock_out" / last["meta"]["rtd_file"]).exists()

    def test_env_var_redirects_relative_output(self, tmp_path, monkeypatch):
        cfg = small_campaign_config(tmp_path, output_dir="rel_out")
        monkeypatch.setenv("MFREACTOR_OUTPUT_ROOT", str(tmp_path / "root"))
        assert cli.main(["run", str(write_config(tmp_path, cfg))]) == 0
        assert (tmp_path / "root" / "rel_out" / "trace.jsonl").exists()

    def test_byte_identical_reruns(self, tmp_path):
        cfg_a = small_campaign_config(tmp_path, output_dir=str(tmp_path / "a"))
        cfg_b = small_campaign_config(tmp_path, output_dir=str(tmp_path / "b"))
        assert cli.main(["run", str(write_config(tmp_path, cfg_a, "a.json"))]) == 0
        assert cli.main(["run", str(write_config(tmp_path, cfg_b, "b.json"))]) == 0
        ta = (tmp_path / "a" / "trace.jsonl").read_bytes()
        tb = (tmp_path / "b" / "trace.jsonl").read_bytes()
        assert ta == tb


class TestResume:
    def test_resume_finished_campaign_is_noop(self, tmp_path, capsys):
        cfg = small_campaign_config(tmp_path)
        assert cli.main(["run", str(write_config(tmp_path, cfg))]) == 0
        checkpoint = tmp_path / "out" / "checkpoint.json"
        before = checkpoint.read_bytes()
        assert cli.main(["resume", str(checkpoint)]) == 0
        assert "finished" in capsys.readouterr().out
        assert checkpoint.read_bytes() == before

    def test_corrupted_checkpoint_exit_2(self, tmp_path, capsys):
        bad = tmp_path / "checkpoint.json"
        bad.write_text('{"config": {, broken')
        assert cli.main(["resume", str(bad)]) == 2
        assert "line" in capsys.readouterr().err

    def test_hash_mismatch_exit_2(self, tmp_path, capsys):
        cfg = small_campaign_config(tmp_path)
        assert cli.main(["run", str(write_config(tmp_path, cfg))]) == 0
        checkpoint = tmp_path / "out" / "checkpoint.json"
        payload = json.loads(checkpoint.read_text())
        payload["config"]["beta"] = 99.0
        payload["finished"] = False
        checkpoint.write_text(json.dumps(payload))
        assert cli.main(["resume", str(checkpoint)]) == 2
        assert "hash" in capsys.readouterr().err

    def test_kill_and_resume_matches_uninterrupted(self, tmp_path):
        # Reference run to completion.
        ref_cfg = small_campaign_config(tmp_path, output_dir=str(tmp_path / "ref"))
        assert cli.main(["run", str(write_config(tmp_path, ref_cfg, "ref.json"))]) == 0
        ref_trace = (tmp_path / "ref" / "trace.jsonl").read_bytes()
        n_records = len(ref_trace.splitlines())

        # Interrupted run: the evaluator dies partway through.
        kill_cfg = small_campaign_config(tmp_path, output_dir=str(tmp_path / "kill"))
        kill_at = n_records - 2
        calls = {"n": 0}
        from mfreactor import simulators

        bench_factory = simulators.BENCHMARKS["bumps2d"]

        def interrupting_factory():
            bench = bench_factory()
            inner = bench.evaluate

            def evaluate(x, z):
                if calls["n"] >= kill_at:
                    raise KeyboardInterrupt
                calls["n"] += 1
                return inner(x, z)

            object.__setattr__(bench, "evaluate", evaluate)
            return bench

        simulators.BENCHMARKS["bumps2d"] = interrupting_factory
        try:
            code = cli.main(["run", str(write_config(tmp_path, kill_cfg, "kill.json"))])
        finally:
            simulators.BENCHMARKS["bumps2d"] = bench_factory
        assert code == 130
        partial = (tmp_path / "kill" / "trace.jsonl").read_bytes()
        assert 0 < len(partial.splitlines()) < n_records

        assert cli.main(["resume", str(tmp_path / "kill" / "checkpoint.json")]) == 0
        resumed = (tmp_path / "kill" / "trace.jsonl").read_bytes()
        assert resumed == ref_trace

    def test_resume_failure_limit_exit_3(self, tmp_path):
        cfg = small_campaign_config(
            tmp_path, output_dir=str(tmp_path / "flaky"),
            evaluator={"kind": "synthetic-benchmark", "name": "bumps2d"},
            budget_total=50.0)
        # Force a failure-limit abort by injecting an always-failing evaluator.
        from mfreactor import simulators
        bench_factory = simulators.BENCHMARKS["bumps2d"]

        from mfreactor.engine import EvaluationFailure

        def failing_factory():
            bench = bench_factory()

            def evaluate(x, z):
                raise EvaluationFailure("always down", cost=0.01)

            object.__setattr__(bench, "evaluate", evaluate)
            return bench

        simulators.BENCHMARKS["bumps2d"] = failing_factory
        try:
            code = cli.main(["run", str(write_config(tmp_path, cfg, "f.json"))])
        finally:
            simulators.BENCHMARKS["bumps2d"] = bench_factory
        assert code == 3


class TestPlotData:
    @pytest.fixture()
    def finished_mock_run(self, tmp_path):
        cfg = mock_campaign_config(tmp_path)
        assert cli.main(["run", str(write_config(tmp_path, cfg))]) == 0
        return tmp_path / "mock_out"

    def test_unknown_figure_exit_2(self, finished_mock_run):
        with pytest.raises(SystemExit) as exc:
            cli.main(["plot-data", str(finished_mock_run / "trace.jsonl"),
                      "--figure", "sparkline"])
        assert exc.value.code == 2

    def test_default_figure_is_all(self, finished_mock_run):
        assert cli.main(["plot-data", str(finished_mock_run / "trace.jsonl")]) == 0
        assert (finished_mock_run / "reports" / "progress.csv").exists()

    def test_products_and_schemas(self, finished_mock_run):
        trace = finished_mock_run / "trace.jsonl"
        out = finished_mock_run / "reports"
        assert cli.main(["plot-data", str(trace), "--figure", "all",
                         "--out", str(out)]) == 0
        records = [json.loads(l) for l in trace.read_text().splitlines()]

        with open(out / "progress.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["iteration", "wall_cost_cumulative", "objective",
                           "cost", "provenance"]
        assert len(rows) - 1 == len(records)
        doe_rows = [r for r in rows[1:] if r[4] == "doe"]
        assert all(int(r[0]) < 0 for r in doe_rows)

        with open(out / "budget_tracking.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["iteration", "c_max", "cost", "remaining"]
        remaining = [float(r[3]) for r in rows[1:]]
        assert all(b < a for a, b in zip(remaining, remaining[1:])) or len(remaining) <= 1

        with open(out / "fidelity_map.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["axial", "radial", "mean_cost", "count"]
        counts = sum(int(r[3]) for r in rows[1:])
        non_doe = [r for r in records if r["provenance"] != "doe"]
        assert counts == len(non_doe)

        with open(out / "rtd.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["record_index", "theta", "e_theta"]
        assert len(rows) > 1

        for name in ("progress.png", "budget_tracking.png", "fidelity_map.png",
                     "rtd.png"):
            assert (out / name).exists()

    def test_plot_csvs_deterministic(self, tmp_path):
        outs = []
        for tag in ("p", "q"):
            cfg = mock_campaign_config(tmp_path, output_dir=str(tmp_path / tag))
            assert cli.main(["run", str(write_config(tmp_path, cfg, f"{tag}.json"))]) == 0
            assert cli.main(["plot-data", str(tmp_path / tag / "trace.jsonl"),
                             "--figure", "all",
                             "--out", str(tmp_path / tag / "rep"),
                             "--no-figures"]) == 0
            outs.append(tmp_path / tag / "rep")
        for name in ("progress.csv", "budget_tracking.csv", "fidelity_map.csv",
                     "rtd.csv"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


class TestFitRtd:
    def test_round_trip_n10(self, tmp_path, capsys):
        theta = np.arange(0.004, 6, 0.004)
        curve = rtd.RtdCurve(theta * 4.0, rtd.tanks_in_series_curve(theta, 10.0))
        src = tmp_path / "curve.csv"
        curve.to_csv(src)
        assert cli.main(["fit-rtd", str(src), "--out", str(tmp_path / "fit.csv")]) == 0
        out = capsys.readouterr().out
        n_star = float(out.split("N*:")[1].splitlines()[0])
        assert 9.9 <= n_star <= 10.1
        assert (tmp_path / "fit.csv").exists()
        assert (tmp_path / "fit.png").exists()

    def test_scaled_concentrations_same_fit(self, tmp_path, capsys):
        theta = np.arange(0.004, 6, 0.004)
        values = []
        for scale in (1.0, 40.0):
            curve = rtd.RtdCurve(theta, scale * rtd.tanks_in_series_curve(theta, 8.0))
            src = tmp_path / f"c{scale}.csv"
            curve.to_csv(src)
            assert cli.main(["fit-rtd", str(src), "--no-figures"]) == 0
            values.append(float(capsys.readouterr().out.split("N*:")[1].splitlines()[0]))
        assert values[0] == pytest.approx(values[1], rel=1e-6)

    def test_all_zero_column_exit_3(self, tmp_path, capsys):
        src = tmp_path / "zero.csv"
        with open(src, "w") as fh:
            fh.write("time_s,concentration\n")
            for t in range(10):
                fh.write(f"{t}.0,0.0\n")
        assert cli.main(["fit-rtd", str(src)]) == 3
        assert "zero" in capsys.readouterr().err


class TestGeometryCommand:
    def test_export_and_figure(self, tmp_path):
        out = tmp_path / "coil.json"
        assert cli.main(["geometry", "--pitch", "10", "--coil-radius", "8",
                         "--inversion", "0.5", "--format", "json",
                         "--out", str(out)]) == 0
        assert out.exists()
        assert out.with_suffix(".png").exists()

    def test_invalid_params_exit_2(self, tmp_path, capsys):
        assert cli.main(["geometry", "--pitch", "-1", "--coil-radius", "8",
                         "--out", str(tmp_path / "c.csv")]) == 2
        assert "geometry error" in capsys.readouterr().err
