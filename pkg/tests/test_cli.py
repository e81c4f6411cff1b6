import csv

import pytest

from fuselab import cli
from fuselab.cli import BENCH_FIELDS, cmd_bench, main
from fuselab.exceptions import DomainError
from fuselab.model import expand_sensors


def read_rows(path):
    with path.open(newline="", encoding="utf-8") as handle:
        return list(csv.reader(handle))


# ------------------------------------------ steady-state ------------------------------------------


def test_steady_state_check_passes(tmp_path, capsys):
    assert main(["steady-state", "--q", "1", "--r1", "5", "--r2", "2", "--check", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert " P_FF = 0.3896" in out
    assert " P_CI = 0.3925" in out
    assert "check passed" in out


def test_steady_state_of_equal_sensors(tmp_path, capsys):
    assert main(["steady-state", "--q", "1", "--r1", "5", "--r2", "5", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "   C1 = 0.5\n" in out
    assert "CI relative excess = 0.0000%" in out


def test_steady_state_rejects_zero_noise(tmp_path, capsys):
    assert main(["steady-state", "--q", "0", "--r1", "5", "--r2", "2", "--out", str(tmp_path)]) == 1
    assert "q must be positive" in capsys.readouterr().err
    assert not (tmp_path / "steady_state.csv").exists()


def test_steady_state_writes_its_report_into_the_output_directory(tmp_path, capsys):
    out = tmp_path / "results"
    assert main(["steady-state", "--q", "1", "--r1", "5", "--r2", "2", "--out", str(out)]) == 0
    assert [path.name for path in out.iterdir()] == ["steady_state.csv"]
    header, row = read_rows(out / "steady_state.csv")
    assert header[-1] == "ci_relative_excess"
    assert float(row[header.index("P_FF")]) == pytest.approx(0.3896, abs=5e-5)


# ------------------------------------------ validate ------------------------------------------


def test_bundled_scenario_validates(capsys):
    assert main(["validate"]) == 0
    assert "valid (n=2, N=3, 51 epochs)" in capsys.readouterr().out


def test_validate_lists_violations(oscillator_document, write_scenario, capsys):
    oscillator_document["sensors"][1]["R"] = 0
    assert main(["validate", "--scenario", str(write_scenario(oscillator_document))]) == 1
    assert capsys.readouterr().out.startswith("R_not_positive_definite(sensor=2): ")


def test_unreadable_scenarios_exit_with_two(write_scenario, tmp_path, capsys):
    assert main(["validate", "--scenario", str(tmp_path / "absent.json")]) == 2
    assert capsys.readouterr().err.startswith("fuselab: error: cannot read scenario")
    assert main(["validate", "--scenario", str(write_scenario("[1, 2"))]) == 2


# ------------------------------------------ simulate ------------------------------------------


def test_simulate_writes_one_file_set_per_method(tmp_path, capsys):
    assert main(["simulate", "--mc-runs", "20", "--methods", "ff,ci,local", "--out", str(tmp_path)]) == 0
    names = sorted(path.name for path in tmp_path.iterdir())
    assert "weights_ff.csv" in names and "weights_ci.csv" in names
    assert not any(name.startswith("weights_local") for name in names)
    for method in ("ff", "ci", "local1", "local2", "local3"):
        rows = read_rows(tmp_path / f"mse_{method}.csv")
        assert rows[0] == ["t", "x1", "x2"]
        assert len(rows) == 52
        assert read_rows(tmp_path / f"consistency_{method}.csv")[0] == ["t", "anees", "trace_reported", "trace_actual"]
    assert read_rows(tmp_path / "weights_ff.csv")[0][1:5] == ["w1_1_1", "w1_1_2", "w1_2_1", "w1_2_2"]
    assert "20 runs" in capsys.readouterr().out


def test_simulate_output_is_reproducible(tmp_path):
    runs = []
    for name, workers in (("serial", "1"), ("again", "1"), ("threaded", "3")):
        out = tmp_path / name
        argv = ["simulate", "--mc-runs", "300", "--methods", "ff,ci", "--workers", workers, "--out", str(out)]
        assert main(argv) == 0
        runs.append({path.name: path.read_bytes() for path in out.iterdir()})
    assert runs[0] == runs[1] == runs[2]


def test_simulate_takes_its_worker_count_from_the_environment(monkeypatch):
    seen = []

    def record(scenario, methods, out_dir, config, filter_config):
        seen.append(config)
        return 0

    monkeypatch.setattr(cli, "cmd_simulate", record)
    monkeypatch.setenv("FUSELAB_THREADS", "3")
    assert main(["simulate", "--mc-runs", "5", "--truth", "exact"]) == 0
    assert main(["simulate", "--mc-runs", "5", "--workers", "2"]) == 0
    assert [(config.workers, config.truth_method) for config in seen] == [(3, "exact"), (2, "euler-maruyama")]


def test_simulate_overrides_are_validated(capsys):
    assert main(["simulate", "--mc-runs", "0"]) == 1
    assert "mc_runs_not_positive" in capsys.readouterr().err


def test_simulate_rejects_unknown_methods(tmp_path, capsys):
    assert main(["simulate", "--mc-runs", "5", "--methods", "ff,kalman", "--out", str(tmp_path)]) == 1
    assert "unknown method 'kalman'" in capsys.readouterr().err


def test_non_finite_observation_exits_with_one(oscillator_document, write_scenario, tmp_path, capsys):
    oscillator_document["sensors"][0]["H"] = [[float("nan"), 0.0]]
    scenario = write_scenario(oscillator_document)
    assert main(["simulate", "--scenario", str(scenario), "--mc-runs", "5", "--out", str(tmp_path)]) == 1
    assert "H_not_finite" in capsys.readouterr().err


def test_diverging_dynamics_exit_with_three(oscillator_document, write_scenario, tmp_path, capsys):
    oscillator_document["F"] = [[1e200, 0.0], [0.0, 1e200]]
    scenario = write_scenario(oscillator_document)
    assert main(["simulate", "--scenario", str(scenario), "--mc-runs", "5", "--out", str(tmp_path)]) == 3
    assert "non-finite value" in capsys.readouterr().err


# ------------------------------------------ bench ------------------------------------------


def test_bench_counts_cross_covariance_propagations(oscillator, tmp_path, capsys):
    reports = cmd_bench(oscillator, [1, 3, 6], repeats=3, out_dir=tmp_path)
    by_key = {(r.N, r.method): r for r in reports}
    assert by_key[(3, "ff")].ode_props == 3
    assert by_key[(6, "ff")].ode_props == 15
    assert by_key[(1, "ff")].ode_props == 0
    assert all(by_key[(N, "ci")].ode_props == 0 for N in (1, 3, 6))
    assert by_key[(3, "ci")].median_seconds < by_key[(3, "ff")].median_seconds
    assert all(r.epochs == 51 for r in reports)

    rows = read_rows(tmp_path / "bench.csv")
    assert tuple(rows[0]) == BENCH_FIELDS
    assert len(rows) == 7
    assert "ode_props" in capsys.readouterr().out


def test_bench_command_line(tmp_path, capsys):
    assert main(["bench", "--sensor-counts", "2", "--repeats", "1", "--out", str(tmp_path)]) == 0
    rows = read_rows(tmp_path / "bench.csv")
    assert [row[:2] for row in rows[1:]] == [["2", "ff"], ["2", "ci"]]
    assert rows[1][3] == "1"


def test_bench_rejects_unknown_rules(oscillator, capsys):
    with pytest.raises(DomainError, match="unknown fusion method"):
        cmd_bench(expand_sensors(oscillator, 2), [2], repeats=1, methods=("kalman",))
