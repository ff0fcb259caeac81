import json

import pytest

from artifact import cli
from artifact.config import from_dict, load
from artifact.errors import BackendMismatch, ConfigError

O1 = {"degree": 1, "weights": [0, 1]}
O1_EXP = {"bundle": {"summands": [O1]}, "weight": {"family": "exp", "t": 1.0}}


def write(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(data if isinstance(data, str) else json.dumps(data, indent=2))
    return path


def run(tmp_path, command, data, *extra):
    path = write(tmp_path, data)
    out = tmp_path / "out"
    status = cli.main([command, "--config", str(path), "--out", str(out), *extra])
    report = out / (command.replace("-", "_") + ".json")
    return status, (json.loads(report.read_text()) if report.exists() else None), out


def test_schema_errors_carry_line_and_field(tmp_path):
    text = '{\n  "command": "intersect",\n  "bundle": {"summands": [{"degree": -1, "weights": [0, 1]}]},\n' \
           '  "weight": {"family": "exp", "t": 1.0}\n}\n'
    with pytest.raises(ConfigError) as info:
        load(write(tmp_path, text))
    assert info.value.line == 3 and info.value.field == "bundle.summands.0.degree"


def test_unknown_keys_and_missing_blocks_are_rejected():
    with pytest.raises(ConfigError):
        from_dict(dict(O1_EXP, colour="red"), command="intersect")
    with pytest.raises(ConfigError):
        from_dict({"bundle": {"summands": [O1]}}, command="solve")


def test_config_for_another_command_is_rejected():
    with pytest.raises(ConfigError) as info:
        from_dict(dict(O1_EXP, command="solve"), command="intersect")
    assert info.value.field == "command"


def test_solver_block_reaches_the_solver_config():
    cfg = from_dict(dict(O1_EXP, solver={"eps_ratio": 0.5}, seed=9), command="solve")
    assert cfg.solver.eps_ratio == 0.5 and cfg.solver.seed == 9 and cfg.mode == "line"


def test_broken_json_exits_with_config_status(tmp_path, capsys):
    status, report, _ = run(tmp_path, "intersect", '{"bundle": ')
    assert status == cli.EXIT_CONFIG and report is None
    assert "line 1" in capsys.readouterr().err


def test_intersect_writes_report_and_plot(tmp_path):
    status, report, out = run(tmp_path, "intersect", O1_EXP, "--plot", "--seed", "5")
    assert status == cli.EXIT_OK
    assert report["provenance"]["seed"] == 5 and report["files"] == ["intersect.json", "intersect_weight.svg"]
    assert (out / "intersect_weight.svg").read_text().startswith("<svg")
    assert abs(report["result"]["report"]["weighted_degree"] - 2.718281828459045) < 1e-8


def test_solve_line_writes_csv(tmp_path):
    status, report, out = run(tmp_path, "solve", O1_EXP)
    assert status == cli.EXIT_OK
    csvs = [f for f in report["files"] if f.endswith(".csv")]
    assert csvs and all((out / f).exists() for f in csvs)


def test_input_errors_map_to_config_status(tmp_path):
    data = dict(O1_EXP, weight={"family": "sasaki", "a": 0.5, "m": 0.5})
    status, report, _ = run(tmp_path, "lubke", data)
    assert status == cli.EXIT_CONFIG and report["error"]["type"] == "PreconditionWeight"


def test_failed_invariant_exits_with_assert_status(tmp_path, monkeypatch):
    def broken(*args, **kwargs):
        raise BackendMismatch("forced disagreement")

    monkeypatch.setattr(cli, "intersection_report", broken)
    status, report, _ = run(tmp_path, "intersect", O1_EXP)
    assert status == cli.EXIT_ASSERT and report["error"]["type"] == "BackendMismatch"


def test_recorded_check_failure_exits_with_assert_status(tmp_path, monkeypatch):
    real = cli.euler_expansion_check

    def failing(*args, **kwargs):
        series = real(*args, **kwargs)
        series.passed = False
        return series

    monkeypatch.setattr(cli, "euler_expansion_check", failing)
    status, report, _ = run(tmp_path, "stability", O1_EXP)
    assert status == cli.EXIT_ASSERT and report["assertion_failures"]


def test_exhausted_budget_exits_with_solver_status(tmp_path):
    data = {"bundle": {"summands": [O1, O1]}, "weight": {"family": "exp", "t": 1.0},
            "solver": {"init": "random", "max_iterations": 2, "polish_trigger": 1e-12}}
    status, report, out = run(tmp_path, "solve", data)
    assert status == cli.EXIT_SOLVER and report["result"] is not None
    assert report["error"]["type"] == "SolverFailure"
    assert (out / "solve_trail.csv").exists()


def test_newton_divergence_exits_with_solver_status(tmp_path):
    data = {"bundle": {"summands": [O1, O1]}, "weight": {"family": "exp", "t": 1.0}, "seed": 1,
            "solver": {"init": "random", "init_amplitude": 2.0, "max_newton": 1, "newton_tol": 1e-14}}
    status, report, _ = run(tmp_path, "solve", data)
    assert status == cli.EXIT_SOLVER and report["error"]["type"] == "NewtonDiverged"


def test_beta_runs_without_a_config(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert cli.main(["beta"]) == cli.EXIT_OK
    report = json.loads((tmp_path / "out" / "beta.json").read_text())
    assert report["files"] == ["beta.csv", "beta.json"]


@pytest.mark.parametrize("weight, verdict", [({"family": "constant"}, "polystable"),
                                             ({"family": "exp", "t": 1.0}, "unstable")])
def test_stability_on_the_weight_twisted_pair(tmp_path, weight, verdict):
    data = {"bundle": {"summands": [O1, {"degree": 1, "weights": [-1, 0]}]}, "weight": weight}
    status, report, out = run(tmp_path, "stability", data)
    assert status == cli.EXIT_OK and report["result"]["verdict"]["verdict"] == verdict
    assert (out / "stability_euler.csv").exists()


def test_continuity_solve_finds_the_destabilizing_summand(tmp_path):
    data = {"bundle": {"summands": [{"degree": 0, "weights": [0, 0]}, {"degree": 2, "weights": [-1, 1]}]},
            "weight": {"family": "constant"}, "mode": "continuity", "solver": {"init": "random"}}
    status, report, _ = run(tmp_path, "solve", data, "--plot")
    outcome = report["result"]["solve"]["outcome"]
    assert status == cli.EXIT_OK and outcome["status"] == "destabilized"
    assert outcome["projector"]["image"] == [1]
    assert "solve_convergence.svg" in report["files"]
