import json
from pathlib import Path

import numpy as np
import pytest

from covsteer.cli import cmd_steer, cmd_validate, emit_config, main, parse_config

OUT_FILES = ["policy.json", "beliefs.csv", "ellipses.csv", "sigma_points.csv", "effective_config.toml"]


def duffing_config(tmp_path, n_horizon=4, sigma_f="[[7.0, 0.0], [0.0, 4.5]]", seed=42,
                   samples=400, name="cfg.toml"):
    text = f"""
[system]
name = "duffing"
tau = 0.01
delta = -1.0
zeta = 0.05
gamma = 0.05
sigma_w = 1.0

[steer]
N = {n_horizon}
mu0 = [0.0, 0.0]
sigma0 = [[6.25, 0.0], [0.0, 4.0]]
mu_f = [0.0, 0.0]
sigma_f = {sigma_f}

[montecarlo]
samples = {samples}
seed = {seed}

[output]
directory = "{(tmp_path / 'out').as_posix()}"
"""
    path = tmp_path / name
    path.write_text(text)
    return path


def read_lines(path):
    return Path(path).read_text().splitlines()


def test_steer_writes_expected_files(tmp_path):
    cfg = duffing_config(tmp_path, n_horizon=4)
    assert cmd_steer(str(cfg), None) == 0
    out = tmp_path / "out"
    for name in OUT_FILES:
        assert (out / name).exists(), name
    beliefs = read_lines(out / "beliefs.csv")
    assert beliefs[0] == "t,mu0,mu1,sigma00,sigma01,sigma10,sigma11"
    assert len(beliefs) == 1 + 5  # header + N+1 rows
    policy = json.loads((out / "policy.json").read_text())
    assert len(policy["stages"]) == 4
    assert policy["n"] == 2 and policy["m"] == 1
    for stage in policy["stages"]:
        assert stage["status"] == "optimal"
        np.asarray(stage["K"], dtype=float)


def test_single_stage_outputs(tmp_path):
    cfg = duffing_config(tmp_path, n_horizon=1)
    assert cmd_steer(str(cfg), None) == 0
    out = tmp_path / "out"
    assert len(read_lines(out / "beliefs.csv")) == 1 + 2
    assert len(json.loads((out / "policy.json").read_text())["stages"]) == 1


def test_sigma_points_export_counts(tmp_path):
    cfg = duffing_config(tmp_path, n_horizon=3)
    assert cmd_steer(str(cfg), None) == 0
    rows = read_lines(tmp_path / "out" / "sigma_points.csv")
    assert rows[0] == "t,i,x0,x1,gamma,delta"
    body = [r.split(",") for r in rows[1:]]
    by_stage = {}
    for r in body:
        by_stage.setdefault(int(r[0]), []).append(r)
    assert set(by_stage) == {0, 1, 2, 3}
    for t, pts in by_stage.items():
        assert len(pts) == 5  # 2n+1 with n=2


def test_ellipse_export_has_goal_and_rings(tmp_path):
    cfg = duffing_config(tmp_path, n_horizon=2)
    assert cmd_steer(str(cfg), None) == 0
    rows = read_lines(tmp_path / "out" / "ellipses.csv")
    assert rows[0] == "t,kind,c0,c1,s00,s01,s10,s11,level"
    kinds = [r.split(",")[1] for r in rows[1:]]
    assert kinds.count("belief") == 3
    assert kinds.count("goal") == 1
    assert kinds.count("ut_init") == 1
    assert kinds.count("ut_goal") == 1
    ring = [r for r in rows[1:] if r.split(",")[1] == "ut_init"][0]
    assert float(ring.split(",")[-1]) == pytest.approx(0.005)


def test_infeasible_config_exits_2(tmp_path, capsys):
    cfg = duffing_config(tmp_path, n_horizon=3, sigma_f="[[0.001, 0.0], [0.0, 0.001]]")
    code = cmd_steer(str(cfg), None)
    assert code == 2
    assert "stage 0" in capsys.readouterr().err


def test_parse_errors_exit_1(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[system\nname = duffing")
    assert main(["steer", "--config", str(bad)]) == 1

    missing = tmp_path / "missing.toml"
    missing.write_text('[system]\nname = "duffing"\n[steer]\nN = 4\n')
    assert main(["steer", "--config", str(missing)]) == 1

    assert main(["steer"]) == 1  # missing required --config


def test_config_validation_messages(tmp_path):
    asym = tmp_path / "asym.toml"
    asym.write_text(
        """
[system]
name = "duffing"
tau = 0.01
delta = -1.0
zeta = 0.05
gamma = 0.05

[steer]
N = 2
mu0 = [0.0, 0.0]
sigma0 = [[1.0, 0.5], [0.0, 1.0]]
mu_f = [0.0, 0.0]
sigma_f = [[1.0, 0.0], [0.0, 1.0]]
"""
    )
    with pytest.raises(Exception, match="sigma0"):
        parse_config(asym)


def test_validate_round_trip(tmp_path):
    cfg = duffing_config(tmp_path, n_horizon=3, samples=300)
    assert cmd_steer(str(cfg), None) == 0
    out = tmp_path / "out"
    code = cmd_validate(str(cfg), str(out / "policy.json"), None, None, None)
    assert code == 0
    report = json.loads((out / "mc_report.json").read_text())
    assert report["samples"] == 300 and report["seed"] == 42
    cov = np.asarray(report["empirical_cov"])
    assert cov.shape == (2, 2)
    traj = read_lines(out / "trajectories.csv")
    assert traj[0] == "sample,t,x0,x1"
    # 50 paths, each N+1 stages
    assert len(traj) == 1 + 50 * 4


def test_validate_dimension_mismatch_exits_1(tmp_path):
    cfg = duffing_config(tmp_path, n_horizon=2)
    assert cmd_steer(str(cfg), None) == 0
    policy_path = tmp_path / "out" / "policy.json"
    payload = json.loads(policy_path.read_text())
    payload["n"] = 3
    policy_path.write_text(json.dumps(payload))
    assert cmd_validate(str(cfg), str(policy_path), 100, 1, None) == 1


def test_byte_determinism(tmp_path):
    cfg = duffing_config(tmp_path, n_horizon=3, samples=200)
    assert cmd_steer(str(cfg), str(tmp_path / "a")) == 0
    assert cmd_steer(str(cfg), str(tmp_path / "b")) == 0
    for name in ["policy.json", "beliefs.csv", "ellipses.csv", "sigma_points.csv"]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    pa = tmp_path / "a" / "policy.json"
    assert cmd_validate(str(cfg), str(pa), 200, 9, str(tmp_path / "va")) == 0
    assert cmd_validate(str(cfg), str(pa), 200, 9, str(tmp_path / "vb")) == 0
    for name in ["mc_report.json", "trajectories.csv"]:
        assert (tmp_path / "va" / name).read_bytes() == (tmp_path / "vb" / name).read_bytes(), name


def test_effective_config_round_trip(tmp_path):
    cfg = duffing_config(tmp_path, n_horizon=3)
    assert cmd_steer(str(cfg), str(tmp_path / "a")) == 0
    eff = tmp_path / "a" / "effective_config.toml"
    assert cmd_steer(str(eff), str(tmp_path / "b")) == 0
    for name in ["policy.json", "beliefs.csv", "ellipses.csv", "sigma_points.csv"]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_floats_round_trip_exactly(tmp_path):
    cfg = duffing_config(tmp_path, n_horizon=2)
    assert cmd_steer(str(cfg), None) == 0
    rows = read_lines(tmp_path / "out" / "beliefs.csv")[1:]
    from covsteer.belief import GaussianBelief
    from covsteer.greedy import GreedyConfig, greedy_steer
    from covsteer.models import build_model
    parsed = parse_config(cfg)
    model = build_model(parsed.system_name, parsed.system_params)
    run = greedy_steer(
        model,
        GaussianBelief(parsed.mu0, parsed.sigma0),
        GreedyConfig(N=parsed.N, goal=GaussianBelief(parsed.mu_f, parsed.sigma_f)),
    )
    for row, belief in zip(rows, run.beliefs):
        vals = [float(v) for v in row.split(",")[1:]]
        assert vals[0] == belief.mean[0] and vals[1] == belief.mean[1]
        assert vals[2:] == [belief.cov[0, 0], belief.cov[0, 1], belief.cov[1, 0], belief.cov[1, 1]]


def test_emit_config_parses_back(tmp_path):
    cfg = duffing_config(tmp_path, n_horizon=2)
    parsed = parse_config(cfg)
    text = emit_config(parsed)
    reparsed = tmp_path / "re.toml"
    reparsed.write_text(text)
    again = parse_config(reparsed)
    assert again.N == parsed.N
    assert np.array_equal(again.sigma0, parsed.sigma0)
    assert again.samples == parsed.samples
    assert emit_config(again) == text
