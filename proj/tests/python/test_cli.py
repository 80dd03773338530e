import csv
import json
import subprocess

import pytest

SHORT = ["--set", "scene.kind=cavern", "--set", "scene.size=[20,20,8]", "--set", "time_limit=2"]


def run(cli, *args):
    return subprocess.run([cli, *args], capture_output=True, text=True, env={"SCANPLAN_THREADS": "1"})


def test_single_episode_writes_csv_and_json(cli, scenarios, tmp_path):
    r = run(cli, "--scenario", str(scenarios / "cavern.json"), "--set", "controller=fixed:360",
            "--set", "sensor.sigma_r=0", "--out", str(tmp_path))
    assert r.returncode == 0, r.stderr
    data = json.loads((tmp_path / "single_seed1.json").read_text())
    assert data["completion"] is True
    assert data["soundness_mismatches"] == 0
    rows = list(csv.DictReader((tmp_path / "single_seed1.csv").open()))
    assert data["coverage_final"] >= 0.95
    assert rows and float(rows[-1]["coverage"]) <= data["coverage_final"]
    cov = [float(row["coverage"]) for row in rows]
    assert cov == sorted(cov)


def test_controller_sweep_and_summary(cli, tmp_path):
    r = run(cli, *SHORT, "--sweep", "controller", "--repeats", "3", "--out", str(tmp_path))
    assert r.returncode == 1  # two-second episodes cannot finish
    stems = sorted(p.name[:-5] for p in tmp_path.glob("*.json"))
    assert len(stems) == 12
    for stem in stems:
        assert (tmp_path / f"{stem}.csv").exists()
        assert (tmp_path / f"{stem}.timing.csv").exists()
    rows = list(csv.DictReader((tmp_path / "summary.csv").open()))
    assert [row["cell"] for row in rows] == [
        "controller_fu_mpc", "controller_fixed_30", "controller_fixed_100", "controller_fixed_360"]
    for row in rows:
        label = row["cell"]
        eps = [json.loads((tmp_path / f"{label}_seed{s}.json").read_text()) for s in (1, 2, 3)]
        assert int(row["episodes"]) == 3
        assert int(row["completed"]) == sum(e["completion"] for e in eps)
        cov = [e["coverage_final"] for e in eps]
        assert float(row["coverage_mean"]) == pytest.approx(sum(cov) / 3, rel=1e-8)
        assert float(row["coverage_min"]) == pytest.approx(min(cov), rel=1e-8)
        assert float(row["ape_mean_max"]) == pytest.approx(max(e["ape_proxy_mean"] for e in eps), rel=1e-8)

    again = tmp_path / "again"
    run(cli, *SHORT, "--sweep", "controller", "--repeats", "3", "--out", str(again))
    assert (again / "summary.csv").read_bytes() == (tmp_path / "summary.csv").read_bytes()
    for stem in stems:
        assert (again / f"{stem}.csv").read_bytes() == (tmp_path / f"{stem}.csv").read_bytes()


def test_key_sweep_labels(cli, tmp_path):
    r = run(cli, *SHORT, "--sweep", "weights.beta=0.25,1.0", "--out", str(tmp_path))
    assert r.returncode == 1
    assert sorted(p.name for p in tmp_path.glob("*.json")) == [
        "weights.beta_0.25_seed1.json", "weights.beta_1.0_seed1.json"]


@pytest.mark.parametrize("args,needle", [
    (["--set", "mpc.horizn=5"], "mpc.horizn"),
    (["--set", "sensor.rate=fast"], "sensor.rate"),
    (["--set", "controller=pid"], "controller"),
    (["--sweep", "planner.speed=1,2"], "planner.speed"),
    (["--set", "noequals"], "key=value"),
])
def test_config_errors_exit_2(cli, tmp_path, args, needle):
    r = run(cli, *args, "--out", str(tmp_path))
    assert r.returncode == 2
    assert needle in r.stderr


def test_missing_out_and_dump_config(cli, scenarios):
    assert run(cli, "--scenario", str(scenarios / "corridor.json")).returncode == 2
    r = run(cli, "--scenario", str(scenarios / "corridor.json"), "--set", "seed=9", "--dump-config")
    assert r.returncode == 0
    cfg = json.loads(r.stdout)
    assert cfg["seed"] == 9 and cfg["scene"]["size"] == [40, 10, 5]


def test_save_scene(cli, tmp_path):
    path = tmp_path / "scene.grid"
    assert run(cli, *SHORT, "--save-scene", str(path)).returncode == 0
    assert path.stat().st_size > 0
