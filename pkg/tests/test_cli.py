"""CLI contract: verbs, flags, exit codes, determinism of the output tree."""

import os
import shutil

import numpy as np
import pytest
import yaml

from floodlab.cli import main
from floodlab.forcing import Hydrograph
from floodlab.twinlab import TwinScenario, build_twin_assets
from floodlab.uncertainty import ControlVector

from conftest import build_mini_scenario


@pytest.fixture(scope="module")
def cli_assets(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    scen = build_mini_scenario()
    times = np.arange(0.0, 14401.0, 600.0)
    scen.inflow = Hydrograph(times, 30.0 + 30.0 * np.exp(-((times - 5400.0) / 2400.0) ** 2))
    twin = TwinScenario(scenario=scen, truth_control=ControlVector(ks1=38.0),
                        truth_bias={"gaugeA": 0.2, "gaugeB": 0.1},
                        overpass_times=(1800.0, 3600.0), event_window=(0.0, 9000.0),
                        sampling_dt=300.0, gauge_tau=0.0, seed=2)
    paths = build_twin_assets(twin, root / "twin")
    return {"root": root, **paths}


def write_config(root, name, **overrides):
    cfg = {
        "name": name, "mode": "free_run", "bias_correction": "off",
        "scenario": "twin/scenario/scenario.yaml",
        "observations": "twin/obs/gauges.csv",
        "masks": "twin/obs/masks",
        "n_e": 1, "tau": 0.15,
        "window": {"start": 0, "length": 1800, "shift": 900, "spinup": 450},
        "cycles": 3, "forecast_leads": [], "seed": 4,
        "output": f"out/{name}", "output_cadence": 300,
    }
    cfg.update(overrides)
    path = root / f"{name}.yaml"
    with open(path, "w") as f:
        yaml.safe_dump(cfg, f)
    return str(path)


def test_run_free_run_exit_zero(cli_assets, capsys):
    path = write_config(cli_assets["root"], "clifr")
    assert main(["run", path]) == 0
    out = capsys.readouterr().out
    assert "clifr" in out
    assert os.path.exists(cli_assets["root"] / "out" / "clifr" / "scores.csv")


def test_run_bad_config_exit_one(cli_assets, capsys):
    path = write_config(cli_assets["root"], "bad", mode="nonsense")
    assert main(["run", path]) == 1
    assert "mode" in capsys.readouterr().err


def test_run_missing_config_exit_one(tmp_path, capsys):
    assert main(["run", str(tmp_path / "absent.yaml")]) == 1


def test_unknown_command_exit_one(capsys):
    assert main(["frobnicate"]) == 1


def test_bad_flag_exit_one(cli_assets, capsys):
    path = write_config(cli_assets["root"], "cliflag")
    assert main(["run", path, "--jobs", "0"]) == 1


def test_runtime_failure_exit_two(cli_assets, capsys, tmp_path):
    # observations end before the cycle windows -> DA aborts mid-run
    import csv
    obs_path = tmp_path / "early_obs.csv"
    with open(cli_assets["observations"]) as f:
        rows = [r for r in csv.DictReader(f) if float(r["t_s"]) <= 900.0]
    with open(obs_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["station", "t_s", "value_m"])
        for r in rows:
            w.writerow([r["station"], r["t_s"], r["value_m"]])
    path = write_config(cli_assets["root"], "clifail", mode="da", n_e=4,
                        observations=str(obs_path))
    assert main(["run", path]) == 2
    assert "cycle" in capsys.readouterr().err


def test_diagnose_bias_cli(cli_assets, capsys):
    frpath = write_config(cli_assets["root"], "clifr2")
    assert main(["run", frpath]) == 0
    out_dir = cli_assets["root"] / "out" / "clifr2"
    bias_out = cli_assets["root"] / "bias.csv"
    code = main(["diagnose-bias", "--model", str(out_dir / "stations.csv"),
                 "--obs", cli_assets["observations"],
                 "--t0", "0", "--t1", "900", "--out", str(bias_out)])
    assert code == 0
    assert bias_out.exists()
    assert "gaugeA" in capsys.readouterr().out


def test_score_recomputes_and_matches(cli_assets):
    frpath = write_config(cli_assets["root"], "cliscore")
    assert main(["run", frpath]) == 0
    out_dir = str(cli_assets["root"] / "out" / "cliscore")
    with open(os.path.join(out_dir, "scores.csv")) as f:
        before = f.read()
    assert main(["score", out_dir]) == 0
    with open(os.path.join(out_dir, "scores.csv")) as f:
        after = f.read()
    assert before == after


def test_truth_verb_with_config(cli_assets, tmp_path, capsys):
    scen_dir = cli_assets["scenario"]
    twin_cfg = {
        "scenario": scen_dir, "seed": 5,
        "truth_control": {"ks1": 39.0},
        "truth_bias": {"gaugeA": 0.1},
        "overpasses": [1800.0],
        "event_window": [0.0, 3600.0],
        "sampling_dt": 300.0, "gauge_tau": 0.0,
        "degradation": {"flip_prob": 0.0, "exclusion_fraction": 0.05},
    }
    cfg_path = tmp_path / "twin.yaml"
    with open(cfg_path, "w") as f:
        yaml.safe_dump(twin_cfg, f)
    assert main(["truth", str(cfg_path), "--output", str(tmp_path / "assets")]) == 0
    assert (tmp_path / "assets" / "obs" / "gauges.csv").exists()
    assert (tmp_path / "assets" / "obs" / "masks" / "overpass_1800.asc").exists()
    assert (tmp_path / "assets" / "truth" / "twin.yaml").exists()


def test_truth_needs_source(capsys, tmp_path):
    assert main(["truth", "--output", str(tmp_path / "x")]) == 1


def test_rerun_reproduces_output_hashes(cli_assets):
    """Same config + seed re-run in place: every output hash identical."""
    path = write_config(cli_assets["root"], "clidet", mode="da", n_e=4,
                        forecast_leads=[900.0])
    assert main(["run", path]) == 0
    out_dir = cli_assets["root"] / "out" / "clidet"
    with open(out_dir / "manifest.yaml") as f:
        first = yaml.safe_load(f)["outputs"]
    shutil.rmtree(out_dir)
    assert main(["run", path]) == 0
    with open(out_dir / "manifest.yaml") as f:
        second = yaml.safe_load(f)["outputs"]
    assert first == second
