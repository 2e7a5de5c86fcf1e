"""Secondary acceptance: all six figure kinds render from a completed
DA2-analog experiment without error, the contingency image carries exactly
the four legend colours, and re-rendering is byte-identical.

Drives the floodlab CLI in a subprocess (figkit itself never imports it);
skipped only where floodlab is not installed.
"""

import os
import subprocess
import sys

import numpy as np
import pytest
import yaml
from PIL import Image

from figkit.cli import main
from figkit.render import CONTINGENCY_RGB

pytest.importorskip("floodlab", reason="secondary acceptance needs the primary package")


def floodlab_cli(*args, cwd):
    proc = subprocess.run([sys.executable, "-m", "floodlab.cli", *args],
                          cwd=cwd, capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return proc


@pytest.fixture(scope="module")
def da2_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("secondary")
    # pixel flips in the observed masks guarantee all four contingency
    # classes; no excluded region so the map shows exactly the legend colours
    twin_cfg = {"scenario": "default", "seed": 0,
                "degradation": {"flip_prob": 0.02, "exclusion_fraction": 0.0}}
    with open(root / "twin.yaml", "w") as f:
        yaml.safe_dump(twin_cfg, f)
    floodlab_cli("truth", "twin.yaml", "--output", "twin", cwd=root)

    def config(name, extra):
        cfg = {
            "name": name, "mode": "free_run", "bias_correction": "off",
            "scenario": "twin/scenario/scenario.yaml",
            "observations": "twin/obs/gauges.csv",
            "masks": "twin/obs/masks",
            "n_e": 1, "tau": 0.15,
            "window": {"start": 0, "length": 43200, "shift": 21600,
                       "spinup": 10800},
            "cycles": 2, "forecast_leads": [], "seed": 0,
            "output": f"out/{name}",
        }
        cfg.update(extra)
        with open(root / f"{name}.yaml", "w") as f:
            yaml.safe_dump(cfg, f)
        return root / f"{name}.yaml"

    config("fr", {})
    floodlab_cli("run", "fr.yaml", cwd=root)
    floodlab_cli("diagnose-bias", "--model", "out/fr/stations.csv",
                 "--obs", "twin/obs/gauges.csv", "--t0", "10800", "--t1", "32400",
                 "--out", "out/bias.csv", cwd=root)
    # DA2 analog positioned over the flood peak so the extent scores bite
    config("da2", {"mode": "da", "n_e": 6, "bias_correction": "on",
                   "bias_file": "out/bias.csv",
                   "window": {"start": 64800, "length": 43200, "shift": 21600,
                              "spinup": 10800},
                   "forecast_leads": [21600.0, 43200.0]})
    floodlab_cli("run", "da2.yaml", cwd=root)
    out = root / "out" / "da2"
    return {
        "root": root,
        "hydrographs": out / "cycles" / "cycle_01" / "hydrographs.csv",
        "inflow": root / "twin" / "scenario" / "inflow.csv",
        "gauges": root / "twin" / "obs" / "gauges.csv",
        "stations_fr": root / "out" / "fr" / "stations.csv",
        "stations_da2": out / "stations.csv",
        "controls": out / "controls.csv",
        "scores": out / "scores.csv",
        "contingency": out / "contingency" / "overpass_118800.asc",
    }


def render_all(da2_run, out_dir):
    jobs = [
        ("hydrograph-fan", [da2_run["hydrographs"], da2_run["inflow"]], []),
        ("station-panel", [da2_run["gauges"], da2_run["stations_fr"],
                           da2_run["stations_da2"]],
         ["--station", "midreach", "--labels", "FR", "DA2"]),
        ("controls", [da2_run["controls"]], ["--labels", "DA2"]),
        ("scores-2d", [da2_run["scores"]], ["--labels", "DA2"]),
        ("contingency-map", [da2_run["contingency"]], []),
        ("forecast-leads", [da2_run["scores"]], []),
    ]
    outputs = {}
    for kind, ins, extra in jobs:
        out = out_dir / f"{kind}.png"
        code = main([kind, "--in"] + [str(p) for p in ins]
                    + ["--out", str(out)] + extra)
        assert code == 0, kind
        outputs[kind] = out
    return outputs


def test_acceptance_secondary_figkit(da2_run, tmp_path):
    first = render_all(da2_run, tmp_path)
    ok_render = all(p.exists() and p.stat().st_size > 0 for p in first.values())

    img = np.asarray(Image.open(first["contingency-map"]).convert("RGB"))
    colours = {tuple(int(v) for v in c) for c in img.reshape(-1, 3)}
    legend = {CONTINGENCY_RGB[k] for k in (0, 1, 2, 3)}
    ok_colours = colours == legend

    rerender_dir = tmp_path / "again"
    rerender_dir.mkdir()
    second = render_all(da2_run, rerender_dir)
    ok_bytes = all(first[k].read_bytes() == second[k].read_bytes() for k in first)

    print(f"\nACCEPTANCE figkit-secondary: "
          f"{'PASS' if ok_render and ok_colours and ok_bytes else 'FAIL'}  "
          f"six kinds rendered={ok_render}, contingency colours "
          f"{sorted(colours)} == legend={ok_colours}, byte-identical={ok_bytes}")
    assert ok_render and ok_colours and ok_bytes
