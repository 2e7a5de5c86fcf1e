"""Twin-experiment scenario construction and synthetic observations.

A hidden truth run (friction + inflow coefficients unknown to the DA
experiments) generates degraded gauge series and SAR-like flood-extent
masks. The default scenario is a straight sloped channel with an incised
low-friction river bed, flanking floodplain benches and three gauges, sized
so the flood peak engages the floodplain friction zone.
"""

from __future__ import annotations

import csv
import hashlib
import os
from dataclasses import dataclass, field

import numpy as np
import yaml

from .enkf import GaugeObservationSet
from .forcing import Hydrograph, RatingCurve
from .grid import Scenario, ScenarioGrid, Station
from .metrics import WET_THRESHOLD, FloodMask, rasterize_flood_mask
from .rasters import read_ascii_grid, write_ascii_grid
from .swe import (PhysicalParams, RiverState, Simulator, Trajectory,
                  load_restart, save_restart)
from .uncertainty import ControlVector, rng_stream


@dataclass
class ExtentDegradation:
    """Synthetic flood-extent observation error: independent per-pixel
    misclassification plus a contiguous unreliable-observation region."""
    flip_prob: float = 0.0
    exclusion_fraction: float = 0.086

    def __post_init__(self):
        if not (0 <= self.flip_prob < 0.5):
            raise ValueError("flip_prob must lie in [0, 0.5)")
        if not (0 <= self.exclusion_fraction < 1):
            raise ValueError("exclusion_fraction must lie in [0, 1)")


@dataclass
class TwinScenario:
    """Scenario plus the hidden truth and observation-generation settings."""
    scenario: Scenario
    truth_control: ControlVector
    truth_bias: dict = field(default_factory=dict)
    overpass_times: tuple = ()
    event_window: tuple = (0.0, 172800.0)
    sampling_dt: float = 900.0
    gauge_tau: float = 0.02
    degradation: ExtentDegradation = field(default_factory=ExtentDegradation)
    seed: int = 0

    def __post_init__(self):
        t0, t1 = self.event_window
        for t in self.overpass_times:
            if not (t0 <= t <= t1):
                raise ValueError("overpass times must lie within the event window")


# -- default channel scenario -------------------------------------------------

DEFAULT_NX = 60
DEFAULT_NY = 10
DEFAULT_CELL = 200.0
DEFAULT_SLOPE = 5e-4
BED_ROWS = (4, 5)
BANK_STEP = 1.2           # floodplain bench rise per row away from the bank [m]
BENCH_RAMP = 1.2          # extra bench rise from upstream to downstream [m]
BED_INCISION = 2.0        # river bed depth below the first bench [m]
BASE_FLOW = 400.0
PEAK_FLOW = 3000.0
EVENT_END = 172800.0      # 48 h
PEAK_TIME = 118800.0      # 33 h
DEFAULT_OVERPASSES = (21600.0, 54000.0, 118800.0, 151200.0)
STATION_COLS = {"upstream": 15, "midreach": 30, "downstream": 45}


def event_hydrograph(q_base=BASE_FLOW, q_peak=PEAK_FLOW, t_peak=PEAK_TIME,
                     t_end=216000.0, shape=10.0, second_peak=None) -> Hydrograph:
    """Gamma-shaped flood pulse over a base flow; ``second_peak`` (t, q)
    superposes a narrower pulse for the double-peak event variant."""
    times = np.arange(0.0, t_end + 1.0, 1800.0)
    rel = np.maximum(times / t_peak, 1e-12)
    q = q_base + (q_peak - q_base) * (rel * np.exp(1.0 - rel)) ** shape
    if second_peak is not None:
        t2, q2 = second_peak
        scale = 43200.0  # rise time of the second pulse
        rel2 = np.maximum((times - (t2 - scale)) / scale, 1e-12)
        q = q + (q2 - q_base) * (rel2 * np.exp(1.0 - rel2)) ** shape
    return Hydrograph(times, q)


def default_grid() -> ScenarioGrid:
    nx, ny, cell = DEFAULT_NX, DEFAULT_NY, DEFAULT_CELL
    length = nx * cell
    x_centres = (np.arange(nx) + 0.5) * cell
    base = DEFAULT_SLOPE * (length - x_centres)  # bed falls toward downstream
    z = np.empty((ny, nx))
    zone = np.zeros((ny, nx), dtype=np.int64)
    ramp = BENCH_RAMP * np.arange(nx) / (nx - 1)
    for r in range(ny):
        if r in BED_ROWS:
            z[r] = base
        else:
            # benches rise away from the bank and toward downstream, so the
            # wet/dry line sweeps smoothly with stage
            bench = min(abs(r - BED_ROWS[0]), abs(r - BED_ROWS[1])) - 1
            z[r] = base + BED_INCISION + BANK_STEP * bench + ramp
    for r in BED_ROWS:
        zone[r, :nx // 3] = 1
        zone[r, nx // 3: 2 * nx // 3] = 2
        zone[r, 2 * nx // 3:] = 3
    stations = [Station(name, (BED_ROWS[0], col), datum=float(z[BED_ROWS[0], col]))
                for name, col in STATION_COLS.items()]
    upstream = [(r, 0) for r in range(ny)]
    downstream = [(r, nx - 1) for r in range(ny)]
    return ScenarioGrid(cell, cell, z, zone, stations=stations,
                        upstream_cells=upstream, downstream_cells=downstream)


def default_rating_curve() -> RatingCurve:
    """Normal-flow stage-discharge law at the downstream end: bed conveyance
    up to bank-full, floodplain benches above."""
    bed_width = len(BED_ROWS) * DEFAULT_CELL
    k_bed = 40.0 * np.sqrt(DEFAULT_SLOPE) * bed_width
    plain_width = (DEFAULT_NY - len(BED_ROWS)) * DEFAULT_CELL
    k_plain = 17.0 * np.sqrt(DEFAULT_SLOPE) * plain_width
    hs = np.arange(0.0, 6.01, 0.25)
    q = k_bed * hs ** (5.0 / 3.0)
    over = np.maximum(hs - BED_INCISION, 0.0)
    q = q + k_plain * over ** (5.0 / 3.0)
    return RatingCurve(hs, q)


def _steady_initial_state(grid, rating_curve, params) -> RiverState:
    """Relax the channel to a steady base-flow state (the common restart)."""
    h = np.zeros((grid.ny, grid.nx))
    u = np.zeros_like(h)
    for r in BED_ROWS:
        h[r] = 1.0
        u[r] = BASE_FLOW / (len(BED_ROWS) * DEFAULT_CELL * 1.0)
    sim = Simulator(grid, params)
    base = Hydrograph([0.0, 1e6], [BASE_FLOW, BASE_FLOW])
    ks = ControlVector().friction()
    traj = sim.run(RiverState(0.0, h, u, np.zeros_like(h)), ks, 0.0, 43200.0,
                   output_times=(), inflow=base, rating_curve=rating_curve)
    state = traj.restart
    state.t = 0.0
    return state


def default_scenario(params: PhysicalParams = None) -> Scenario:
    grid = default_grid()
    rc = default_rating_curve()
    scen = Scenario(grid=grid, inflow=event_hydrograph(), rating_curve=rc,
                    name="channel-twin")
    scen.initial_state = _steady_initial_state(grid, rc, params)
    return scen


def default_twin(seed: int = 0, double_peak: bool = False,
                 params: PhysicalParams = None) -> TwinScenario:
    """Default twin experiment: hidden truth offsets the friction zones and
    the inflow coefficients; gauge datums sit on the station bed."""
    scen = default_scenario(params)
    if double_peak:
        scen.inflow = event_hydrograph(second_peak=(PEAK_TIME + 43200.0, 2200.0))
    truth = ControlVector(ks0=15.0, ks1=41.0, ks2=34.5, ks3=36.5,
                          a=1.09, b=40.0, c=900.0)
    bias = {"upstream": 0.72, "midreach": 0.45, "downstream": 0.50}
    return TwinScenario(scenario=scen, truth_control=truth, truth_bias=bias,
                        overpass_times=DEFAULT_OVERPASSES,
                        event_window=(0.0, EVENT_END), seed=seed)


# -- synthetic truth and observations ----------------------------------------

def build_truth(tw: TwinScenario, params: PhysicalParams = None,
                extra_output_times=()) -> Trajectory:
    """Deterministic truth run with the hidden control applied."""
    t0, t1 = tw.event_window
    n = int(np.floor((t1 - t0) / tw.sampling_dt + 1e-9))
    out = np.unique(np.concatenate([
        t0 + tw.sampling_dt * np.arange(n + 1),
        np.asarray(tw.overpass_times, dtype=float),
        np.asarray(extra_output_times, dtype=float),
    ]))
    sim = Simulator(tw.scenario.grid, params)
    initial = tw.scenario.initial_state
    state0 = RiverState(t0, initial.h.copy(), initial.u.copy(), initial.v.copy())
    return sim.run(state0, tw.truth_control.friction(), t0, t1, out,
                   inflow=tw.truth_control.inflow(tw.scenario.inflow),
                   rating_curve=tw.scenario.rating_curve)


def generate_gauge_obs(truth: Trajectory, stations, sampling_dt: float = 900.0,
                       tau: float = 0.0, truth_bias=None, rng_seed: int = 0,
                       t0: float = None, t1: float = None) -> GaugeObservationSet:
    """Synthetic gauge series: truth level + station offset + relative noise.

    Noise std is tau * (offset level); this is the generation error, distinct
    from the tau the assimilation assumes.
    """
    truth_bias = truth_bias or {}
    t0 = truth.times[0] if t0 is None else t0
    t1 = truth.times[-1] if t1 is None else t1
    n = int(np.floor((t1 - t0) / sampling_dt + 1e-9))
    times = t0 + sampling_dt * np.arange(n + 1)
    names, ts, vals = [], [], []
    for k, st in enumerate(stations):
        name = st.name if isinstance(st, Station) else st
        levels = truth.station_levels(name, times) + truth_bias.get(name, 0.0)
        if tau > 0:
            rng = rng_stream(rng_seed, "gauge-noise", k)
            levels = levels + tau * levels * rng.standard_normal(levels.size)
        names.extend([name] * times.size)
        ts.extend(times)
        vals.extend(levels)
    order = np.lexsort((np.asarray(names, dtype=object), np.asarray(ts)))
    names = np.asarray(names, dtype=object)[order]
    return GaugeObservationSet(names, np.asarray(ts)[order],
                               np.asarray(vals)[order], tau=0.15)


def exclusion_patches(shape, fraction: float, rng) -> np.ndarray:
    """Contiguous unreliable-observation patches covering exactly
    round(fraction * n_cells) cells, grown by random walks from random seeds."""
    ny, nx = shape
    target = int(round(fraction * ny * nx))
    mask = np.zeros(shape, dtype=bool)
    count = 0
    moves = ((-1, 0), (1, 0), (0, -1), (0, 1))
    while count < target:
        r, c = int(rng.integers(ny)), int(rng.integers(nx))
        if not mask[r, c]:
            mask[r, c] = True
            count += 1
        stale = 0
        while count < target and stale < 200:
            dr, dc = moves[int(rng.integers(4))]
            rr, cc = r + dr, c + dc
            if 0 <= rr < ny and 0 <= cc < nx:
                r, c = rr, cc
                if not mask[r, c]:
                    mask[r, c] = True
                    count += 1
                    stale = 0
                    continue
            stale += 1
    return mask


def generate_flood_extent_obs(truth_state, grid, threshold: float = WET_THRESHOLD,
                              degradation: ExtentDegradation = None,
                              rng=None) -> FloodMask:
    """SAR-like flood mask: rasterised truth, independently flipped pixels,
    and a contiguous excluded region."""
    degradation = degradation or ExtentDegradation(flip_prob=0.0, exclusion_fraction=0.0)
    rng = rng if rng is not None else np.random.default_rng(0)
    base = rasterize_flood_mask(truth_state, None, threshold)
    wet = base.wet.copy()
    exclusion = exclusion_patches(wet.shape, degradation.exclusion_fraction, rng)
    if degradation.flip_prob > 0:
        flips = rng.random(wet.shape) < degradation.flip_prob
        flips &= ~exclusion
        wet ^= flips
    return FloodMask(wet=wet, exclusion=exclusion if exclusion.any() else None)


# -- twin configuration files and asset building -------------------------------

def twin_to_dict(tw: TwinScenario) -> dict:
    return {
        "seed": tw.seed,
        "scenario": "default",
        "truth_control": {k: float(v) for k, v in
                          zip(("ks0", "ks1", "ks2", "ks3", "a", "b", "c"),
                              tw.truth_control.as_array())},
        "truth_bias": {k: float(v) for k, v in tw.truth_bias.items()},
        "overpasses": [float(t) for t in tw.overpass_times],
        "event_window": [float(tw.event_window[0]), float(tw.event_window[1])],
        "sampling_dt": tw.sampling_dt,
        "gauge_tau": tw.gauge_tau,
        "degradation": {"flip_prob": tw.degradation.flip_prob,
                        "exclusion_fraction": tw.degradation.exclusion_fraction},
    }


def twin_from_dict(raw: dict, base_dir=".") -> TwinScenario:
    scen_ref = raw.get("scenario", "default")
    if scen_ref == "default":
        scen = default_scenario()
        if raw.get("double_peak"):
            scen.inflow = event_hydrograph(second_peak=(PEAK_TIME + 43200.0, 2200.0))
    else:
        path = scen_ref if os.path.isabs(scen_ref) else os.path.join(base_dir, scen_ref)
        scen = load_scenario(path)
    tc = raw.get("truth_control", {})
    truth = ControlVector(**{k: float(v) for k, v in tc.items()})
    degr = raw.get("degradation", {})
    return TwinScenario(
        scenario=scen,
        truth_control=truth,
        truth_bias={k: float(v) for k, v in raw.get("truth_bias", {}).items()},
        overpass_times=tuple(float(t) for t in raw.get("overpasses", DEFAULT_OVERPASSES)),
        event_window=tuple(raw.get("event_window", (0.0, EVENT_END))),
        sampling_dt=float(raw.get("sampling_dt", 900.0)),
        gauge_tau=float(raw.get("gauge_tau", 0.02)),
        degradation=ExtentDegradation(float(degr.get("flip_prob", 0.0)),
                                      float(degr.get("exclusion_fraction", 0.086))),
        seed=int(raw.get("seed", 0)),
    )


def load_twin(path) -> TwinScenario:
    with open(path) as f:
        raw = yaml.safe_load(f)
    return twin_from_dict(raw or {}, base_dir=os.path.dirname(os.path.abspath(path)))


def build_twin_assets(tw: TwinScenario, out_dir, params: PhysicalParams = None) -> dict:
    """Generate everything a twin experiment consumes: the scenario asset
    directory, degraded gauge series and flood-extent masks, plus a
    truth/ directory holding the hidden-truth definition and diagnostics
    (never referenced by experiment configs)."""
    os.makedirs(out_dir, exist_ok=True)
    scen = tw.scenario
    grid = scen.grid
    # one static unreliable-observation region, shared by every overpass
    excl = exclusion_patches((grid.ny, grid.nx), tw.degradation.exclusion_fraction,
                             rng_stream(tw.seed, "exclusion"))
    grid.exclusion = excl
    scenario_manifest = save_scenario(scen, os.path.join(out_dir, "scenario"))

    truth_traj = build_truth(tw, params)
    obs = generate_gauge_obs(truth_traj, grid.stations, tw.sampling_dt,
                             tau=tw.gauge_tau, truth_bias=tw.truth_bias,
                             rng_seed=tw.seed,
                             t0=tw.event_window[0], t1=tw.event_window[1])
    obs_dir = os.path.join(out_dir, "obs")
    os.makedirs(os.path.join(obs_dir, "masks"), exist_ok=True)
    gauges_path = os.path.join(obs_dir, "gauges.csv")
    obs.save_csv(gauges_path)

    mask_paths = []
    degr = ExtentDegradation(tw.degradation.flip_prob, 0.0)
    for k, t in enumerate(tw.overpass_times):
        state = truth_traj.state_at(t)
        mask = generate_flood_extent_obs(state, grid, degradation=degr,
                                         rng=rng_stream(tw.seed, "extent", k))
        values = mask.wet.astype(float)
        values[excl] = -9999.0
        path = os.path.join(obs_dir, "masks", f"overpass_{int(t)}.asc")
        write_ascii_grid(path, values, grid.dx)
        mask_paths.append(path)

    truth_dir = os.path.join(out_dir, "truth")
    os.makedirs(truth_dir, exist_ok=True)
    with open(os.path.join(truth_dir, "twin.yaml"), "w") as f:
        yaml.safe_dump(twin_to_dict(tw), f, sort_keys=True)
    rows = []
    for st in grid.stations:
        times, levels = truth_traj.station_series(st.name)
        rows.extend((st.name, float(t), float(z)) for t, z in zip(times, levels))
    with open(os.path.join(truth_dir, "truth_stations.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["station", "t_s", "z"])
        for row in rows:
            w.writerow([row[0], repr(row[1]), repr(row[2])])

    manifest = {
        "scenario": os.path.relpath(scenario_manifest, out_dir),
        "observations": os.path.relpath(gauges_path, out_dir),
        "masks": [os.path.relpath(p, out_dir) for p in mask_paths],
        "hashes": {os.path.relpath(p, out_dir): _sha256(p)
                   for p in [gauges_path] + mask_paths},
        "provenance": {
            "scenario": "scenario-asset",
            "observations": "generated-observation",
            "masks": "generated-observation",
            "truth": "hidden (diagnostics only; not an experiment input)",
        },
        "seed": tw.seed,
    }
    with open(os.path.join(out_dir, "twin_manifest.yaml"), "w") as f:
        yaml.safe_dump(manifest, f, sort_keys=True)
    return {"scenario": scenario_manifest, "observations": gauges_path,
            "masks": os.path.join(obs_dir, "masks"), "truth_dir": truth_dir}


# -- scenario directory I/O ---------------------------------------------------

def _sha256(path) -> str:
    md = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            md.update(chunk)
    return md.hexdigest()


def save_scenario(scen: Scenario, dirpath) -> str:
    """Write a scenario directory: rasters, forcing CSVs, initial restart and
    a manifest referencing every asset with its content hash."""
    os.makedirs(dirpath, exist_ok=True)
    grid = scen.grid
    if abs(grid.dx - grid.dy) > 1e-12:
        raise ValueError("ESRI ASCII rasters require square cells (dx == dy)")
    assets = {}

    def put(name, writer):
        path = os.path.join(dirpath, name)
        writer(path)
        assets[name] = _sha256(path)

    put("z_b.asc", lambda p: write_ascii_grid(p, grid.z_b, grid.dx,
                                              grid.xllcorner, grid.yllcorner))
    put("friction_zones.asc", lambda p: write_ascii_grid(
        p, grid.friction_zone_id.astype(float), grid.dx, grid.xllcorner, grid.yllcorner))
    put("exclusion.asc", lambda p: write_ascii_grid(
        p, grid.exclusion.astype(float), grid.dx, grid.xllcorner, grid.yllcorner))
    put("inflow.csv", scen.inflow.save_csv)
    put("rating_curve.csv", scen.rating_curve.save_csv)
    if scen.initial_state is not None:
        put("initial.restart", lambda p: save_restart(p, scen.initial_state, grid))
    manifest = {
        "name": scen.name,
        "cellsize": grid.dx,
        "stations": [{"name": st.name, "row": int(st.cell[0]), "col": int(st.cell[1]),
                      "datum": float(st.datum)} for st in grid.stations],
        "upstream_cells": [[int(r), int(c)] for r, c in grid.upstream_cells],
        "downstream_cells": [[int(r), int(c)] for r, c in grid.downstream_cells],
        "assets": assets,
    }
    mpath = os.path.join(dirpath, "scenario.yaml")
    with open(mpath, "w") as f:
        yaml.safe_dump(manifest, f, sort_keys=True)
    return mpath


def load_scenario(manifest_path) -> Scenario:
    dirpath = os.path.dirname(os.path.abspath(manifest_path))
    with open(manifest_path) as f:
        manifest = yaml.safe_load(f)
    for name, digest in manifest["assets"].items():
        path = os.path.join(dirpath, name)
        actual = _sha256(path)
        if actual != digest:
            raise ValueError(f"asset {name} content hash mismatch "
                             f"(expected {digest[:12]}, found {actual[:12]})")
    z_b, header = read_ascii_grid(os.path.join(dirpath, "z_b.asc"))
    zones, _ = read_ascii_grid(os.path.join(dirpath, "friction_zones.asc"))
    excl, _ = read_ascii_grid(os.path.join(dirpath, "exclusion.asc"))
    cell = header["cellsize"]
    stations = [Station(s["name"], (s["row"], s["col"]), s["datum"])
                for s in manifest["stations"]]
    grid = ScenarioGrid(cell, cell, z_b, zones.astype(np.int64), excl > 0.5,
                        stations=stations,
                        upstream_cells=[tuple(c) for c in manifest["upstream_cells"]],
                        downstream_cells=[tuple(c) for c in manifest["downstream_cells"]],
                        xllcorner=header["xllcorner"], yllcorner=header["yllcorner"])
    scen = Scenario(grid=grid,
                    inflow=Hydrograph.load_csv(os.path.join(dirpath, "inflow.csv")),
                    rating_curve=RatingCurve.load_csv(os.path.join(dirpath, "rating_curve.csv")),
                    name=manifest["name"])
    restart = os.path.join(dirpath, "initial.restart")
    if os.path.exists(restart):
        scen.initial_state = load_restart(restart, grid)
    return scen
