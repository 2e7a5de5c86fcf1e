"""Experiment orchestration: free-run / DA matrix from one config file.

An experiment directory is self-describing: a config echo, every output
file listed in the manifest with its content hash and provenance, per-cycle
DA artifacts under cycles/, simulated flood masks at the observation
overpass times, and a scores CSV covering the 1D station metrics, the 2D
extent metrics and the per-lead forecast errors.
"""

from __future__ import annotations

import csv
import hashlib
import math
import os
import re
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import __version__
from .enkf import (CycledEnKF, CycleWindow, EnKFSettings, GaugeObservationSet,
                   load_bias, save_bias)
from .grid import Scenario
from .metrics import (CONTINGENCY_LEGEND, SeriesPair, contingency, csi, f_beta,
                      kappa, maae, nse, rasterize_flood_mask, rmse)
from .rasters import read_ascii_grid, write_ascii_grid
from .swe import PhysicalParams, RiverState, Simulator, save_restart
from .twinlab import load_scenario
from .uncertainty import CONTROL_NAMES, ControlPrior, ControlVector


class ConfigError(ValueError):
    """Invalid experiment configuration; carries the offending field."""

    def __init__(self, field_name, message):
        self.field = field_name
        super().__init__(f"config field '{field_name}': {message}")


@dataclass
class ExperimentConfig:
    name: str
    mode: str                      # "free_run" | "da"
    scenario: str
    observations: str
    output: str
    bias_correction: str = "off"   # "on" | "off"
    bias_file: str = None
    masks: str = None
    n_e: int = 24
    tau: float = 0.15
    window_start: float = 0.0
    window_length: float = 43200.0
    window_shift: float = 21600.0
    spinup: float = 10800.0
    cycles: int = 5
    forecast_leads: tuple = (21600.0, 43200.0, 64800.0, 86400.0)
    lambda1: float = 0.3
    lambda2: float = 0.7
    cov_divisor: str = "ne"
    seed: int = 0
    output_cadence: float = 900.0

    def validate(self):
        if self.mode not in ("free_run", "da"):
            raise ConfigError("mode", "must be 'free_run' or 'da'")
        if self.bias_correction not in ("on", "off"):
            raise ConfigError("bias_correction", "must be 'on' or 'off'")
        if self.mode == "free_run" and self.n_e != 1:
            raise ConfigError("n_e", "a free run uses exactly 1 member")
        if self.mode == "da":
            if self.n_e < 2:
                raise ConfigError("n_e", "DA needs an ensemble (n_e >= 2)")
            if not (self.tau > 0):
                raise ConfigError("tau", "DA needs a positive observation error "
                                         "coefficient")
        if self.bias_correction == "on" and not self.bias_file:
            raise ConfigError("bias_file", "required when bias_correction is on")
        if self.cycles < 1:
            raise ConfigError("cycles", "need at least one cycle")
        if not (0 < self.window_shift <= self.window_length):
            raise ConfigError("window", "shift must lie in (0, length]")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("lambda1", "lambda weights must be non-negative")
        for p, field_name in ((self.scenario, "scenario"),
                              (self.observations, "observations")):
            if not os.path.exists(p):
                raise ConfigError(field_name, f"path does not exist: {p}")
        if self.masks and not os.path.isdir(self.masks):
            raise ConfigError("masks", f"not a directory: {self.masks}")
        if self.bias_file and not os.path.exists(self.bias_file):
            raise ConfigError("bias_file", f"path does not exist: {self.bias_file}")
        return self

    def coverage(self):
        """Scoring window: from the first cycle start to the last cycle end."""
        t0 = self.window_start
        t1 = t0 + (self.cycles - 1) * self.window_shift + self.window_length
        return t0, t1

    def windows(self):
        base = CycleWindow(self.window_start, self.window_start + self.window_length,
                           self.window_shift, self.spinup)
        return [base.shifted(k) for k in range(self.cycles)]

    def to_dict(self):
        return {
            "name": self.name, "mode": self.mode, "scenario": self.scenario,
            "observations": self.observations, "output": self.output,
            "bias_correction": self.bias_correction, "bias_file": self.bias_file,
            "masks": self.masks, "n_e": self.n_e, "tau": self.tau,
            "window": {"start": self.window_start, "length": self.window_length,
                       "shift": self.window_shift, "spinup": self.spinup},
            "cycles": self.cycles, "forecast_leads": list(self.forecast_leads),
            "lambda1": self.lambda1, "lambda2": self.lambda2,
            "cov_divisor": self.cov_divisor, "seed": self.seed,
            "output_cadence": self.output_cadence,
        }

    @classmethod
    def from_dict(cls, raw, base_dir="."):
        known = {"name", "mode", "scenario", "observations", "output",
                 "bias_correction", "bias_file", "masks", "n_e", "tau", "window",
                 "cycles", "forecast_leads", "lambda1", "lambda2", "cov_divisor",
                 "seed", "output_cadence"}
        for key in raw:
            if key not in known:
                raise ConfigError(key, "unknown field")
        window = raw.get("window", {}) or {}
        for key in ("name", "mode", "scenario", "observations", "output"):
            if key not in raw:
                raise ConfigError(key, "missing required field")

        def path(p):
            return p if p is None or os.path.isabs(p) else os.path.join(base_dir, p)

        cfg = cls(
            name=str(raw["name"]), mode=str(raw["mode"]),
            scenario=path(str(raw["scenario"])),
            observations=path(str(raw["observations"])),
            output=path(str(raw["output"])),
            bias_correction=str(raw.get("bias_correction", "off")),
            bias_file=path(raw.get("bias_file")),
            masks=path(raw.get("masks")),
            n_e=int(raw.get("n_e", 24)),
            tau=float(raw.get("tau", 0.15)),
            window_start=float(window.get("start", 0.0)),
            window_length=float(window.get("length", 43200.0)),
            window_shift=float(window.get("shift", 21600.0)),
            spinup=float(window.get("spinup", 10800.0)),
            cycles=int(raw.get("cycles", 5)),
            forecast_leads=tuple(float(v) for v in raw.get("forecast_leads", ())),
            lambda1=float(raw.get("lambda1", 0.3)),
            lambda2=float(raw.get("lambda2", 0.7)),
            cov_divisor=str(raw.get("cov_divisor", "ne")),
            seed=int(raw.get("seed", 0)),
            output_cadence=float(raw.get("output_cadence", 900.0)),
        )
        return cfg.validate()

    @classmethod
    def load(cls, config_path):
        with open(config_path) as f:
            raw = yaml.safe_load(f)
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "config must be a mapping")
        return cls.from_dict(raw, base_dir=os.path.dirname(os.path.abspath(config_path)))


# -- small CSV helpers ---------------------------------------------------------


def _write_csv(path, header, rows):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def _cell(v):
    if isinstance(v, float):
        return "NA" if math.isnan(v) else repr(float(v))
    return v


def sha256_file(path):
    md = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            md.update(chunk)
    return md.hexdigest()


def _overpass_time_from_name(name):
    m = re.fullmatch(r"overpass_(\d+)\.asc", name)
    return float(m.group(1)) if m else None


def load_observation_masks(masks_dir):
    """Map overpass time -> (wet, exclusion) from overpass_<seconds>.asc files.
    NODATA pixels mark the excluded region."""
    out = {}
    for name in sorted(os.listdir(masks_dir)):
        t = _overpass_time_from_name(name)
        if t is None:
            continue
        values, _ = read_ascii_grid(os.path.join(masks_dir, name))
        excl = np.isnan(values)
        out[t] = (np.nan_to_num(values) > 0.5, excl if excl.any() else None)
    return out


def save_mask(path, wet, exclusion=None, cellsize=1.0):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    values = wet.astype(float)
    if exclusion is not None:
        values = values.copy()
        values[exclusion] = -9999.0
    write_ascii_grid(path, values, cellsize)


# -- the experiment run ---------------------------------------------------------


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    out_dir: str
    station_rows: list
    cycle_records: list = field(default_factory=list)
    draw_scales: list = field(default_factory=list)
    scores: list = field(default_factory=list)


def run_experiment(config: ExperimentConfig, params: PhysicalParams = None,
                   write_restarts: bool = True) -> ExperimentResult:
    """Execute the configured pipeline end to end and write the output tree."""
    config.validate()
    out_dir = config.output
    os.makedirs(out_dir, exist_ok=True)
    scenario = load_scenario(config.scenario)
    bias = load_bias(config.bias_file) if config.bias_file else {}
    obs = GaugeObservationSet.load_csv(config.observations,
                                       tau=config.tau if config.mode == "da" else 0.0,
                                       bias=bias)
    obs_masks = load_observation_masks(config.masks) if config.masks else {}
    t0, t1 = config.coverage()
    overpasses = sorted(t for t in obs_masks if t0 - 1e-9 <= t <= t1 + 1e-9)

    inputs = [(config.scenario, "scenario-asset"),
              (config.observations, "generated-observation")]
    if config.bias_file:
        inputs.append((config.bias_file, "bias-estimate"))
    if config.masks:
        inputs += [(os.path.join(config.masks, n), "generated-observation")
                   for n in sorted(os.listdir(config.masks))
                   if _overpass_time_from_name(n) is not None]

    if config.mode == "free_run":
        result = _run_free(config, scenario, overpasses, params, out_dir)
    else:
        result = _run_da(config, scenario, obs, overpasses, params, out_dir,
                         write_restarts)

    _write_csv(os.path.join(out_dir, "stations.csv"),
               ["station", "t_s", "z_mean", "z_std"], result.station_rows)

    result.scores = score_experiment(out_dir, config, scenario, obs, obs_masks)
    write_manifest(out_dir, config, inputs)
    return result


def _station_rows(traj, scenario, times):
    rows = []
    for st in scenario.grid.stations:
        levels = traj.station_levels(st.name, times)
        if levels.ndim == 1:
            z_mean, z_std = levels, np.zeros_like(levels)
        else:
            z_mean = levels.mean(axis=0)
            z_std = levels.std(axis=0, ddof=1)
        for j, t in enumerate(times):
            rows.append((st.name, float(t), float(z_mean[j]), float(z_std[j])))
    return rows


def _run_free(config, scenario, overpasses, params, out_dir):
    t0, t1 = config.coverage()
    cadence = np.arange(t0, t1 + 1e-9, config.output_cadence)
    out_times = np.unique(np.concatenate([cadence, overpasses])) if overpasses else cadence
    sim = Simulator(scenario.grid, params)
    init = scenario.initial_state
    control = ControlVector()
    traj = sim.run(RiverState(t0, init.h.copy(), init.u.copy(), init.v.copy()),
                   control.friction(), t0, t1, out_times,
                   inflow=scenario.inflow, rating_curve=scenario.rating_curve)
    for t in overpasses:
        mask = rasterize_flood_mask(traj.state_at(t).h)
        save_mask(os.path.join(out_dir, "masks", f"overpass_{int(t)}.asc"),
                  mask.wet, cellsize=scenario.grid.dx)
    return ExperimentResult(config, out_dir, _station_rows(traj, scenario, cadence))


def _run_da(config, scenario, obs, overpasses, params, out_dir, write_restarts):
    settings = EnKFSettings(n_e=config.n_e, lambda1=config.lambda1,
                            lambda2=config.lambda2,
                            bias_mode=config.bias_correction,
                            cov_divisor=config.cov_divisor, seed=config.seed)
    prior = ControlPrior()
    filt = CycledEnKF(scenario, prior, obs, settings, params,
                      output_cadence=config.output_cadence, field_times=overpasses)
    windows = config.windows()
    horizon = max(config.forecast_leads) if config.forecast_leads else 0.0

    station_rows = []
    records = []
    scales = []
    ens = None
    restart = scenario.initial_state
    for c, window in enumerate(windows, start=1):
        res = filt.run_cycle(c, window, ens, restart)
        records.append(res.record)
        scales.append(res.record.draw_scale)
        cycle_dir = os.path.join(out_dir, "cycles", f"cycle_{c:02d}")
        _write_cycle_outputs(cycle_dir, config, scenario, res, write_restarts)

        seg_end = window.t_start + window.t_shift if c < len(windows) else window.t_end
        seg = res.rerun.times[(res.rerun.times >= window.t_start - 1e-9)
                              & (res.rerun.times < seg_end - 1e-9)]
        if c == len(windows):
            seg = np.append(seg, window.t_end)
        seg = seg[np.isin(seg, np.arange(window.t_start, window.t_end + 1e-9,
                                         config.output_cadence))]
        station_rows.extend(_station_rows(res.rerun, scenario, seg))

        for t in overpasses:
            if window.t_start - 1e-9 <= t < seg_end - 1e-9 or \
                    (c == len(windows) and abs(t - window.t_end) <= 1e-9):
                state = res.rerun.state_at(t)
                h_mean = state.h.mean(axis=0)
                mask = rasterize_flood_mask(h_mean)
                save_mask(os.path.join(out_dir, "masks", f"overpass_{int(t)}.asc"),
                          mask.wet, cellsize=scenario.grid.dx)

        if horizon > 0:
            _, rows = filt.forecast(c, res.end_restart, res.analysis_ensemble, horizon)
            _write_csv(os.path.join(cycle_dir, "forecast.csv"),
                       ["station", "lead_s", "t", "z_mean", "z_std"], rows)

        ens = res.analysis_ensemble
        restart = res.next_restart

    station_rows.sort(key=lambda r: (r[0], r[1]))
    _write_merged_controls(out_dir, records)
    result = ExperimentResult(config, out_dir, station_rows, records, scales)
    return result


def _write_cycle_outputs(cycle_dir, config, scenario, res, write_restarts):
    os.makedirs(cycle_dir, exist_ok=True)
    rec = res.record
    control_rows = []
    for phase, mat in (("forecast", rec.x_f), ("analysis", rec.x_a)):
        for i in range(mat.shape[1]):
            control_rows.append((rec.cycle, phase, i) + tuple(float(v) for v in mat[:, i]))
    _write_csv(os.path.join(cycle_dir, "controls.csv"),
               ["cycle", "phase", "member"] + list(CONTROL_NAMES), control_rows)

    innov_rows = []
    y_f_mean = rec.y_f.mean(axis=1)
    innov_mean = (rec.y_obs_ens - rec.y_f).mean(axis=1)
    for k in range(len(rec.times)):
        innov_rows.append((rec.cycle, rec.stations[k], float(rec.times[k]),
                           float(rec.y_obs[k]), float(y_f_mean[k]),
                           float(innov_mean[k]), float(rec.sigma_obs[k])))
    _write_csv(os.path.join(cycle_dir, "innovation.csv"),
               ["cycle", "station", "t_s", "y_obs", "y_f_mean", "innovation_mean",
                "sigma_obs"], innov_rows)

    gain_rows = []
    for ci, comp in enumerate(CONTROL_NAMES):
        for k in range(rec.gain.shape[1]):
            gain_rows.append((rec.cycle, comp, k, rec.stations[k],
                              float(rec.times[k]), float(rec.gain[ci, k])))
    _write_csv(os.path.join(cycle_dir, "gain.csv"),
               ["cycle", "component", "record", "station", "t_s", "gain"], gain_rows)

    # member inflow curves over the window (forecast-phase controls)
    w = rec.window
    ts = np.arange(w.t_start - w.spinup, w.t_end + 1e-9, 1800.0)
    hyd_rows = []
    for i in range(rec.x_f.shape[1]):
        a, b, c_shift = rec.x_f[4, i], rec.x_f[5, i], rec.x_f[6, i]
        q = np.maximum(0.0, a * scenario.inflow.at(ts - c_shift) + b)
        for t, qv in zip(ts, q):
            hyd_rows.append((rec.cycle, i, float(t), float(qv)))
    _write_csv(os.path.join(cycle_dir, "hydrographs.csv"),
               ["cycle", "member", "t_s", "q_m3s"], hyd_rows)

    if write_restarts:
        rdir = os.path.join(cycle_dir, "restarts")
        os.makedirs(rdir, exist_ok=True)
        save_restart(os.path.join(rdir, "analysis_shift.restart"),
                     res.next_restart, scenario.grid)
        save_restart(os.path.join(rdir, "analysis_end.restart"),
                     res.end_restart, scenario.grid)
        rec.restarts = {"shift": "restarts/analysis_shift.restart",
                        "end": "restarts/analysis_end.restart"}


def _write_merged_controls(out_dir, records):
    rows = []
    for rec in records:
        for phase, mat in (("forecast", rec.x_f), ("analysis", rec.x_a)):
            for i in range(mat.shape[1]):
                rows.append((rec.cycle, phase, i) + tuple(float(v) for v in mat[:, i]))
    _write_csv(os.path.join(out_dir, "controls.csv"),
               ["cycle", "phase", "member"] + list(CONTROL_NAMES), rows)


# -- bias diagnosis ---------------------------------------------------------------


def diagnose_bias(stations_csv, obs_csv, calib_window, out_path=None):
    """Per-station mean(obs - model) over the calibration window, from a
    free run's station series CSV."""
    model = {}
    with open(stations_csv, newline="") as f:
        for row in csv.DictReader(f):
            model.setdefault(row["station"], []).append(
                (float(row["t_s"]), float(row["z_mean"])))
    obs = GaugeObservationSet.load_csv(obs_csv, tau=0.0)
    t0, t1 = calib_window
    subset = obs.select(t0, t1)
    if len(subset) == 0:
        raise ValueError(f"no observations in the calibration window [{t0}, {t1}]")
    bias = {}
    for name in subset.station_names():
        if name not in model:
            raise ValueError(f"station {name!r} missing from {stations_csv}")
        series = np.array(sorted(model[name]))
        idx = subset.stations == name
        interp = np.interp(subset.times[idx], series[:, 0], series[:, 1])
        bias[name] = float(np.mean(subset.values[idx] - interp))
    if out_path:
        save_bias(out_path, bias)
    return bias


# -- scoring ------------------------------------------------------------------------


def score_experiment(out_dir, config: ExperimentConfig, scenario: Scenario,
                     obs: GaugeObservationSet, obs_masks) -> list:
    """RMSE/MaAE/NSE per station, CSI/F1/kappa per overpass, and forecast
    RMSE per lead; writes scores.csv and the contingency rasters."""
    rows = []
    station_series = _load_station_series(os.path.join(out_dir, "stations.csv"))
    t0, t1 = config.coverage()
    bias = obs.bias if config.bias_correction == "on" else {}

    for name, series in station_series.items():
        idx = (obs.stations == name) & (obs.times >= t0 - 1e-9) & (obs.times <= t1 + 1e-9)
        if not np.any(idx):
            continue
        times = obs.times[idx]
        model = np.interp(times, series[:, 0], series[:, 1]) + bias.get(name, 0.0)
        pair = SeriesPair(times, model, obs.values[idx])
        rows.append((config.name, "", "rmse", name, "", rmse(pair)))
        rows.append((config.name, "", "maae", name, "", maae(pair)))
        rows.append((config.name, "", "nse", name, "", nse(pair)))

    legend_written = False
    for t, (obs_wet, obs_excl) in sorted(obs_masks.items()):
        sim_path = os.path.join(out_dir, "masks", f"overpass_{int(t)}.asc")
        if not os.path.exists(sim_path):
            continue
        sim_values, header = read_ascii_grid(sim_path)
        sim_wet = np.nan_to_num(sim_values) > 0.5
        excl = obs_excl
        if scenario is not None and np.any(scenario.grid.exclusion):
            extra = scenario.grid.exclusion
            excl = extra if excl is None else (excl | extra)
        counts, raster = contingency(sim_wet, obs_wet, excl)
        cpath = os.path.join(out_dir, "contingency", f"overpass_{int(t)}.asc")
        os.makedirs(os.path.dirname(cpath), exist_ok=True)
        write_ascii_grid(cpath, raster.astype(float), header["cellsize"],
                         nodata=-1.0)
        if not legend_written:
            _write_contingency_legend(os.path.join(out_dir, "contingency", "legend.txt"))
            legend_written = True
        rows.append((config.name, t, "csi", "extent", "", csi(counts)))
        rows.append((config.name, t, "f1", "extent", "", f_beta(counts)))
        rows.append((config.name, t, "kappa", "extent", "", kappa(counts)))

    rows.extend(_forecast_scores(out_dir, config, obs))

    _write_csv(os.path.join(out_dir, "scores.csv"),
               ["experiment", "time_s", "metric", "target", "lead_s", "value"], rows)
    return rows


def _load_station_series(stations_csv):
    series = {}
    with open(stations_csv, newline="") as f:
        for row in csv.DictReader(f):
            series.setdefault(row["station"], []).append(
                (float(row["t_s"]), float(row["z_mean"])))
    return {k: np.array(sorted(v)) for k, v in series.items()}


def _forecast_scores(out_dir, config, obs):
    """Per-lead forecast RMSE around the observed flood peak: for each target
    instant the value comes from the most recent launch at least `lead`
    earlier (the cycled-forecast update pattern)."""
    cycles_dir = os.path.join(out_dir, "cycles")
    if not os.path.isdir(cycles_dir) or not config.forecast_leads:
        return []
    launches = {}
    for cdir in sorted(os.listdir(cycles_dir)):
        fpath = os.path.join(cycles_dir, cdir, "forecast.csv")
        if not os.path.exists(fpath):
            continue
        per_station = {}
        launch_t = None
        with open(fpath, newline="") as f:
            for row in csv.DictReader(f):
                t = float(row["t"])
                lead = float(row["lead_s"])
                launch_t = t - lead if launch_t is None else launch_t
                per_station.setdefault(row["station"], []).append((t, float(row["z_mean"])))
        if launch_t is not None:
            launches[launch_t] = {k: np.array(sorted(v)) for k, v in per_station.items()}
    if not launches:
        return []
    launch_times = np.array(sorted(launches))

    # peak window: +/- 3 h around the observed maximum at the middle station
    names = obs.station_names()
    mid = names[len(names) // 2]
    midsel = obs.stations == mid
    t_peak = float(obs.times[midsel][np.argmax(obs.values[midsel])])
    bias = obs.bias if config.bias_correction == "on" else {}

    rows = []
    for lead in config.forecast_leads:
        sq_sum = 0.0
        n = 0
        per_station_err = {}
        for name in names:
            sel = (obs.stations == name) & (np.abs(obs.times - t_peak) <= 10800.0)
            for t, y_o in zip(obs.times[sel], obs.values[sel]):
                eligible = launch_times[launch_times <= t - lead + 1e-9]
                if eligible.size == 0:
                    continue
                launch = launches[float(eligible[-1])]
                if name not in launch:
                    continue
                series = launch[name]
                if t < series[0, 0] - 1e-9 or t > series[-1, 0] + 1e-9:
                    continue
                z = np.interp(t, series[:, 0], series[:, 1]) + bias.get(name, 0.0)
                err = z - y_o
                sq_sum += err * err
                n += 1
                per_station_err.setdefault(name, []).append(err)
        for name, errs in sorted(per_station_err.items()):
            val = float(np.sqrt(np.mean(np.square(errs))))
            rows.append((config.name, t_peak, "forecast_rmse", name, lead, val))
        rows.append((config.name, t_peak, "forecast_rmse", "all",
                     lead, float(np.sqrt(sq_sum / n)) if n else math.nan))
    return rows


def _write_contingency_legend(path):
    with open(path, "w") as f:
        f.write("contingency raster codes\n")
        for code in (1, 0, 3, 2, -1):
            desc, colour = CONTINGENCY_LEGEND[code]
            f.write(f"{code}: {desc} [{colour}]\n")


# -- manifest -----------------------------------------------------------------------


def write_manifest(out_dir, config: ExperimentConfig, inputs):
    """Config echo + content hash of every output file + input provenance.
    Written last so a re-run can be compared hash for hash."""
    config_echo = os.path.join(out_dir, "config.yaml")
    with open(config_echo, "w") as f:
        yaml.safe_dump(config.to_dict(), f, sort_keys=True)
    outputs = {}
    for root, _, files in os.walk(out_dir):
        for name in sorted(files):
            path = os.path.join(root, name)
            rel = os.path.relpath(path, out_dir)
            if rel == "manifest.yaml":
                continue
            outputs[rel] = sha256_file(path)
    manifest = {
        "experiment": config.name,
        "seed": config.seed,
        "versions": {"floodlab": __version__, "numpy": np.__version__},
        "inputs": [{"path": os.path.abspath(p), "sha256": sha256_file(p),
                    "provenance": prov} for p, prov in inputs],
        "outputs": outputs,
    }
    with open(os.path.join(out_dir, "manifest.yaml"), "w") as f:
        yaml.safe_dump(manifest, f, sort_keys=True)
    return manifest


ALLOWED_PROVENANCE = {"scenario-asset", "generated-observation", "bias-estimate",
                      "config"}


def check_hidden_truth(manifest_path):
    """Hidden-truth hygiene: every experiment input must carry an allowed
    provenance tag, and none may be a twin truth-control file."""
    with open(manifest_path) as f:
        manifest = yaml.safe_load(f)
    for item in manifest.get("inputs", []):
        if item["provenance"] not in ALLOWED_PROVENANCE:
            raise ValueError(f"input {item['path']} has disallowed provenance "
                             f"{item['provenance']!r}")
        base = os.path.basename(item["path"])
        if base in ("twin.yaml", "truth_control.yaml"):
            raise ValueError(f"truth definition {item['path']} leaked into the "
                             "experiment inputs")
    return True
