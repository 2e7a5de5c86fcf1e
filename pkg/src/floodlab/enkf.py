"""Cycled stochastic ensemble Kalman filter over the control vector.

Each cycle slides the assimilation window by ``t_shift``: members are
re-dispersed around the previous analysis mean, propagated through the
solver (with a short spin-up reconciling the restart state with the new
parameters), compared against gauge observations through a bias-aware
observation operator, updated with the perturbed-observation analysis
equations, and finally re-run with the analyzed controls to produce the
next cycle's restart and the forecast launch state.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .forcing import EnsembleInflow
from .grid import Scenario
from .swe import PhysicalParams, RiverState, Simulator, SolverInstabilityError, Trajectory
from .uncertainty import (KS_MIN, ControlPrior, Ensemble, rng_stream,
                          resample_around_mean, sample_prior)


class CycleError(RuntimeError):
    """A member's propagation failed; the whole cycle is aborted (silently
    dropping members would bias the ensemble statistics)."""


@dataclass
class CycleWindow:
    """Assimilation window [t_start, t_end] slid by t_shift each cycle."""
    t_start: float
    t_end: float
    t_shift: float
    spinup: float = 10800.0

    def __post_init__(self):
        if self.t_end <= self.t_start:
            raise ValueError("window must have positive length")
        if not (0 < self.t_shift <= self.length):
            raise ValueError("t_shift must lie in (0, window length]")
        if self.spinup < 0:
            raise ValueError("spinup must be non-negative")

    @property
    def length(self):
        return self.t_end - self.t_start

    def shifted(self, k: int) -> "CycleWindow":
        dt = k * self.t_shift
        return CycleWindow(self.t_start + dt, self.t_end + dt, self.t_shift, self.spinup)


class GaugeObservationSet:
    """Timestamped per-station water levels with a proportional error model.

    Per-record observation error std is tau * value; ``bias`` holds the
    known per-station model-observation offsets applied by the observation
    operator when bias correction is on.
    """

    def __init__(self, stations, times, values, tau: float = 0.15, bias=None):
        self.stations = np.asarray(stations, dtype=object)
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if not (self.stations.shape == self.times.shape == self.values.shape):
            raise ValueError("stations, times and values must align")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("observation values must be finite")
        if tau < 0:
            raise ValueError("tau must be non-negative")
        self.tau = float(tau)
        if tau > 0 and np.any(self.values < 0):
            raise ValueError("tau > 0 requires non-negative observed values "
                             "(sigma_obs = tau * value must be >= 0)")
        self.bias = dict(bias) if bias else {}

    def __len__(self):
        return self.times.size

    def sigma(self) -> np.ndarray:
        return self.tau * self.values

    def select(self, t0: float, t1: float) -> "GaugeObservationSet":
        m = (self.times >= t0 - 1e-9) & (self.times <= t1 + 1e-9)
        return GaugeObservationSet(self.stations[m], self.times[m], self.values[m],
                                   self.tau, self.bias)

    def replace(self, tau=None, bias=None) -> "GaugeObservationSet":
        return GaugeObservationSet(self.stations, self.times, self.values,
                                   self.tau if tau is None else tau,
                                   self.bias if bias is None else bias)

    def station_names(self):
        seen = []
        for s in self.stations:
            if s not in seen:
                seen.append(s)
        return seen

    def save_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["station", "t_s", "value_m"])
            for s, t, v in zip(self.stations, self.times, self.values):
                w.writerow([s, repr(float(t)), repr(float(v))])

    @classmethod
    def load_csv(cls, path, tau: float = 0.15, bias=None):
        stations, times, values = [], [], []
        with open(path, newline="") as f:
            reader = csv.DictReader(f)
            for row in reader:
                stations.append(row["station"])
                times.append(float(row["t_s"]))
                values.append(float(row["value_m"]))
        return cls(stations, times, values, tau, bias)


def save_bias(path, bias: dict):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["station", "bias_m"])
        for name, val in bias.items():
            w.writerow([name, repr(float(val))])


def load_bias(path) -> dict:
    out = {}
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            out[row["station"]] = float(row["bias_m"])
    return out


def observe(trajectory: Trajectory, obs: GaugeObservationSet, window=None,
            bias_mode: str = "off") -> np.ndarray:
    """Model equivalents of the observations: station levels interpolated in
    time, plus the stored per-station bias when bias_mode="on".

    Returns an array shaped batch + (n_obs,) following the record order of
    the (window-selected) observation set.
    """
    if bias_mode not in ("on", "off"):
        raise ValueError("bias_mode must be 'on' or 'off'")
    subset = obs
    if window is not None:
        t0, t1 = (window.t_start, window.t_end) if isinstance(window, CycleWindow) else window
        subset = obs.select(t0, t1)
    batch = trajectory.states[0].batch_shape if trajectory.states else ()
    out = np.empty(batch + (len(subset),))
    for name in subset.station_names():
        idx = np.nonzero(subset.stations == name)[0]
        try:
            levels = trajectory.station_levels(name, subset.times[idx])
        except ValueError as exc:
            raise ValueError(f"observation at station {name!r}: {exc}") from exc
        if bias_mode == "on":
            levels = levels + subset.bias.get(name, 0.0)
        out[..., idx] = levels
    return out


def estimate_bias(free_run: Trajectory, obs: GaugeObservationSet, calib_window) -> dict:
    """Per-station bias = time mean of (obs - model) over the calibration
    window (a quasi-stationary, non-overflowing period)."""
    t0, t1 = calib_window
    subset = obs.select(t0, t1)
    if len(subset) == 0:
        raise ValueError(f"no observations in the calibration window [{t0}, {t1}]")
    out = {}
    for name in subset.station_names():
        idx = subset.stations == name
        model = free_run.station_levels(name, subset.times[idx])
        out[name] = float(np.mean(subset.values[idx] - model))
    return out


def perturb_observations(y_o, sigma_obs, n_e: int, rng_seed: int) -> np.ndarray:
    """Member-wise perturbed observation ensemble, shape (n_obs, n_e).

    Draws are independent per member and per record; a stochastic EnKF
    degenerates without member-independent perturbations.
    """
    y_o = np.asarray(y_o, dtype=float)
    sigma = np.asarray(sigma_obs, dtype=float)
    if np.any(sigma < 0):
        raise ValueError("sigma_obs must be non-negative")
    cols = []
    for i in range(n_e):
        eps = rng_stream(rng_seed, "obspert", i).standard_normal(y_o.size)
        cols.append(y_o + sigma * eps)
    return np.stack(cols, axis=1)


def analysis(x_f: np.ndarray, y_f: np.ndarray, y_obs_ens: np.ndarray, r_diag,
             divisor: str = "ne"):
    """Perturbed-observation analysis update.

    x_f is (n, N_e), y_f and y_obs_ens are (n_obs, N_e), r_diag the diagonal
    of the observation-error covariance. Sample covariances use the 1/N_e
    normalisation by default (divisor="ne-1" switches to 1/(N_e-1)); the
    gain solve goes through a symmetric-positive-definite factorisation.
    Returns (x_a, gain).
    """
    x_f = np.asarray(x_f, dtype=float)
    y_f = np.asarray(y_f, dtype=float)
    y_obs_ens = np.asarray(y_obs_ens, dtype=float)
    n_e = x_f.shape[1]
    if y_f.shape[1] != n_e or y_obs_ens.shape != y_f.shape:
        raise ValueError("inconsistent ensemble shapes")
    if divisor == "ne":
        norm = n_e
    elif divisor == "ne-1":
        norm = n_e - 1
    else:
        raise ValueError("divisor must be 'ne' or 'ne-1'")
    x_anom = x_f - x_f.mean(axis=1, keepdims=True)
    y_anom = y_f - y_f.mean(axis=1, keepdims=True)
    p_xy = x_anom @ y_anom.T / norm
    p_yy = y_anom @ y_anom.T / norm
    r_diag = np.asarray(r_diag, dtype=float)
    s = p_yy + (np.diag(r_diag) if r_diag.ndim == 1 else r_diag)
    try:
        cf = scipy.linalg.cho_factor(s, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise ValueError(
            "(P_yy + R) is not positive definite; use R > 0 (rank-deficient "
            "model-equivalent anomalies cannot be inverted alone)") from exc
    gain = scipy.linalg.cho_solve(cf, p_xy.T).T
    x_a = x_f + gain @ (y_obs_ens - y_f)
    return x_a, gain


@dataclass
class AnalysisRecord:
    """Everything one cycle produced, kept for diagnostics and output."""
    cycle: int
    window: CycleWindow
    stations: np.ndarray
    times: np.ndarray
    y_obs: np.ndarray
    sigma_obs: np.ndarray
    x_f: np.ndarray
    y_f: np.ndarray
    y_obs_ens: np.ndarray
    x_a: np.ndarray
    gain: np.ndarray
    draw_scale: np.ndarray
    restarts: dict = field(default_factory=dict)


@dataclass
class CycleResult:
    record: AnalysisRecord
    forecast_ensemble: Ensemble
    analysis_ensemble: Ensemble
    rerun: Trajectory
    next_restart: RiverState
    end_restart: RiverState


@dataclass
class EnKFSettings:
    n_e: int = 24
    lambda1: float = 0.3
    lambda2: float = 0.7
    bias_mode: str = "off"
    cov_divisor: str = "ne"
    seed: int = 0

    def __post_init__(self):
        if self.n_e < 2:
            raise ValueError("a stochastic EnKF needs n_e >= 2")
        if self.bias_mode not in ("on", "off"):
            raise ValueError("bias_mode must be 'on' or 'off'")


def derive_seed(master_seed: int, label: str) -> int:
    """Stable per-purpose child seed so toggling one consumer of randomness
    does not shift another's draws."""
    return int(rng_stream(master_seed, label).integers(0, 2 ** 62))


class CycledEnKF:
    """Drives the forecast/analysis/rerun loop for one experiment."""

    def __init__(self, scenario: Scenario, prior: ControlPrior,
                 obs: GaugeObservationSet, settings: EnKFSettings,
                 params: PhysicalParams = None, output_cadence: float = 900.0,
                 field_times=()):
        self.scenario = scenario
        self.prior = prior
        self.obs = obs
        self.settings = settings
        self.sim = Simulator(scenario.grid, params)
        self.output_cadence = float(output_cadence)
        self.field_times = np.asarray(sorted(field_times), dtype=float)
        self.ks_floor_hits = 0

    # -- helpers ------------------------------------------------------------

    def _solver_inputs(self, ensemble: Ensemble):
        mat = ensemble.matrix()
        ks = mat[:4].T.copy()  # (N_e, 4)
        if np.any(ks < KS_MIN):
            self.ks_floor_hits += int(np.count_nonzero(ks < KS_MIN))
            ks = np.maximum(ks, KS_MIN)
        ks_field = ks[..., self.scenario.grid.friction_zone_id]
        inflow = EnsembleInflow(self.scenario.inflow, mat[4], mat[5], mat[6])
        return ks_field, inflow

    def _batched(self, state: RiverState, t: float) -> RiverState:
        """Broadcast a single-member restart to the ensemble, clock at t."""
        n_e = self.settings.n_e
        if state.batch_shape == (n_e,):
            return RiverState(t, state.h.copy(), state.u.copy(), state.v.copy())
        if state.batch_shape != ():
            raise ValueError("restart batch shape does not match the ensemble")
        tile = lambda a: np.broadcast_to(a, (n_e,) + a.shape).copy()
        return RiverState(t, tile(state.h), tile(state.u), tile(state.v))

    def _run(self, what, cycle, state, ks_field, inflow, t0, t1, out_times):
        try:
            return self.sim.run(state, ks_field, t0, t1, out_times,
                                inflow=inflow, rating_curve=self.scenario.rating_curve)
        except SolverInstabilityError as exc:
            raise CycleError(f"cycle {cycle}: member {exc.member} failed during "
                             f"{what}: {exc}") from exc

    def _cadence_times(self, t0, t1):
        n = int(np.floor((t1 - t0) / self.output_cadence + 1e-9))
        return t0 + self.output_cadence * np.arange(n + 1)

    # -- the cycle ----------------------------------------------------------

    def run_cycle(self, cycle: int, window: CycleWindow,
                  prev_analysis: Ensemble, restart: RiverState) -> CycleResult:
        """One full cycle: disperse controls, spin up + propagate, analyse,
        then re-run with analyzed controls to stage the next restarts."""
        st = self.settings
        if cycle == 1:
            ens_f = sample_prior(self.prior, st.n_e, derive_seed(st.seed, "controls:1"))
        else:
            ens_f = resample_around_mean(prev_analysis, self.prior, st.lambda1,
                                         st.lambda2, derive_seed(st.seed, f"controls:{cycle}"))

        subset = self.obs.select(window.t_start, window.t_end)
        if len(subset) == 0:
            raise CycleError(f"cycle {cycle}: no observations in "
                             f"[{window.t_start}, {window.t_end}]")

        ks_field, inflow = self._solver_inputs(ens_f)
        state0 = self._batched(restart, window.t_start - window.spinup)
        obs_times = np.unique(subset.times)
        fwd = self._run("forecast propagation", cycle, state0, ks_field, inflow,
                        window.t_start - window.spinup, window.t_end, obs_times)

        y_f_members = observe(fwd, subset, None, st.bias_mode)  # (N_e, n_obs)
        y_f = y_f_members.T
        y_obs_ens = perturb_observations(subset.values, subset.sigma(), st.n_e,
                                         derive_seed(st.seed, f"obspert:{cycle}"))
        x_f = ens_f.matrix()
        x_a, gain = analysis(x_f, y_f, y_obs_ens, subset.sigma() ** 2, st.cov_divisor)
        ens_a = Ensemble.from_matrix(x_a, lineage=[("analysis", cycle, i) for i in range(st.n_e)])

        # analyzed rerun from the same cycle-start restart
        ks_field_a, inflow_a = self._solver_inputs(ens_a)
        t_next = window.t_start + window.t_shift
        out = np.unique(np.concatenate([
            self._cadence_times(window.t_start, window.t_end),
            [t_next, window.t_end],
            self.field_times[(self.field_times >= window.t_start)
                             & (self.field_times <= window.t_end)],
        ]))
        rerun = self._run("analyzed rerun", cycle, self._batched(restart, window.t_start),
                          ks_field_a, inflow_a, window.t_start, window.t_end, out)
        next_restart = rerun.state_at(t_next).copy()
        next_restart.t = t_next

        record = AnalysisRecord(
            cycle=cycle, window=window, stations=subset.stations, times=subset.times,
            y_obs=subset.values, sigma_obs=subset.sigma(), x_f=x_f, y_f=y_f,
            y_obs_ens=y_obs_ens, x_a=x_a, gain=gain, draw_scale=ens_f.scale)
        return CycleResult(record=record, forecast_ensemble=ens_f,
                           analysis_ensemble=ens_a, rerun=rerun,
                           next_restart=next_restart, end_restart=rerun.restart)

    def forecast(self, cycle: int, end_restart: RiverState, analysis_ensemble: Ensemble,
                 horizon: float = 86400.0):
        """Ensemble forecast launched from the analyzed t_end restarts with
        controls held constant.

        Returns (trajectory, rows); rows are (station, lead_s, t, z_mean,
        z_std) at the output cadence.
        """
        ks_field, inflow = self._solver_inputs(analysis_ensemble)
        t0 = end_restart.t
        out = self._cadence_times(t0, t0 + horizon)
        traj = self._run("forecast", cycle, self._batched(end_restart, t0),
                         ks_field, inflow, t0, t0 + horizon, out)
        rows = []
        for st_def in self.scenario.grid.stations:
            times, levels = traj.station_series(st_def.name)  # (N_e, nt)
            z_mean = levels.mean(axis=0)
            z_std = levels.std(axis=0, ddof=1) if levels.shape[0] > 1 else np.zeros(levels.shape[1])
            for j, t in enumerate(times):
                rows.append((st_def.name, t - t0, t, float(z_mean[j]), float(z_std[j])))
        return traj, rows
