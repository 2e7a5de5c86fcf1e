"""Twin-experiment construction: truth runs, synthetic gauges, degraded
flood-extent masks and scenario directory round trips."""

import numpy as np
import pytest

from floodlab.swe import RiverState, Simulator
from floodlab.twinlab import (ExtentDegradation, build_truth, default_twin,
                              event_hydrograph, exclusion_patches,
                              generate_flood_extent_obs, generate_gauge_obs,
                              load_scenario, save_scenario)
from floodlab.uncertainty import ControlVector


@pytest.fixture(scope="module")
def twin():
    return default_twin(seed=0)


@pytest.fixture(scope="module")
def truth_traj(twin):
    return build_truth(twin)


def test_default_scenario_shape(twin):
    grid = twin.scenario.grid
    assert grid.nx == 60 and grid.ny == 10
    assert sorted(set(grid.friction_zone_id.ravel())) == [0, 1, 2, 3]
    assert len(grid.stations) == 3
    # stations sit on the river bed, datum on the local bed elevation
    for st in grid.stations:
        r, c = st.cell
        assert grid.friction_zone_id[r, c] in (1, 2, 3)
        assert st.datum == grid.z_b[r, c]


def test_default_scenario_initial_state_is_steady(twin):
    scen = twin.scenario
    init = scen.initial_state
    sim = Simulator(scen.grid)
    base_q = scen.inflow.at(0.0)
    from floodlab.forcing import Hydrograph
    const = Hydrograph([0.0, 1e7], [base_q, base_q])
    traj = sim.run(RiverState(0.0, init.h.copy(), init.u.copy(), init.v.copy()),
                   ControlVector().friction(), 0.0, 10800.0, [10800.0],
                   inflow=const, rating_curve=scen.rating_curve)
    assert np.max(np.abs(traj.states[0].h - init.h)) < 0.02


def test_truth_equals_free_run_for_default_control(twin):
    neutral = default_twin(seed=0)
    neutral.truth_control = ControlVector()  # prior means
    t1 = build_truth(neutral)
    scen = neutral.scenario
    sim = Simulator(scen.grid)
    init = scen.initial_state
    t2 = sim.run(RiverState(0.0, init.h.copy(), init.u.copy(), init.v.copy()),
                 ControlVector().friction(), *neutral.event_window,
                 output_times=t1.times, inflow=scen.inflow,
                 rating_curve=scen.rating_curve)
    for a, b in zip(t1.states[::16], t2.states[::16]):
        assert np.array_equal(a.h, b.h)


def test_truth_run_overbanks_at_peak(twin, truth_traj):
    peak_state = truth_traj.state_at(118800.0)
    grid = twin.scenario.grid
    plain = grid.friction_zone_id == 0
    interior_plain = plain.copy()
    interior_plain[:, :10] = False  # skip the upstream-injection artifact region
    n_wet_peak = np.count_nonzero(peak_state.h[interior_plain] > 0.05)
    assert n_wet_peak > 20
    # ... but the flood must not saturate the whole plain, or extent scores
    # cannot discriminate between experiments
    assert n_wet_peak < 0.9 * np.count_nonzero(interior_plain)
    # base flow stays in the bed away from the inflow boundary
    early_state = truth_traj.state_at(21600.0)
    assert np.count_nonzero(early_state.h[interior_plain] > 0.05) == 0


def test_upstream_injection_artifact_reproduced(truth_traj, twin):
    # uniform inflow over the whole upstream interface wets the nearby plain
    # even at base flow (the deliberate boundary-artifact analog)
    early_state = truth_traj.state_at(21600.0)
    grid = twin.scenario.grid
    near_plain = (grid.friction_zone_id == 0).copy()
    near_plain[:, 8:] = False
    assert np.count_nonzero(early_state.h[near_plain] > 0.05) > 0


def test_double_peak_event_has_two_maxima():
    q = event_hydrograph(second_peak=(162000.0, 2200.0))
    ts = np.linspace(0, 216000, 2001)
    qs = q.at(ts)
    interior = (qs[1:-1] > qs[:-2]) & (qs[1:-1] > qs[2:])
    peaks = ts[1:-1][interior & (qs[1:-1] > 800)]
    assert len(peaks) == 2


def test_build_truth_deterministic(twin, truth_traj):
    again = build_truth(twin)
    assert np.array_equal(again.states[-1].h, truth_traj.states[-1].h)


# -- gauge observations ---------------------------------------------------------

def test_gauge_obs_noise_free(twin, truth_traj):
    obs = generate_gauge_obs(truth_traj, twin.scenario.grid.stations,
                             sampling_dt=900.0, tau=0.0, truth_bias={}, rng_seed=1)
    name = twin.scenario.grid.stations[0].name
    idx = obs.stations == name
    levels = truth_traj.station_levels(name, obs.times[idx])
    assert np.allclose(obs.values[idx], levels, atol=1e-12)


def test_gauge_obs_bias_offset(twin, truth_traj):
    bias = {"upstream": 0.72}
    obs0 = generate_gauge_obs(truth_traj, twin.scenario.grid.stations,
                              tau=0.0, truth_bias={}, rng_seed=1)
    obs1 = generate_gauge_obs(truth_traj, twin.scenario.grid.stations,
                              tau=0.0, truth_bias=bias, rng_seed=1)
    up = obs0.stations == "upstream"
    assert np.allclose(obs1.values[up] - obs0.values[up], 0.72, atol=1e-12)
    other = ~up
    assert np.allclose(obs1.values[other], obs0.values[other], atol=1e-12)


def test_gauge_obs_noise_statistics(twin, truth_traj):
    obs0 = generate_gauge_obs(truth_traj, twin.scenario.grid.stations,
                              tau=0.0, truth_bias={}, rng_seed=4)
    obs1 = generate_gauge_obs(truth_traj, twin.scenario.grid.stations,
                              tau=0.15, truth_bias={}, rng_seed=4)
    rel = (obs1.values - obs0.values) / obs0.values
    assert abs(rel.std(ddof=1) - 0.15) / 0.15 <= 0.10


def test_gauge_obs_deterministic(twin, truth_traj):
    a = generate_gauge_obs(truth_traj, twin.scenario.grid.stations,
                           tau=0.1, truth_bias={}, rng_seed=7)
    b = generate_gauge_obs(truth_traj, twin.scenario.grid.stations,
                           tau=0.1, truth_bias={}, rng_seed=7)
    assert np.array_equal(a.values, b.values)


# -- flood-extent observations ----------------------------------------------------

def test_extent_obs_exact_when_undegraded(twin, truth_traj):
    state = truth_traj.state_at(118800.0)
    mask = generate_flood_extent_obs(state, twin.scenario.grid,
                                     degradation=ExtentDegradation(0.0, 0.0),
                                     rng=np.random.default_rng(0))
    assert np.array_equal(mask.wet, state.h > 0.05)
    assert mask.exclusion is None


def test_extent_obs_flip_fraction(twin, truth_traj):
    state = truth_traj.state_at(118800.0)
    rng = np.random.default_rng(3)
    flip_p = 0.05
    mask = generate_flood_extent_obs(state, twin.scenario.grid,
                                     degradation=ExtentDegradation(flip_p, 0.0),
                                     rng=rng)
    base = state.h > 0.05
    n = base.size
    flipped = np.count_nonzero(mask.wet != base)
    sd = np.sqrt(n * flip_p * (1 - flip_p))
    assert abs(flipped - n * flip_p) <= 3 * sd


def test_extent_obs_exclusion_share(twin, truth_traj):
    state = truth_traj.state_at(118800.0)
    mask = generate_flood_extent_obs(state, twin.scenario.grid,
                                     degradation=ExtentDegradation(0.0, 0.086),
                                     rng=np.random.default_rng(5))
    share = mask.exclusion.mean()
    assert share == pytest.approx(0.086, abs=0.01)


def test_exclusion_patches_are_contiguous():
    rng = np.random.default_rng(2)
    mask = exclusion_patches((30, 40), 0.086, rng)
    assert mask.sum() == round(0.086 * 30 * 40)
    # every excluded cell has at least one excluded 4-neighbour (patches, not salt)
    ny, nx = mask.shape
    lonely = 0
    for r, c in zip(*np.nonzero(mask)):
        neigh = [(r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)]
        if not any(0 <= rr < ny and 0 <= cc < nx and mask[rr, cc] for rr, cc in neigh):
            lonely += 1
    assert lonely <= 2


def test_degradation_validation():
    with pytest.raises(ValueError):
        ExtentDegradation(flip_prob=0.6)
    with pytest.raises(ValueError):
        ExtentDegradation(exclusion_fraction=1.0)


# -- scenario round trip ------------------------------------------------------------

def test_scenario_roundtrip(tmp_path, twin):
    path = save_scenario(twin.scenario, tmp_path / "scen")
    back = load_scenario(path)
    assert np.array_equal(back.grid.z_b, twin.scenario.grid.z_b)
    assert np.array_equal(back.grid.friction_zone_id, twin.scenario.grid.friction_zone_id)
    assert [s.name for s in back.grid.stations] == [s.name for s in twin.scenario.grid.stations]
    assert back.grid.checksum() == twin.scenario.grid.checksum()
    assert np.array_equal(back.initial_state.h, twin.scenario.initial_state.h)
    assert np.array_equal(back.inflow.discharges, twin.scenario.inflow.discharges)


def test_scenario_hash_mismatch_detected(tmp_path, twin):
    path = save_scenario(twin.scenario, tmp_path / "scen")
    raster = tmp_path / "scen" / "z_b.asc"
    text = raster.read_text()
    raster.write_text(text.replace("ncols", "ncols", 1) + "\n")
    with pytest.raises(ValueError, match="hash mismatch"):
        load_scenario(path)
