import numpy as np
import pytest

from floodlab.forcing import Hydrograph, RatingCurve
from floodlab.grid import Scenario, ScenarioGrid, Station
from floodlab.swe import FrictionSet, RiverState, Simulator


def build_mini_scenario():
    """Small sloped channel (3 x 20 cells, zone 1 everywhere) that reaches
    steady state in seconds; used by the EnKF cycle tests."""
    ny, nx, dx = 3, 20, 50.0
    s0 = 1e-3
    xc = (np.arange(nx) + 0.5) * dx
    zb = np.tile(s0 * (nx * dx - xc), (ny, 1))
    zones = np.ones((ny, nx), dtype=int)
    stations = [Station("gaugeA", (1, 6), datum=float(zb[1, 6])),
                Station("gaugeB", (1, 13), datum=float(zb[1, 13]))]
    grid = ScenarioGrid(dx, dx, zb, zones, stations=stations,
                        upstream_cells=[(r, 0) for r in range(ny)],
                        downstream_cells=[(r, nx - 1) for r in range(ny)])
    q_base = 30.0
    inflow = Hydrograph([0.0, 1e7], [q_base, q_base])
    hs = np.linspace(0.0, 2.0, 41)
    rc = RatingCurve(hs, 40.0 * np.sqrt(s0) * ny * dx * hs ** (5.0 / 3.0))
    scen = Scenario(grid=grid, inflow=inflow, rating_curve=rc, name="mini")
    sim = Simulator(grid)
    h0 = np.full((ny, nx), 0.35)
    state = RiverState(0.0, h0, np.zeros_like(h0), np.zeros_like(h0))
    relaxed = sim.run(state, FrictionSet([40.0, 40.0, 40.0, 40.0]), 0.0, 7200.0,
                      inflow=inflow, rating_curve=rc).restart
    relaxed.t = 0.0
    scen.initial_state = relaxed
    return scen


@pytest.fixture(scope="session")
def mini_scenario():
    return build_mini_scenario()
