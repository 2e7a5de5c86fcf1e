"""Structured model grid and scenario container."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .forcing import Hydrograph, RatingCurve

N_FRICTION_ZONES = 4  # zone 0 = floodplain, zones 1..3 = river bed reaches


@dataclass
class Station:
    """Gauge location: grid cell plus a local datum subtracted from the
    free-surface elevation to form the reported water level."""
    name: str
    cell: tuple  # (row, col)
    datum: float = 0.0


class ScenarioGrid:
    """Rectangular cell-centred grid with bathymetry and friction zoning.

    Arrays are (ny, nx), row 0 at the top of the domain. ``friction_zone_id``
    assigns each cell one of the four Strickler zones; ``exclusion`` flags
    cells removed from 2D score tallies (unreliable-observation areas).
    ``upstream_cells`` / ``downstream_cells`` list the boundary cells where
    the inflow hydrograph and the rating-curve outflow act.
    """

    def __init__(self, dx, dy, z_b, friction_zone_id, exclusion=None,
                 stations=(), upstream_cells=(), downstream_cells=(),
                 xllcorner=0.0, yllcorner=0.0):
        self.dx = float(dx)
        self.dy = float(dy)
        self.z_b = np.asarray(z_b, dtype=float)
        self.friction_zone_id = np.asarray(friction_zone_id, dtype=np.int64)
        if self.z_b.ndim != 2:
            raise ValueError("z_b must be 2D (ny, nx)")
        self.ny, self.nx = self.z_b.shape
        if exclusion is None:
            exclusion = np.zeros_like(self.z_b, dtype=bool)
        self.exclusion = np.asarray(exclusion, dtype=bool)
        self.stations = list(stations)
        self.upstream_cells = [tuple(c) for c in upstream_cells]
        self.downstream_cells = [tuple(c) for c in downstream_cells]
        self.xllcorner = float(xllcorner)
        self.yllcorner = float(yllcorner)
        self._validate()

    def _validate(self):
        if self.dx <= 0 or self.dy <= 0:
            raise ValueError("cell sizes must be positive")
        if not np.all(np.isfinite(self.z_b)):
            raise ValueError("bottom elevation must be finite everywhere")
        if self.friction_zone_id.shape != self.z_b.shape:
            raise ValueError("friction_zone_id shape mismatch")
        if self.exclusion.shape != self.z_b.shape:
            raise ValueError("exclusion shape mismatch")
        zmin, zmax = self.friction_zone_id.min(), self.friction_zone_id.max()
        if zmin < 0 or zmax >= N_FRICTION_ZONES:
            raise ValueError(f"friction zone ids must lie in 0..{N_FRICTION_ZONES - 1}")
        for st in self.stations:
            r, c = st.cell
            if not (0 < r < self.ny - 1 and 0 < c < self.nx - 1):
                raise ValueError(f"station {st.name!r} must sit on an interior cell")
        for r, c in list(self.upstream_cells) + list(self.downstream_cells):
            if not (0 <= r < self.ny and 0 <= c < self.nx):
                raise ValueError("boundary cell outside the grid")

    @property
    def cell_area(self):
        return self.dx * self.dy

    def station(self, name) -> Station:
        for st in self.stations:
            if st.name == name:
                return st
        raise KeyError(f"unknown station {name!r}")

    def checksum(self) -> str:
        """Content hash tying restart files to the grid they were saved on."""
        md = hashlib.sha256()
        md.update(np.array([self.ny, self.nx], dtype=np.int64).tobytes())
        md.update(np.array([self.dx, self.dy], dtype=float).tobytes())
        md.update(np.ascontiguousarray(self.z_b).tobytes())
        md.update(np.ascontiguousarray(self.friction_zone_id).tobytes())
        md.update(np.ascontiguousarray(self.exclusion).tobytes())
        return md.hexdigest()


@dataclass
class Scenario:
    """Everything a simulation run needs: grid, forcing and gauge layout."""
    grid: ScenarioGrid
    inflow: Hydrograph
    rating_curve: RatingCurve
    name: str = "scenario"
    initial_state: "object" = None  # RiverState used as the common restart
    extra: dict = field(default_factory=dict)

    def station_names(self):
        return [st.name for st in self.grid.stations]
