"""Boundary forcing: inflow hydrographs and stage-discharge rating curves."""

from __future__ import annotations

import csv

import numpy as np


class Hydrograph:
    """Piecewise-linear discharge time series Q(t).

    Samples are (t [s], q [m3/s]) with strictly increasing times and q >= 0.
    Evaluation interpolates linearly and clamps to the endpoint values
    outside the sampled range.
    """

    def __init__(self, times, discharges):
        self.times = np.asarray(times, dtype=float)
        self.discharges = np.asarray(discharges, dtype=float)
        if self.times.ndim != 1 or self.times.shape != self.discharges.shape:
            raise ValueError("times and discharges must be 1D arrays of equal length")
        if self.times.size == 0:
            raise ValueError("hydrograph needs at least one sample")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("hydrograph times must be strictly increasing")
        if np.any(self.discharges < 0):
            raise ValueError("hydrograph discharge must be non-negative")

    def at(self, t):
        """Discharge at time(s) t [m3/s]."""
        return np.interp(t, self.times, self.discharges)

    def save_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["t_s", "q_m3s"])
            for t, q in zip(self.times, self.discharges):
                w.writerow([repr(float(t)), repr(float(q))])

    @classmethod
    def load_csv(cls, path):
        times, qs = _read_two_columns(path)
        return cls(times, qs)


class PerturbedInflow:
    """Inflow Q'(t) = max(0, a*Q(t-c) + b) over a base hydrograph.

    The multiplicative factor a, additive offset b [m3/s] and time shift
    c [s] perturb the base curve; negative results are clipped to zero at
    evaluation time.
    """

    def __init__(self, base: Hydrograph, a: float = 1.0, b: float = 0.0, c: float = 0.0):
        self.base = base
        self.a = float(a)
        self.b = float(b)
        self.c = float(c)

    def at(self, t):
        return np.maximum(0.0, self.a * self.base.at(np.asarray(t, dtype=float) - self.c) + self.b)


class EnsembleInflow:
    """Vectorised Q'(t) = max(0, a*Q(t-c) + b) for a batch of (a, b, c).

    ``at(t)`` with scalar t returns one discharge per member, which is what
    the batched solver expects at its upstream boundary.
    """

    def __init__(self, base: Hydrograph, a, b, c):
        self.base = base
        self.a = np.atleast_1d(np.asarray(a, dtype=float))
        self.b = np.atleast_1d(np.asarray(b, dtype=float))
        self.c = np.atleast_1d(np.asarray(c, dtype=float))
        if not (self.a.shape == self.b.shape == self.c.shape):
            raise ValueError("a, b, c must have one value per member")

    def __len__(self):
        return self.a.size

    def at(self, t):
        q = np.interp(t - self.c, self.base.times, self.base.discharges)
        return np.maximum(0.0, self.a * q + self.b)


class RatingCurve:
    """Piecewise-linear stage-discharge lookup q(h).

    Knots are (h [m], q [m3/s]) with strictly increasing h and
    non-decreasing q; evaluation clamps outside the tabulated range.
    """

    def __init__(self, stages, discharges):
        self.stages = np.asarray(stages, dtype=float)
        self.discharges = np.asarray(discharges, dtype=float)
        if self.stages.ndim != 1 or self.stages.shape != self.discharges.shape:
            raise ValueError("stages and discharges must be 1D arrays of equal length")
        if self.stages.size == 0:
            raise ValueError("rating curve needs at least one knot")
        if np.any(np.diff(self.stages) <= 0):
            raise ValueError("rating-curve stages must be strictly increasing")
        if np.any(np.diff(self.discharges) < 0):
            raise ValueError("rating-curve discharge must be non-decreasing")

    def at(self, h):
        """Discharge for stage(s) h, clamped linear interpolation."""
        return np.interp(h, self.stages, self.discharges)

    def save_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["h_m", "q_m3s"])
            for h, q in zip(self.stages, self.discharges):
                w.writerow([repr(float(h)), repr(float(q))])

    @classmethod
    def load_csv(cls, path):
        hs, qs = _read_two_columns(path)
        return cls(hs, qs)


def _read_two_columns(path):
    xs, ys = [], []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if len(header) < 2:
            raise ValueError(f"{path}: expected a 2-column CSV with header")
        for row in reader:
            if not row:
                continue
            xs.append(float(row[0]))
            ys.append(float(row[1]))
    return np.array(xs), np.array(ys)
