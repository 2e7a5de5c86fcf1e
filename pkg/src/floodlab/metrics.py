"""Skill metrics: 1D station scores and 2D flood-extent scores.

Undefined scores (empty denominators) are returned as NaN and serialised
as "NA" in CSV output, never as 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

WET_THRESHOLD = 0.05  # diagnostic flood-extent threshold [m], distinct from h_dry

# contingency raster codes
CODE_TN = 0
CODE_TP = 1
CODE_FP = 2
CODE_FN = 3
CODE_EXCLUDED = -1

CONTINGENCY_LEGEND = {
    CODE_TP: ("true positive (correctly flooded)", "dark blue"),
    CODE_TN: ("true negative (correctly dry)", "light blue"),
    CODE_FN: ("false negative (under-prediction)", "yellow"),
    CODE_FP: ("false positive (over-prediction)", "red"),
    CODE_EXCLUDED: ("excluded from scoring", "white"),
}


@dataclass
class SeriesPair:
    """Aligned model/observation water-level samples at common timestamps."""
    times: np.ndarray
    model: np.ndarray
    obs: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.model = np.asarray(self.model, dtype=float)
        self.obs = np.asarray(self.obs, dtype=float)
        if not (self.times.shape == self.model.shape == self.obs.shape):
            raise ValueError("series must share one set of timestamps")
        if self.times.size == 0:
            raise ValueError("empty series pair")


@dataclass
class FloodMask:
    """Binary flood raster; True = wet. Optional exclusion raster of the
    same shape flags pixels removed from every tally."""
    wet: np.ndarray
    exclusion: np.ndarray = None

    def __post_init__(self):
        self.wet = np.asarray(self.wet, dtype=bool)
        if self.wet.ndim != 2:
            raise ValueError("flood mask must be 2D")
        if self.exclusion is not None:
            self.exclusion = np.asarray(self.exclusion, dtype=bool)
            if self.exclusion.shape != self.wet.shape:
                raise ValueError("exclusion raster shape mismatch")


@dataclass
class ContingencyCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            if getattr(self, name) < 0:
                raise ValueError("contingency counts must be non-negative")

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn


def rmse(pair: SeriesPair) -> float:
    """Root-mean-square error between model and observed levels [m]."""
    d = pair.model - pair.obs
    return float(np.sqrt(np.mean(d * d)))


def maae(pair: SeriesPair) -> float:
    """Maximum absolute level error over the series [m]."""
    return float(np.max(np.abs(pair.model - pair.obs)))


def nse(pair: SeriesPair) -> float:
    """Nash-Sutcliffe efficiency: 1 perfect, 0 = observation-mean skill."""
    if pair.times.size < 2:
        raise ValueError("NSE needs at least two samples")
    obs_var = np.sum((pair.obs - pair.obs.mean()) ** 2)
    if obs_var == 0:
        raise ValueError("NSE undefined for constant observations")
    return float(1.0 - np.sum((pair.model - pair.obs) ** 2) / obs_var)


def contingency(sim, obs, exclusion=None):
    """Pixelwise contingency tally between simulated and observed masks.

    Returns (counts, raster) where the raster codes TP/TN/FP/FN per pixel
    and marks excluded pixels with CODE_EXCLUDED. Accepts FloodMask or bare
    boolean arrays; an exclusion raster present on either mask is combined
    with the explicit argument.
    """
    sim_wet, sim_ex = _unpack_mask(sim)
    obs_wet, obs_ex = _unpack_mask(obs)
    if sim_wet.shape != obs_wet.shape:
        raise ValueError(
            f"mask dimensions differ: {sim_wet.shape} vs {obs_wet.shape}")
    excl = np.zeros(sim_wet.shape, dtype=bool)
    for extra in (exclusion, sim_ex, obs_ex):
        if extra is not None:
            extra = np.asarray(extra, dtype=bool)
            if extra.shape != sim_wet.shape:
                raise ValueError("exclusion raster dimensions differ from masks")
            excl |= extra
    keep = ~excl
    tp = int(np.count_nonzero(sim_wet & obs_wet & keep))
    fp = int(np.count_nonzero(sim_wet & ~obs_wet & keep))
    fn = int(np.count_nonzero(~sim_wet & obs_wet & keep))
    tn = int(np.count_nonzero(~sim_wet & ~obs_wet & keep))
    raster = np.full(sim_wet.shape, CODE_TN, dtype=np.int8)
    raster[sim_wet & obs_wet] = CODE_TP
    raster[sim_wet & ~obs_wet] = CODE_FP
    raster[~sim_wet & obs_wet] = CODE_FN
    raster[excl] = CODE_EXCLUDED
    return ContingencyCounts(tp=tp, fp=fp, tn=tn, fn=fn), raster


def _unpack_mask(mask):
    if isinstance(mask, FloodMask):
        return mask.wet, mask.exclusion
    return np.asarray(mask, dtype=bool), None


def csi(c: ContingencyCounts) -> float:
    """Critical success index TP/(TP+FP+FN); NaN when both masks are all-dry."""
    denom = c.tp + c.fp + c.fn
    if denom == 0:
        return math.nan
    return c.tp / denom


def f_beta(c: ContingencyCounts, beta: float = 1.0) -> float:
    """F-beta score from precision and recall (beta=1 is the balanced mean).

    Returns 0 when precision/recall vanish or are undefined with pixels
    present; NaN when there are no positives at all (tp=fp=fn=0).
    """
    if c.tp == 0:
        if c.fp == 0 and c.fn == 0:
            return math.nan
        return 0.0
    precision = c.tp / (c.tp + c.fp)
    recall = c.tp / (c.tp + c.fn)
    b2 = beta * beta
    return (1.0 + b2) * precision * recall / (b2 * precision + recall)


def kappa(c: ContingencyCounts, mode: str = "paper") -> float:
    """Cohen's kappa (p_o - p_e)/(1 - p_e).

    mode="paper" uses the positive-class-only chance agreement
    p_e = ((TP+FN)/N)*((TP+FP)/N); mode="standard" adds the negative-class
    term. NaN when p_e reaches 1.
    """
    n = c.total
    if n == 0:
        return math.nan
    p_o = (c.tp + c.tn) / n
    p_e = ((c.tp + c.fn) / n) * ((c.tp + c.fp) / n)
    if mode == "standard":
        p_e += ((c.tn + c.fn) / n) * ((c.tn + c.fp) / n)
    elif mode != "paper":
        raise ValueError("kappa mode must be 'paper' or 'standard'")
    if p_e >= 1.0:
        return math.nan
    return (p_o - p_e) / (1.0 - p_e)


def rasterize_flood_mask(state, grid=None, threshold: float = WET_THRESHOLD) -> FloodMask:
    """Binary flood mask from a depth field: wet iff h > threshold (strict,
    so a pixel at exactly the threshold counts as dry).

    ``state`` is a RiverState or a bare depth array.
    """
    h = state.h if hasattr(state, "h") else np.asarray(state, dtype=float)
    if h.ndim != 2:
        raise ValueError("rasterize expects a single 2D depth field")
    exclusion = grid.exclusion.copy() if grid is not None and np.any(grid.exclusion) else None
    return FloodMask(wet=h > threshold, exclusion=exclusion)


def format_score(value: float) -> str:
    """CSV rendering of a score: 'NA' for undefined results."""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "NA"
    return repr(float(value))
