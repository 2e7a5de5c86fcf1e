"""Probabilistic description of the assimilated parameters.

The control vector holds 7 scalars: four zoned Strickler coefficients and
the three inflow-perturbation coefficients (multiplicative a, additive b,
time shift c). Priors are independent Gaussians; resampling between cycles
recentres on the previous analysis mean with a spread that can never fall
below lambda2 * prior sigma (the anti-collapse rule).
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .forcing import Hydrograph, PerturbedInflow
from .swe import FrictionSet

CONTROL_NAMES = ("ks0", "ks1", "ks2", "ks3", "a", "b", "c")
KS_MIN = 1.0  # Gaussian tails can reach non-physical Strickler values


def rng_stream(master_seed: int, label: str, index: int = None) -> np.random.Generator:
    """Named, reproducible RNG stream derived from a master seed.

    Streams are independent across labels and indices, so toggling one
    consumer does not shift another's draws.
    """
    entropy = [int(master_seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(label.encode())]
    if index is not None:
        entropy.append(int(index))
    return np.random.default_rng(np.random.SeedSequence(entropy))


@dataclass
class ControlVector:
    """The 7 assimilated scalars."""
    ks0: float = 17.0
    ks1: float = 45.0
    ks2: float = 38.0
    ks3: float = 40.0
    a: float = 1.0
    b: float = 0.0
    c: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.ks0, self.ks1, self.ks2, self.ks3, self.a, self.b, self.c])

    @classmethod
    def from_array(cls, arr) -> "ControlVector":
        arr = np.asarray(arr, dtype=float)
        if arr.shape != (7,):
            raise ValueError("control vector has exactly 7 scalars")
        return cls(*[float(x) for x in arr])

    def friction(self) -> FrictionSet:
        return FrictionSet([self.ks0, self.ks1, self.ks2, self.ks3])

    def inflow(self, base: Hydrograph) -> PerturbedInflow:
        return PerturbedInflow(base, self.a, self.b, self.c)


@dataclass
class ControlPrior:
    """Independent Gaussian PDFs: calibrated means and spreads per component."""
    mean: ControlVector = field(default_factory=ControlVector)
    sigma: np.ndarray = field(
        default_factory=lambda: np.array([0.85, 2.25, 1.9, 2.0, 0.06, 100.0, 900.0]))

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma, dtype=float)
        if self.sigma.shape != (7,):
            raise ValueError("sigma must have 7 components")
        if np.any(self.sigma <= 0):
            raise ValueError("sigma must be positive componentwise")


class Ensemble:
    """Ordered set of control vectors with reproducible seed lineage.

    ``scale`` records the per-component standard deviation the members were
    drawn with (prior sigma for the first cycle, the anti-collapse
    combination afterwards).
    """

    def __init__(self, members, lineage=None, scale=None):
        self.members = list(members)
        if len(self.members) < 1:
            raise ValueError("ensemble needs at least one member")
        self.lineage = list(lineage) if lineage is not None else []
        self.scale = None if scale is None else np.asarray(scale, dtype=float)

    def __len__(self):
        return len(self.members)

    def matrix(self) -> np.ndarray:
        """Members stacked as columns, shape (7, N_e)."""
        return np.stack([m.as_array() for m in self.members], axis=1)

    @classmethod
    def from_matrix(cls, mat, lineage=None, scale=None) -> "Ensemble":
        mat = np.asarray(mat, dtype=float)
        return cls([ControlVector.from_array(col) for col in mat.T], lineage, scale)

    def mean(self) -> np.ndarray:
        return self.matrix().mean(axis=1)

    def std(self) -> np.ndarray:
        """Sample std with the N_e - 1 divisor; zero for a single member."""
        if len(self) == 1:
            return np.zeros(7)
        return self.matrix().std(axis=1, ddof=1)


def _clip_ks(mat: np.ndarray) -> np.ndarray:
    mat[:4] = np.maximum(mat[:4], KS_MIN)
    return mat


def perturb_hydrograph(q: Hydrograph, a: float, b: float, c: float) -> PerturbedInflow:
    """Parametric inflow perturbation Q'(t) = a*Q(t-c) + b, clipped at zero.

    Q is evaluated with clamped linear interpolation, so the time shift
    holds the first/last recorded discharge outside the sampled range.
    """
    return PerturbedInflow(q, a, b, c)


def sample_prior(prior: ControlPrior, n_e: int, rng_seed: int) -> Ensemble:
    """Independent Gaussian draws around the prior mean (first-cycle sampling)."""
    if n_e < 1:
        raise ValueError("n_e must be at least 1")
    mean = prior.mean.as_array()
    cols = []
    lineage = []
    for i in range(n_e):
        theta = rng_stream(rng_seed, "prior", i).standard_normal(7)
        cols.append(_clip_ks(mean + prior.sigma * theta))
        lineage.append(("prior", int(rng_seed), i))
    return Ensemble.from_matrix(np.stack(cols, axis=1), lineage, scale=prior.sigma.copy())


def resample_around_mean(analysis: Ensemble, prior: ControlPrior,
                         lambda1: float, lambda2: float, rng_seed: int) -> Ensemble:
    """Anti-collapse resampling around the previous analysis mean.

    Each member is mean(analysis) + theta with theta ~ N(0, sigma_c^2) and
    sigma_c = lambda1 * std(analysis) + lambda2 * prior sigma, so the spread
    never falls below lambda2 * sigma.
    """
    if lambda1 < 0 or lambda2 < 0:
        raise ValueError("lambda weights must be non-negative")
    centre = analysis.mean()
    sigma_c = lambda1 * analysis.std() + lambda2 * prior.sigma
    cols = []
    lineage = []
    for i in range(len(analysis)):
        theta = rng_stream(rng_seed, "resample", i).standard_normal(7)
        cols.append(_clip_ks(centre + sigma_c * theta))
        lineage.append(("resample", int(rng_seed), i))
    return Ensemble.from_matrix(np.stack(cols, axis=1), lineage, scale=sigma_c)
