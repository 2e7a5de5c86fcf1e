"""floodlab: desk-scale flood simulation and data assimilation laboratory."""

from .forcing import EnsembleInflow, Hydrograph, PerturbedInflow, RatingCurve
from .grid import Scenario, ScenarioGrid, Station
from .swe import (FrictionSet, PhysicalParams, RiverState, Simulator,
                  SolverInstabilityError, Trajectory, friction_source,
                  load_restart, rating_curve_eval, run, save_restart, stable_dt,
                  step)
from .uncertainty import (CONTROL_NAMES, ControlPrior, ControlVector, Ensemble,
                          perturb_hydrograph, resample_around_mean, rng_stream,
                          sample_prior)
from .enkf import (AnalysisRecord, CycledEnKF, CycleError, CycleWindow,
                   EnKFSettings, GaugeObservationSet, analysis, estimate_bias,
                   observe, perturb_observations)
from .metrics import (ContingencyCounts, FloodMask, SeriesPair, contingency,
                      csi, f_beta, kappa, maae, nse, rasterize_flood_mask, rmse)

__version__ = "0.1.0"
