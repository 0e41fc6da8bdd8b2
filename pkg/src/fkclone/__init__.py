"""Cloning algorithms and mean-field particle approximations of scaled
cumulant generating functions for finite-state jump processes."""
from .cloning import (CloneSizeDistribution, build_clone_law, enumerate_events, mckean_drift, predict_carre,
                      run_cloning)
from .errors import (BadParams, EnsembleTooSmall, FkcloneError, InsufficientReplicas, MalformedSpec, MeanTooLarge,
                     ModelError, NoGap, NonFinite, NotIrreducible, NumericError, RangeError, StepTooCoarse,
                     UnknownModel, ZeroEscapeRate)
from .estimators import (MartingaleReport, ScalingReport, ScgfEstimate, Simulation, ergodic_estimator,
                         estimate_scgf, factor_estimator, martingale_diagnostic, martingale_parts, scaling_sweep,
                         unnormalized_estimator)
from .mckean import SelectionRates, check_sufficient_condition, selection_rate, total_selection_rate
from .model import (JumpModel, PathSample, build_model, model_from_dense, parse_model_ref, read_model,
                    registry_model, simulate_additive, simulate_path, write_model)
from .oracle import (MarginalTrajectory, SpectralSolution, evolve_marginals, exact_finite_time_scgf, naive_scgf,
                     relaxation_rate, solve_spectral)
from .particles import CloningFactor, EventLog, ParticleEnsemble, init_ensemble, run_meanfield
from .streams import replica_stream
from .tilt import TiltedDynamics, tilt, tilted_matrix

__version__ = "0.1.0"
