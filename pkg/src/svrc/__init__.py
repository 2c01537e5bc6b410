"""Stochastic variance-reduced cubic-regularised Newton methods for finite sums."""

from .algorithms import (InvalidSchedule, LyapunovSchedule, RunAborted, RunResult, cube_split_bound,
                         lyapunov_schedule, run, run_adaptive_svrc, run_corrected_svrc,
                         run_full_cr, run_full_grad_svrc)
from .core import (ComponentProblem, ConfigError, EmptyBatch, IterationRecord, NonFiniteOracle,
                   ProblemInstance, RunConfig, SampleLedger, SVRCError, batch_mean_gradient,
                   batch_mean_hessian, full_gradient, full_hessian, lipschitz_audit)
from .cubic import CubicModel, StepResult, certify, lambda_min, solve_cubic
from .estimators import (BatchSizeRule, EpochSnapshot, batch_sizes, corrected_svr_gradient,
                         epsilon_thresholds, svr_gradient, svr_hessian, take_snapshot)
from .problems import (DatasetFormatError, NonconvexLogistic, RobustRegression, TrigSum, generate,
                       load_dataset, save_dataset)
from .sampling import IndexSampler, empirical_moment, without_replacement_moments

__version__ = "0.1.0"
