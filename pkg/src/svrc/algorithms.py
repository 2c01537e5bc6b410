"""Cubic-regularised Newton optimisers: adaptive SVRC, the two fixed-batch
SVRC variants, and deterministic CR, plus Lyapunov schedules and output
selection.

Every run is organised as K stages of m inner steps, indexed (k, t) from 0.
The fixed-batch and adaptive methods anchor each stage at a snapshot x_tilde;
full CR has no snapshot but keeps the same (k, t) layout so that output
scores and telemetry are comparable.
"""

from __future__ import annotations

import dataclasses
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import (NonFiniteOracle, ProblemInstance, RunConfig, SampleLedger, SVRCError,
                   IterationRecord, full_gradient, full_hessian)
from .cubic import CubicModel, lambda_min, solve_cubic
from .estimators import (BatchSizeRule, EpochSnapshot, batch_sizes, corrected_svr_gradient,
                         epsilon_thresholds, svr_gradient, svr_hessian, take_snapshot)
from .sampling import PURPOSE_GRADIENT, PURPOSE_HESSIAN, PURPOSE_OUTPUT, IndexSampler, stream

VARIANTS = ("full_grad", "corrected")


class InvalidSchedule(SVRCError, ValueError):
    pass


class RunAborted(SVRCError):
    """A run hit a non-finite value; ``history`` and ``ledger`` hold everything recorded so far."""

    def __init__(self, message: str, history: list, ledger: SampleLedger):
        self.history = history
        self.ledger = ledger
        super().__init__(message)


def cube_split_bound(a: float, b: float, theta1: float, theta2: float) -> float:
    """Right-hand side of (a + b)^3 <= (1 + 2/theta1^3 + 1/theta2^6) a^3 + (1 + theta1^6 + 2 theta2^3) b^3."""
    return ((1 + 2 * theta1 ** -3 + theta2 ** -6) * a ** 3
            + (1 + theta1 ** 6 + 2 * theta2 ** 3) * b ** 3)


@dataclass
class LyapunovSchedule:
    variant: str
    c: np.ndarray
    gamma: float
    theta1: float
    theta2: float

    def value(self, F_value: float, drift: float, t: int) -> float:
        """R_t = F(x_t) + c_t ||x_t - x_tilde||^3."""
        return F_value + float(self.c[t]) * drift ** 3


def lyapunov_schedule(variant: str, m: int, B: float, S: float | None, rho: float, sigma: float,
                      theta1: float, theta2: float) -> LyapunovSchedule:
    """Backward recursion c_m = 0, c_t = c_{t+1}(1 + 2/theta1^3 + 1/theta2^6) + 3 rho / B^1.5
    (plus sqrt(2) rho / (3 S^0.75) for the corrected variant), and

        gamma = min_{t=0..m-1} sigma/4 - base - c_{t+1} (1 + theta1^6 + 2 theta2^3)

    with base = rho/2 (full_grad) or 5 rho/6 (corrected).

    Raises InvalidSchedule when gamma <= 0.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    if m < 1 or B < 1:
        raise ValueError("need m >= 1 and B >= 1")
    if variant == "corrected" and (S is None or S < 1):
        raise ValueError("corrected variant needs S >= 1")
    if theta1 <= 0 or theta2 <= 0:
        raise ValueError("theta1, theta2 must be positive")
    growth = 1 + 2 * theta1 ** -3 + theta2 ** -6
    add = 3 * rho / B ** 1.5
    base = rho / 2
    if variant == "corrected":
        add += math.sqrt(2) * rho / (3 * S ** 0.75)
        base = 5 * rho / 6
    c = np.zeros(m + 1)
    for t in range(m - 1, -1, -1):
        c[t] = c[t + 1] * growth + add
    weight = 1 + theta1 ** 6 + 2 * theta2 ** 3
    gamma = min(sigma / 4 - base - c[t + 1] * weight for t in range(m))
    sched = LyapunovSchedule(variant, c, float(gamma), theta1, theta2)
    if not gamma > 0:
        raise InvalidSchedule(f"gamma = {gamma:.6g} <= 0 for variant={variant}, m={m}, B={B}, S={S}, "
                              f"rho={rho}, sigma={sigma}")
    return sched


@dataclass
class TraceStep:
    """Iterate x_t, the estimates used at it, and the step taken from it."""

    k: int
    t: int
    x: np.ndarray
    x_tilde: np.ndarray
    g_est: np.ndarray
    H_est: np.ndarray
    xi: np.ndarray


@dataclass
class RunResult:
    x_out: np.ndarray
    selected: tuple[int, int]
    history: list[IterationRecord]
    ledger: SampleLedger
    grad_norm: float
    lambda_min: float
    config: RunConfig
    points: list[np.ndarray] = field(default_factory=list, repr=False)
    anchors: list[np.ndarray] = field(default_factory=list, repr=False)
    scores: np.ndarray | None = field(default=None, repr=False)
    gamma: float | None = None
    trace: list[TraceStep] | None = field(default=None, repr=False)

    @property
    def iterations(self) -> int:
        return len(self.history)


def select_output(scores, option: str, rng: np.random.Generator | None = None) -> int:
    """Index of the selected iteration: first minimiser of the scores, or uniform."""
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        raise ValueError("no iterations to select from")
    if option == "argmin":
        return int(np.argmin(scores))
    if option == "uniform_random":
        return int(rng.integers(scores.size))
    raise ValueError(f"unknown output option {option!r}")


class _Runner:
    """Shared stage/step loop; subclasses supply the estimates and the drift weight."""

    snapshot_gradient = True
    snapshot_hessian = True

    def __init__(self, problem: ProblemInstance, config: RunConfig):
        self.problem = problem
        self.cfg = config.resolve(problem)
        self.ledger = SampleLedger()
        self.pair_cost = 1 if self.cfg.count_pairs_once else 2
        self.gamma = None

    # -- pieces overridden per algorithm ------------------------------------
    def uses_snapshot(self) -> bool:
        return True

    def drift_weight(self) -> float:
        return 0.0

    def estimates(self, snap, x, k, t, xi_prev_norm, drift):
        raise NotImplementedError

    # -- helpers ------------------------------------------------------------
    def sampler(self, k, t, purpose):
        return IndexSampler(self.cfg.sampling_mode, stream(self.cfg.seed, k, t, purpose))

    def gradient_batch(self, snap, x, k, t, n, corrected=False):
        N = self.problem.N
        if n >= N and self.cfg.cap_to_full:
            return full_gradient(self.problem, x, self.ledger), N
        idx = self.sampler(k, t, PURPOSE_GRADIENT).draw(N, n)
        est = corrected_svr_gradient if corrected else svr_gradient
        return est(self.problem, snap, x, idx, self.ledger, self.pair_cost), n

    def hessian_batch(self, snap, x, k, t, n):
        N = self.problem.N
        if n >= N and self.cfg.cap_to_full:
            return full_hessian(self.problem, x, self.ledger), N
        idx = self.sampler(k, t, PURPOSE_HESSIAN).draw(N, n)
        return svr_hessian(self.problem, snap, x, idx, self.ledger, self.pair_cost), n

    def _abort(self, message, history):
        raise RunAborted(message, history, self.ledger)

    # -- main loop ----------------------------------------------------------
    def run(self) -> RunResult:
        cfg, problem = self.cfg, self.problem
        x = cfg.x0.copy()
        history: list[IterationRecord] = []
        points, anchors = [], []
        scores = []
        trace = [] if cfg.keep_trace else None
        weight = self.drift_weight()
        sqrt_eps = math.sqrt(cfg.epsilon)
        t_start = time.perf_counter_ns()
        stop = False
        try:
            for k in range(cfg.K):
                snap = None
                if self.uses_snapshot():
                    snap = take_snapshot(problem, x, self.ledger, k,
                                         gradient=self.snapshot_gradient, hessian=self.snapshot_hessian)
                x_tilde = x.copy()
                xi_prev_norm = 0.0
                for t in range(cfg.m):
                    drift = float(np.linalg.norm(x - x_tilde))
                    g, H, nb_g, nb_h = self.estimates(snap, x, k, t, xi_prev_norm, drift)
                    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(H))):
                        self._abort(f"non-finite estimate at stage {k}, step {t}", history)
                    step = solve_cubic(CubicModel(g, 0.5 * (H + H.T), cfg.sigma))
                    self.ledger.charge_solve()
                    xi = step.xi
                    x_new = x + xi
                    F_new = problem.value(x_new)
                    if not math.isfinite(F_new):
                        self._abort(f"non-finite objective at stage {k}, step {t}", history)
                    grad_norm = float(np.linalg.norm(problem.exact_gradient(x_new)))
                    lmin = math.nan
                    if cfg.diag == "full" or (cfg.early_stop and grad_norm <= cfg.epsilon):
                        lmin = lambda_min(problem.exact_hessian(x_new))
                    if trace is not None:
                        trace.append(TraceStep(k, t, x.copy(), x_tilde.copy(), g.copy(), H.copy(), xi.copy()))
                    history.append(IterationRecord(
                        k=k, t=t, batch_g=nb_g, batch_h=nb_h, xi_norm=step.r, F_value=F_new,
                        exact_grad_norm=grad_norm, lambda_min=lmin,
                        cum_bg=self.ledger.gradient_samples, cum_bh=self.ledger.hessian_samples,
                        wall_time_ns=time.perf_counter_ns() - t_start, drift=drift))
                    points.append(x_new)
                    anchors.append(x_tilde)
                    scores.append(self.score(step.r, xi_prev_norm, drift, weight))
                    x = x_new
                    xi_prev_norm = step.r
                    if cfg.early_stop and grad_norm <= cfg.epsilon and lmin >= -sqrt_eps:
                        stop = True
                        break
                if stop:
                    break
        except NonFiniteOracle as exc:
            self._abort(str(exc), history)

        rng = stream(cfg.seed, 0, 0, PURPOSE_OUTPUT)
        j = select_output(scores, cfg.output_option, rng)
        x_out = points[j]
        return RunResult(
            x_out=x_out, selected=(history[j].k, history[j].t), history=history, ledger=self.ledger,
            grad_norm=float(np.linalg.norm(problem.exact_gradient(x_out))),
            lambda_min=lambda_min(problem.exact_hessian(x_out)), config=cfg,
            points=points, anchors=anchors, scores=np.array(scores), gamma=self.gamma, trace=trace)

    def score(self, r, r_prev, drift, weight):
        return r ** 3 + weight * drift ** 3


class _AdaptiveRunner(_Runner):
    def __init__(self, problem, config):
        super().__init__(problem, config)
        self.rule = BatchSizeRule(self.cfg.epsilon, self.cfg.sampling_mode, problem.N)

    def score(self, r, r_prev, drift, weight):
        return r ** 3 + r_prev ** 3

    def estimates(self, snap, x, k, t, xi_prev_norm, drift):
        if self.cfg.exact_oracles:
            N = self.problem.N
            return (full_gradient(self.problem, x, self.ledger),
                    full_hessian(self.problem, x, self.ledger), N, N)
        eps_g, eps_H = epsilon_thresholds(xi_prev_norm, self.cfg.epsilon)
        n_g, n_h = batch_sizes(self.rule, drift, eps_g, eps_H)
        g, n_g = self.gradient_batch(snap, x, k, t, n_g)
        H, n_h = self.hessian_batch(snap, x, k, t, n_h)
        return g, H, n_g, n_h


class _FullCRRunner(_Runner):
    def uses_snapshot(self):
        return False

    def score(self, r, r_prev, drift, weight):
        return r ** 3 + r_prev ** 3

    def estimates(self, snap, x, k, t, xi_prev_norm, drift):
        N = self.problem.N
        return (full_gradient(self.problem, x, self.ledger),
                full_hessian(self.problem, x, self.ledger), N, N)


class _FixedBatchRunner(_Runner):
    variant = "full_grad"

    def schedule_sizes(self):
        return self.cfg.B, None

    def drift_weight(self):
        cfg, rho = self.cfg, self.problem.rho
        B, S = self.schedule_sizes()
        if cfg.gamma_override is not None:
            self.gamma = float(cfg.gamma_override)
        else:
            try:
                self.gamma = lyapunov_schedule(self.variant, cfg.m, B, S, rho, cfg.sigma,
                                               cfg.theta1, cfg.theta2).gamma
            except InvalidSchedule as exc:
                warnings.warn(f"{exc}; using gamma = rho for output weighting", stacklevel=3)
                self.gamma = rho
        if rho == 0 or self.gamma == 0:
            return 0.0
        w = (rho / self.gamma) / (2 * B ** 1.5)
        if S is not None:
            w += (rho / self.gamma) / (3 * math.sqrt(2) * S ** 0.75)
        return w


class _FullGradRunner(_FixedBatchRunner):
    snapshot_gradient = False

    def estimates(self, snap, x, k, t, xi_prev_norm, drift):
        g = full_gradient(self.problem, x, self.ledger)
        H, n_h = self.hessian_batch(snap, x, k, t, self.cfg.B)
        return g, H, self.problem.N, n_h


class _CorrectedRunner(_FixedBatchRunner):
    variant = "corrected"

    def schedule_sizes(self):
        return self.cfg.B, self.cfg.S

    def estimates(self, snap, x, k, t, xi_prev_norm, drift):
        g, n_g = self.gradient_batch(snap, x, k, t, self.cfg.S, corrected=True)
        H, n_h = self.hessian_batch(snap, x, k, t, self.cfg.B)
        return g, H, n_g, n_h


_RUNNERS = {
    "adaptive_svrc": _AdaptiveRunner,
    "full_grad_svrc": _FullGradRunner,
    "corrected_svrc": _CorrectedRunner,
    "full_cr": _FullCRRunner,
}


def _run_as(name, problem, config):
    if config.algorithm != name:
        config = dataclasses.replace(config, algorithm=name)
    return _RUNNERS[name](problem, config).run()


def run_adaptive_svrc(problem: ProblemInstance, config: RunConfig) -> RunResult:
    """Adaptive SVRC: batch sizes grow with the drift from the stage snapshot
    and shrink as steps get longer. Output option ``argmin`` minimises
    ||xi_t||^3 + ||xi_{t-1}||^3."""
    return _run_as("adaptive_svrc", problem, config)


def run_full_grad_svrc(problem: ProblemInstance, config: RunConfig) -> RunResult:
    """Exact gradients every step, fixed-size variance-reduced Hessians."""
    return _run_as("full_grad_svrc", problem, config)


def run_corrected_svrc(problem: ProblemInstance, config: RunConfig) -> RunResult:
    """Fixed-size variance-reduced Hessians and second-order-corrected gradients."""
    return _run_as("corrected_svrc", problem, config)


def run_full_cr(problem: ProblemInstance, config: RunConfig) -> RunResult:
    """Deterministic cubic-regularised Newton with exact g and H each step."""
    return _run_as("full_cr", problem, config)


def run(problem: ProblemInstance, config: RunConfig) -> RunResult:
    """Dispatch on ``config.algorithm``."""
    config.validate()
    return _RUNNERS[config.algorithm](problem, config).run()
