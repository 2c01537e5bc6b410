"""Finite-sum problem oracles, sample accounting, run configuration and telemetry rows."""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

# Components per chunk when stacking per-component Hessians. Fixed so that the
# reduction order never depends on machine or thread count.
_CHUNK = 1024


class SVRCError(Exception):
    """Base class for errors raised by this package."""


class NonFiniteOracle(SVRCError):
    def __init__(self, index: int, kind: str):
        self.index = index
        self.kind = kind
        super().__init__(f"non-finite {kind} returned by component {index}")


class EmptyBatch(SVRCError):
    pass


class ConfigError(SVRCError, ValueError):
    pass


class ProblemInstance:
    """Finite-sum objective F(x) = (1/N) sum_i f_i(x).

    Subclasses implement the vectorised component oracles ``_values``,
    ``_grads`` and ``_hessians``, each taking a point ``x`` and an integer
    index array and returning one row per index. Indices are 0-based.

    Attributes:
        N: number of components.
        d: dimension.
        L: Lipschitz constant of every component gradient.
        rho: Lipschitz constant of every component Hessian, Frobenius norm.
        F_star_lower: optional known lower bound on F.
    """

    kind = "generic"

    def __init__(self, N: int, d: int, L: float, rho: float, F_star_lower: float | None = None):
        if N < 1 or d < 1:
            raise ValueError(f"need N, d >= 1, got N={N}, d={d}")
        if L < 0 or rho < 0:
            raise ValueError("Lipschitz constants must be nonnegative")
        self.N = int(N)
        self.d = int(d)
        self.L = float(L)
        self.rho = float(rho)
        self.F_star_lower = F_star_lower

    def _values(self, x: np.ndarray, idx: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _grads(self, x: np.ndarray, idx: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _hessians(self, x: np.ndarray, idx: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _check_index(self, i: int) -> np.ndarray:
        if not 0 <= i < self.N:
            raise IndexError(f"component index {i} out of range for N={self.N}")
        return np.array([i])

    def value_i(self, x, i: int) -> float:
        return float(self._values(np.asarray(x, dtype=float), self._check_index(i))[0])

    def grad_i(self, x, i: int) -> np.ndarray:
        return self._grads(np.asarray(x, dtype=float), self._check_index(i))[0]

    def hess_i(self, x, i: int) -> np.ndarray:
        h = self._hessians(np.asarray(x, dtype=float), self._check_index(i))[0]
        return 0.5 * (h + h.T)

    def value(self, x) -> float:
        """F(x). Function values are not sampled quantities and are never charged."""
        x = np.asarray(x, dtype=float)
        vals = self._values(x, np.arange(self.N))
        _check_finite(vals, np.arange(self.N), "value")
        return float(vals.sum() / self.N)

    def exact_gradient(self, x) -> np.ndarray:
        """Uncharged diagnostic gradient of F."""
        return _mean_over(self._grads, np.asarray(x, dtype=float), np.arange(self.N), "gradient")

    def exact_hessian(self, x) -> np.ndarray:
        """Uncharged diagnostic Hessian of F."""
        h = _mean_over(self._hessians, np.asarray(x, dtype=float), np.arange(self.N), "Hessian")
        return 0.5 * (h + h.T)

    def __repr__(self):
        return f"{type(self).__name__}(N={self.N}, d={self.d}, L={self.L:.4g}, rho={self.rho:.4g})"


class ComponentProblem(ProblemInstance):
    """Problem assembled from per-component Python callables.

    Handy for small hand-built instances; vectorised subclasses are much faster.
    """

    kind = "components"

    def __init__(self, values: Sequence[Callable], grads: Sequence[Callable],
                 hessians: Sequence[Callable], d: int, L: float, rho: float,
                 F_star_lower: float | None = None):
        if not (len(values) == len(grads) == len(hessians)):
            raise ValueError("values, grads and hessians must have the same length")
        super().__init__(len(values), d, L, rho, F_star_lower)
        self._fs = list(values)
        self._gs = list(grads)
        self._hs = list(hessians)

    def _values(self, x, idx):
        return np.array([self._fs[i](x) for i in idx], dtype=float)

    def _grads(self, x, idx):
        return np.array([np.reshape(self._gs[i](x), self.d) for i in idx], dtype=float)

    def _hessians(self, x, idx):
        return np.array([np.reshape(self._hs[i](x), (self.d, self.d)) for i in idx], dtype=float)


@dataclass
class SampleLedger:
    """Monotone counters of component oracle evaluations for one run."""

    gradient_samples: int = 0
    hessian_samples: int = 0
    subproblem_solves: int = 0

    def charge_gradients(self, n: int) -> None:
        if n < 0:
            raise ValueError("sample charges must be nonnegative")
        self.gradient_samples += int(n)

    def charge_hessians(self, n: int) -> None:
        if n < 0:
            raise ValueError("sample charges must be nonnegative")
        self.hessian_samples += int(n)

    def charge_solve(self) -> None:
        self.subproblem_solves += 1

    def snapshot(self) -> tuple[int, int]:
        return self.gradient_samples, self.hessian_samples


def _check_finite(arr: np.ndarray, idx: np.ndarray, kind: str) -> None:
    if not np.all(np.isfinite(arr)):
        flat = arr.reshape(len(idx), -1)
        bad = int(np.argmax(~np.all(np.isfinite(flat), axis=1)))
        raise NonFiniteOracle(int(idx[bad]), kind)


def _mean_over(oracle, x: np.ndarray, idx: np.ndarray, kind: str) -> np.ndarray:
    # Sum chunk by chunk in ascending index order; the result is bit-for-bit
    # reproducible and identical for every caller passing the same indices.
    acc = None
    for start in range(0, len(idx), _CHUNK):
        chunk = idx[start:start + _CHUNK]
        rows = oracle(x, chunk)
        _check_finite(rows, chunk, kind)
        part = rows.sum(axis=0)
        acc = part if acc is None else acc + part
    return acc / len(idx)


def _batch_indices(indices) -> np.ndarray:
    idx = np.sort(np.asarray(indices, dtype=np.int64).ravel())
    if idx.size == 0:
        raise EmptyBatch("batch mean over an empty index set")
    return idx


def batch_mean_gradient(problem: ProblemInstance, x, indices, ledger: SampleLedger | None = None) -> np.ndarray:
    """Mean of component gradients over a (multi)set of indices.

    Duplicated indices count once per occurrence, both in the mean and in the
    ledger.
    """
    idx = _batch_indices(indices)
    g = _mean_over(problem._grads, np.asarray(x, dtype=float), idx, "gradient")
    if ledger is not None:
        ledger.charge_gradients(idx.size)
    return g


def batch_mean_hessian(problem: ProblemInstance, x, indices, ledger: SampleLedger | None = None) -> np.ndarray:
    idx = _batch_indices(indices)
    h = _mean_over(problem._hessians, np.asarray(x, dtype=float), idx, "Hessian")
    if ledger is not None:
        ledger.charge_hessians(idx.size)
    return 0.5 * (h + h.T)


def full_gradient(problem: ProblemInstance, x, ledger: SampleLedger | None = None) -> np.ndarray:
    """Exact gradient of F, charging N gradient samples."""
    return batch_mean_gradient(problem, x, np.arange(problem.N), ledger)


def full_hessian(problem: ProblemInstance, x, ledger: SampleLedger | None = None) -> np.ndarray:
    """Exact (symmetrised) Hessian of F, charging N Hessian samples."""
    return batch_mean_hessian(problem, x, np.arange(problem.N), ledger)


@dataclass
class LipschitzAudit:
    L: float
    rho: float
    max_grad_ratio: float
    max_hess_ratio: float

    @property
    def ok(self) -> bool:
        tol = 1e-9
        return (self.max_grad_ratio <= self.L * (1 + tol) + tol
                and self.max_hess_ratio <= self.rho * (1 + tol) + tol)


def lipschitz_audit(problem: ProblemInstance, pairs: int = 100, radius: float = 1.0,
                    scale: float = 2.0, seed: int = 0) -> LipschitzAudit:
    """Largest observed gradient/Hessian difference ratios over random point pairs.

    Points x are Gaussian with standard deviation ``scale``; y = x + u with
    ||u|| <= radius. Ratios are maximised over all components.
    """
    rng = np.random.default_rng(seed)
    idx = np.arange(problem.N)
    worst_g = worst_h = 0.0
    for _ in range(pairs):
        x = rng.normal(scale=scale, size=problem.d)
        u = rng.normal(size=problem.d)
        u *= radius * rng.uniform(0.01, 1.0) / np.linalg.norm(u)
        y = x + u
        dist = np.linalg.norm(u)
        for start in range(0, problem.N, _CHUNK):
            chunk = idx[start:start + _CHUNK]
            dg = problem._grads(x, chunk) - problem._grads(y, chunk)
            dh = problem._hessians(x, chunk) - problem._hessians(y, chunk)
            worst_g = max(worst_g, float(np.max(np.linalg.norm(dg, axis=1))) / dist)
            worst_h = max(worst_h, float(np.max(np.linalg.norm(dh, axis=(1, 2)))) / dist)
    return LipschitzAudit(problem.L, problem.rho, worst_g, worst_h)


ALGORITHMS = ("adaptive_svrc", "full_grad_svrc", "corrected_svrc", "full_cr")
SAMPLING_MODES = ("with_replacement", "without_replacement")
OUTPUT_OPTIONS = ("argmin", "uniform_random")
DIAG_LEVELS = ("output", "full")


@dataclass
class RunConfig:
    """Parameters of one optimisation run.

    ``m`` and ``K`` left as None are filled in by :meth:`resolve`:
    m = max(1, ceil(N^(1/3)/3)) (Algorithm 3: N^(1/5)) and K = ceil(eps^(-3/2)/m).
    ``B``/``S`` default to 8 N^(2/3) for full_grad_svrc and 12 N^(2/5), B^2 for
    corrected_svrc (``alpha`` overrides the 8 or 12).
    """

    sigma: float
    epsilon: float
    algorithm: str = "adaptive_svrc"
    m: int | None = None
    K: int | None = None
    sampling_mode: str = "with_replacement"
    seed: int = 0
    output_option: str = "argmin"
    B: int | None = None
    S: int | None = None
    alpha: float | None = None
    gamma_override: float | None = None
    theta1: float | None = None
    theta2: float | None = None
    # Charge one sample per sampled index instead of one per evaluation point.
    count_pairs_once: bool = False
    # Batches whose rule asks for >= N samples become exact full evaluations.
    cap_to_full: bool = True
    exact_oracles: bool = False
    early_stop: bool = False
    diag: str = "output"
    keep_trace: bool = False
    x0: np.ndarray | None = field(default=None, repr=False)

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if self.sampling_mode not in SAMPLING_MODES:
            raise ConfigError(f"unknown sampling mode {self.sampling_mode!r}")
        if self.output_option not in OUTPUT_OPTIONS:
            raise ConfigError(f"unknown output option {self.output_option!r}")
        if self.diag not in DIAG_LEVELS:
            raise ConfigError(f"unknown diag level {self.diag!r}")
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ConfigError("sigma must be positive")
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ConfigError("epsilon must be positive")
        for name in ("m", "K", "B", "S"):
            val = getattr(self, name)
            if val is not None and val < 1:
                raise ConfigError(f"{name} must be a positive integer")

    def resolve(self, problem: ProblemInstance) -> "RunConfig":
        """Return a copy with defaults filled in for ``problem``; warns on theory violations."""
        self.validate()
        N, rho, L = problem.N, problem.rho, problem.L
        cfg = dataclasses.replace(self)
        root = 5 if cfg.algorithm == "corrected_svrc" else 3
        if cfg.m is None:
            cfg.m = max(1, math.ceil(N ** (1.0 / root) / 3))
        if cfg.K is None:
            cfg.K = max(1, math.ceil(cfg.epsilon ** -1.5 / cfg.m))
        if cfg.algorithm == "full_grad_svrc":
            alpha = 8.0 if cfg.alpha is None else cfg.alpha
            if cfg.B is None:
                cfg.B = min(N, math.ceil(alpha * N ** (2.0 / 3)))
            if cfg.theta1 is None:
                cfg.theta1 = N ** (1.0 / 9)
            if cfg.theta2 is None:
                cfg.theta2 = N ** (1.0 / 18)
            if cfg.sigma < 3 * rho:
                warnings.warn(f"sigma={cfg.sigma:g} < 3*rho={3 * rho:g}; descent guarantee does not apply",
                              stacklevel=2)
        elif cfg.algorithm == "corrected_svrc":
            alpha = 12.0 if cfg.alpha is None else cfg.alpha
            if cfg.B is None:
                cfg.B = math.ceil(alpha * N ** 0.4)
            if cfg.S is None:
                cfg.S = cfg.B ** 2
            if cfg.theta1 is None:
                cfg.theta1 = N ** (1.0 / 15)
            if cfg.theta2 is None:
                cfg.theta2 = N ** (1.0 / 30)
            if cfg.sigma < 4 * rho:
                warnings.warn(f"sigma={cfg.sigma:g} < 4*rho={4 * rho:g}; descent guarantee does not apply",
                              stacklevel=2)
        elif cfg.algorithm == "adaptive_svrc":
            if cfg.sigma <= 13 * rho + 4 * L:
                warnings.warn(f"sigma={cfg.sigma:g} <= 13*rho + 4*L = {13 * rho + 4 * L:g}; "
                              "iteration-complexity guarantee does not apply", stacklevel=2)
        if cfg.sampling_mode == "without_replacement" and cfg.algorithm in ("full_grad_svrc", "corrected_svrc"):
            for name in ("B", "S"):
                val = getattr(cfg, name)
                if val is not None and val > N:
                    setattr(cfg, name, N)
        if cfg.x0 is None:
            cfg.x0 = np.zeros(problem.d)
        else:
            cfg.x0 = np.asarray(cfg.x0, dtype=float).copy()
            if cfg.x0.shape != (problem.d,):
                raise ConfigError(f"x0 has shape {cfg.x0.shape}, expected ({problem.d},)")
        return cfg


CSV_HEADER = ("k", "t", "batch_g", "batch_h", "xi_norm", "F", "grad_norm",
              "lambda_min", "cum_bg", "cum_bh", "wall_ns")


@dataclass
class IterationRecord:
    """Telemetry for one inner step; F, grad_norm and lambda_min refer to x_{t+1}.

    ``drift`` is ||x_t - x_tilde|| before the step. It feeds the output scores
    of the fixed-batch variants and is not part of the CSV schema.
    """

    k: int
    t: int
    batch_g: int
    batch_h: int
    xi_norm: float
    F_value: float
    exact_grad_norm: float
    lambda_min: float
    cum_bg: int
    cum_bh: int
    wall_time_ns: int
    drift: float = 0.0

    def csv_row(self) -> list:
        return [self.k, self.t, self.batch_g, self.batch_h, repr(self.xi_norm), repr(self.F_value),
                repr(self.exact_grad_norm), "" if math.isnan(self.lambda_min) else repr(self.lambda_min),
                self.cum_bg, self.cum_bh, self.wall_time_ns]
