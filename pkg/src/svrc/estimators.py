"""Snapshot-anchored (variance-reduced) gradient and Hessian estimators and
the adaptive batch-size rules that drive them."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (EmptyBatch, ProblemInstance, SampleLedger, _mean_over, full_gradient,
                   full_hessian)

SQRT33 = math.sqrt(33.0)


@dataclass
class EpochSnapshot:
    """Anchor point of a stage with its full gradient and/or Hessian."""

    x_tilde: np.ndarray
    g_tilde: np.ndarray | None
    H_tilde: np.ndarray | None
    k: int = 1


def take_snapshot(problem: ProblemInstance, x_tilde, ledger: SampleLedger | None, k: int = 1,
                  gradient: bool = True, hessian: bool = True) -> EpochSnapshot:
    x_tilde = np.array(x_tilde, dtype=float)
    g = full_gradient(problem, x_tilde, ledger) if gradient else None
    H = full_hessian(problem, x_tilde, ledger) if hessian else None
    return EpochSnapshot(x_tilde, g, H, k)


@dataclass
class BatchSizeRule:
    epsilon: float
    mode: str
    cap: int

    def thresholds(self, xi_prev_norm: float) -> tuple[float, float]:
        return epsilon_thresholds(xi_prev_norm, self.epsilon)

    def sizes(self, drift: float, eps_g: float, eps_H: float) -> tuple[int, int]:
        return batch_sizes(self, drift, eps_g, eps_H)


def epsilon_thresholds(xi_prev_norm: float, epsilon: float) -> tuple[float, float]:
    """(eps_g, eps_H) = (max(|xi|^4, eps^2), max(|xi|^2, eps)) for the previous step xi."""
    if xi_prev_norm < 0:
        raise ValueError("step norm must be nonnegative")
    return max(xi_prev_norm ** 4, epsilon ** 2), max(xi_prev_norm ** 2, epsilon)


def _clamp(value: float, cap: int) -> int:
    if value >= cap:
        return cap
    return max(0, math.ceil(value))


def batch_sizes(rule: BatchSizeRule, drift: float, eps_g: float, eps_H: float) -> tuple[int, int]:
    """Gradient and Hessian batch sizes (|S|, |B|) for the current drift ||x - x_tilde||.

    Sizes are rounded up and clamped to [0, N]; a size equal to N tells the
    caller to evaluate exactly instead of sampling.
    """
    if drift < 0:
        raise ValueError("drift must be nonnegative")
    if eps_g <= 0 or eps_H <= 0:
        raise ValueError("thresholds must be positive")
    if drift == 0:
        return 0, 0
    d2 = drift * drift
    if rule.mode == "with_replacement":
        return _clamp(d2 / eps_g, rule.cap), _clamp(d2 / eps_H, rule.cap)
    if rule.mode == "without_replacement":
        # 1 / (1/N + e/d2) written as N d2 / (d2 + N e), which stays finite when d2 underflows
        N = rule.cap
        s = N * d2 / (d2 + N * eps_g)
        b = N * SQRT33 * d2 / (SQRT33 * d2 + N * eps_H)
        return _clamp(s, N), _clamp(b, N)
    raise ValueError(f"unknown sampling mode {rule.mode!r}")


def svr_gradient(problem: ProblemInstance, snapshot: EpochSnapshot, x, indices,
                 ledger: SampleLedger | None = None, pair_cost: int = 2) -> np.ndarray:
    """g_tilde + mean over the batch of grad_i(x) - grad_i(x_tilde).

    An empty batch returns the snapshot gradient. Each sampled index is
    charged ``pair_cost`` gradient evaluations (2: both points; 1: the
    once-per-index accounting).
    """
    idx = np.sort(np.asarray(indices, dtype=np.int64).ravel())
    if idx.size == 0:
        return snapshot.g_tilde.copy()
    x = np.asarray(x, dtype=float)
    xt = snapshot.x_tilde

    def diff(_, chunk):
        return problem._grads(x, chunk) - problem._grads(xt, chunk)

    out = _mean_over(diff, x, idx, "gradient") + snapshot.g_tilde
    if ledger is not None:
        ledger.charge_gradients(pair_cost * idx.size)
    return out


def svr_hessian(problem: ProblemInstance, snapshot: EpochSnapshot, x, indices,
                ledger: SampleLedger | None = None, pair_cost: int = 2) -> np.ndarray:
    """H_tilde + mean over the batch of hess_i(x) - hess_i(x_tilde)."""
    idx = np.sort(np.asarray(indices, dtype=np.int64).ravel())
    if idx.size == 0:
        return snapshot.H_tilde.copy()
    x = np.asarray(x, dtype=float)
    xt = snapshot.x_tilde

    def diff(_, chunk):
        return problem._hessians(x, chunk) - problem._hessians(xt, chunk)

    out = _mean_over(diff, x, idx, "Hessian") + snapshot.H_tilde
    if ledger is not None:
        ledger.charge_hessians(pair_cost * idx.size)
    return 0.5 * (out + out.T)


def corrected_svr_gradient(problem: ProblemInstance, snapshot: EpochSnapshot, x, indices,
                           ledger: SampleLedger | None = None, pair_cost: int = 2) -> np.ndarray:
    """Snapshot gradient estimator with a second-order correction.

    Equals mean_j [grad_j(x) - grad_j(x_tilde) + g_tilde]
    + mean_j [(H_tilde - hess_j(x_tilde)) (x - x_tilde)]. Besides the gradient
    pairs, each index is charged one Hessian evaluation at x_tilde.
    """
    x = np.asarray(x, dtype=float)
    xt = snapshot.x_tilde
    idx = np.sort(np.asarray(indices, dtype=np.int64).ravel())
    step = x - xt
    if idx.size == 0:
        if np.any(step != 0):
            raise EmptyBatch("corrected estimator needs a nonempty batch away from the anchor")
        return snapshot.g_tilde.copy()

    def diff(_, chunk):
        return (problem._grads(x, chunk) - problem._grads(xt, chunk)
                - problem._hessians(xt, chunk) @ step)

    out = _mean_over(diff, x, idx, "gradient") + snapshot.g_tilde + snapshot.H_tilde @ step
    if ledger is not None:
        ledger.charge_gradients(pair_cost * idx.size)
        ledger.charge_hessians(idx.size)
    return out
