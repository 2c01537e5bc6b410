"""Exact global minimisation of the cubic-regularised model

    m(xi) = g.xi + 1/2 xi.H.xi + (sigma/6) ||xi||^3

through an eigendecomposition of H and a scalar secular equation in ||xi||.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import SVRCError

HARD_CASE_TOL = 1e-12
_EPS = np.finfo(float).eps


class LinearAlgebraError(SVRCError):
    pass


class SolverStall(SVRCError):
    def __init__(self, message: str, phi_values=()):
        self.phi_values = tuple(phi_values)
        super().__init__(message)


@dataclass
class CubicModel:
    g: np.ndarray
    H: np.ndarray
    sigma: float

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=float).ravel()
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        d = self.g.size
        if self.H.shape != (d, d):
            raise ValueError(f"H has shape {self.H.shape}, expected ({d}, {d})")
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ValueError("sigma must be positive and finite")
        if not (np.all(np.isfinite(self.g)) and np.all(np.isfinite(self.H))):
            raise ValueError("model data must be finite")
        hnorm = np.linalg.norm(self.H)
        if np.linalg.norm(self.H - self.H.T) > 1e-12 * (1 + hnorm):
            raise ValueError("H must be symmetric")

    def value(self, xi) -> float:
        xi = np.asarray(xi, dtype=float)
        return float(self.g @ xi + 0.5 * xi @ self.H @ xi + self.sigma / 6 * np.linalg.norm(xi) ** 3)


@dataclass
class StepResult:
    xi: np.ndarray
    r: float
    stationarity_residual: float
    curvature_margin: float
    hard_case: bool
    certified: bool = True


class Certificate(NamedTuple):
    ok: bool
    stationarity_residual: float
    curvature_margin: float


def lambda_min(H) -> float:
    """Smallest eigenvalue of a symmetric matrix."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    try:
        return float(np.linalg.eigvalsh(H)[0])
    except np.linalg.LinAlgError as exc:
        raise LinearAlgebraError(str(exc)) from exc


def _residuals(model: CubicModel, xi: np.ndarray, lmin: float) -> tuple[float, float]:
    r = float(np.linalg.norm(xi))
    stat = float(np.linalg.norm(model.g + model.H @ xi + 0.5 * model.sigma * r * xi))
    return stat, lmin + 0.5 * model.sigma * r


def _stat_bound(model: CubicModel, r: float, tol_stat: float) -> float:
    return tol_stat * (np.linalg.norm(model.g) + model.sigma * max(1.0, r * r))


def certify(model: CubicModel, xi, tol_stat: float = 1e-8, tol_psd: float = 1e-8) -> Certificate:
    """Check first- and second-order global optimality conditions of a candidate step.

    Both residuals are recomputed from the model, independent of how ``xi``
    was produced.
    """
    xi = np.asarray(xi, dtype=float)
    stat, margin = _residuals(model, xi, lambda_min(model.H))
    ok = stat <= _stat_bound(model, float(np.linalg.norm(xi)), tol_stat) and margin >= -tol_psd
    return Certificate(bool(ok), stat, margin)


def _solve_shift(shifted: np.ndarray, gp2: np.ndarray, lmin: float, sigma: float,
                 lo: float) -> float:
    """Root u of ||g'/(shifted + u)|| = 2(u - lmin)/sigma on (lo, inf).

    ``shifted`` holds eigenvalues minus lmin, so u is the smallest denominator.
    The left side minus the right side is convex and decreasing in u.
    """

    def phi(u):
        den = shifted + u
        with np.errstate(divide="ignore", invalid="ignore"):
            w2 = np.where(gp2 > 0, gp2 / den ** 2, 0.0)
            nw = math.sqrt(w2.sum())
            dnw = -float(np.where(gp2 > 0, w2 / den, 0.0).sum()) / nw if nw > 0 else 0.0
        return nw - 2.0 * (u - lmin) / sigma, dnw - 2.0 / sigma

    gnorm = math.sqrt(gp2.sum())
    # At this u, ||w|| <= ||g||/u <= r(u), so phi <= 0 (up to rounding).
    hi = 0.5 * (lmin + math.sqrt(lmin * lmin + 2.0 * sigma * gnorm))
    hi = max(hi, lo) * (1 + 1e-12) + 1e-300
    seen = []
    for _ in range(200):
        val, _ = phi(hi)
        seen.append(val)
        if val <= 0:
            break
        hi = 2.0 * hi if hi > 0 else 1.0
    else:
        raise SolverStall("secular equation not bracketed after 200 doublings", seen)

    u = hi
    for _ in range(200):
        val, dval = phi(u)
        if val > 0:
            lo = u
        else:
            hi = u
        if val == 0:
            return u
        step = val / dval if dval != 0 else math.nan
        cand = u - step
        if not (lo < cand < hi) or not math.isfinite(cand):
            cand = math.sqrt(lo * hi) if lo > 0 else 0.5 * (lo + hi)
        if abs(cand - u) <= 4 * _EPS * abs(u) or hi - lo <= 4 * _EPS * hi:
            return cand
        u = cand
    return u


def solve_cubic(model: CubicModel, tol_stat: float = 1e-8, tol_psd: float = 1e-8) -> StepResult:
    """Global minimiser of the cubic model.

    With H = Q diag(lam) Q^T and g' = Q^T g the minimiser is
    xi = -Q (diag(lam) + (sigma/2) r I)^{-1} g' where r = ||xi|| solves the
    secular equation on r > max(0, -2 lam_min / sigma). In the hard case (g'
    vanishes on the bottom eigenspace of an indefinite H and the remaining
    components are too short) r sits at the left end of that interval and a
    bottom eigenvector fills the rest of the norm.
    """
    if not (0 < tol_stat < 1 and 0 < tol_psd < 1):
        raise ValueError("tolerances must lie in (0, 1)")
    try:
        lam, Q = np.linalg.eigh(model.H)
    except np.linalg.LinAlgError as exc:
        raise LinearAlgebraError(str(exc)) from exc
    if not np.all(np.isfinite(lam)):
        raise LinearAlgebraError("eigendecomposition returned non-finite values")
    sigma = model.sigma
    lmin = float(lam[0])
    gnorm = float(np.linalg.norm(model.g))
    gp = Q.T @ model.g
    shifted = lam - lmin
    scale = max(1.0, float(np.max(np.abs(lam))))
    bottom = shifted <= HARD_CASE_TOL * scale
    hard = False

    if gnorm == 0.0 and lmin >= 0:
        xi = np.zeros_like(model.g)
    else:
        # g' components below the threshold on the bottom eigenspace count as zero.
        bottom_flat = bool(np.all(np.abs(gp[bottom]) <= HARD_CASE_TOL * gnorm))
        w_rest = None
        if lmin < 0 and bottom_flat:
            r_low = -2.0 * lmin / sigma
            gp_rest = np.where(bottom, 0.0, gp)
            w_rest = np.where(bottom, 0.0, gp_rest / np.where(bottom, 1.0, shifted))
            if np.linalg.norm(w_rest) <= r_low:
                hard = True
        if hard:
            tau = math.sqrt(max(r_low ** 2 - float(w_rest @ w_rest), 0.0))
            v = Q[:, 0]
            base = -(Q @ w_rest)
            sign = -1.0 if model.g @ v > 0 else 1.0
            xi = base + sign * tau * v
        else:
            gp2 = gp * gp
            lo = max(0.0, lmin)
            u = _solve_shift(shifted, gp2, lmin, sigma, lo)
            with np.errstate(divide="ignore", invalid="ignore"):
                w = np.where(gp2 > 0, gp / (shifted + u), 0.0)
            xi = -(Q @ w)

    stat, margin = _residuals(model, xi, lmin)
    r = float(np.linalg.norm(xi))
    ok = stat <= _stat_bound(model, r, tol_stat) and margin >= -tol_psd
    return StepResult(xi=xi, r=r, stationarity_residual=stat, curvature_margin=margin,
                      hard_case=hard, certified=bool(ok))
