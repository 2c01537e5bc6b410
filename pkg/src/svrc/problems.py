"""Built-in finite-sum test objectives with known Lipschitz constants."""

from __future__ import annotations

import math
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import optimize, special

from .core import ProblemInstance, SVRCError


class DatasetFormatError(SVRCError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def max_abs_1d(func, lo: float = -10.0, hi: float = 10.0, points: int = 1_000_000) -> float:
    """max |func(z)| on [lo, hi]: dense grid, then golden-section refinement around the best point."""
    z = np.linspace(lo, hi, points)
    vals = np.abs(func(z))
    i = int(np.argmax(vals))
    if i == 0 or i == points - 1:
        return float(vals[i])
    res = optimize.minimize_scalar(lambda t: -abs(float(func(np.array(t)))),
                                   bracket=(z[i - 1], z[i], z[i + 1]), method="golden",
                                   options={"xtol": 1e-12})
    return max(float(vals[i]), -float(res.fun))


def ratio_third_derivative(z):
    """Third derivative of z^2 / (1 + z^2)."""
    return 24.0 * z * (z * z - 1.0) / (1.0 + z * z) ** 4


def logistic_third_derivative(u):
    """Third derivative of log(1 + exp(-u))."""
    s = special.expit(u)
    return s * (1 - s) * (1 - 2 * s)


@lru_cache(maxsize=None)
def ratio_c3() -> float:
    return max_abs_1d(ratio_third_derivative)


@lru_cache(maxsize=None)
def logistic_c3() -> float:
    return max_abs_1d(logistic_third_derivative)


def _row_norms(A):
    return np.linalg.norm(A, axis=1)


class TrigSum(ProblemInstance):
    """f_i(x) = cos(a_i.x + b_i)."""

    kind = "trig"

    def __init__(self, A, b=None):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        N, d = A.shape
        b = np.zeros(N) if b is None else np.asarray(b, dtype=float).ravel()
        if b.shape != (N,):
            raise ValueError("offsets must have one entry per row of A")
        norms = _row_norms(A)
        super().__init__(N, d, L=float(np.max(norms ** 2)), rho=float(np.max(norms ** 3)),
                         F_star_lower=-1.0)
        self.A = A
        self.b = b

    def _values(self, x, idx):
        return np.cos(self.A[idx] @ x + self.b[idx])

    def _grads(self, x, idx):
        a = self.A[idx]
        return -np.sin(a @ x + self.b[idx])[:, None] * a

    def _hessians(self, x, idx):
        a = self.A[idx]
        c = -np.cos(a @ x + self.b[idx])
        return c[:, None, None] * (a[:, :, None] * a[:, None, :])


class RobustRegression(ProblemInstance):
    """f_i(x) = phi(a_i.x - b_i) with the bounded loss phi(z) = z^2 / (1 + z^2)."""

    kind = "robust"

    def __init__(self, A, b):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        N, d = A.shape
        b = np.asarray(b, dtype=float).ravel()
        if b.shape != (N,):
            raise ValueError("targets must have one entry per row of A")
        norms = _row_norms(A)
        super().__init__(N, d, L=2.0 * float(np.max(norms ** 2)),
                         rho=ratio_c3() * float(np.max(norms ** 3)), F_star_lower=0.0)
        self.A = A
        self.b = b

    def _values(self, x, idx):
        z = self.A[idx] @ x - self.b[idx]
        return z * z / (1 + z * z)

    def _grads(self, x, idx):
        a = self.A[idx]
        z = a @ x - self.b[idx]
        return (2 * z / (1 + z * z) ** 2)[:, None] * a

    def _hessians(self, x, idx):
        a = self.A[idx]
        z = a @ x - self.b[idx]
        c = (2 - 6 * z * z) / (1 + z * z) ** 3
        return c[:, None, None] * (a[:, :, None] * a[:, None, :])


class NonconvexLogistic(ProblemInstance):
    """f_i(x) = log(1 + exp(-y_i a_i.x)) + lam * sum_j x_j^2 / (1 + x_j^2)."""

    kind = "logistic"

    def __init__(self, A, y, lam: float = 0.1):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        N, d = A.shape
        y = np.asarray(y, dtype=float).ravel()
        if y.shape != (N,):
            raise ValueError("labels must have one entry per row of A")
        if not np.all(np.isin(y, (-1.0, 1.0))):
            raise ValueError("labels must be +1 or -1")
        if lam < 0:
            raise ValueError("lam must be nonnegative")
        norms = _row_norms(A)
        amax = float(np.max(norms))
        L = amax ** 2 / 4 + 2 * lam
        rho = logistic_c3() * amax ** 3 + lam * ratio_c3()
        super().__init__(N, d, L=L, rho=rho, F_star_lower=0.0)
        self.A = A
        self.y = y
        self.lam = float(lam)

    def _reg_value(self, x):
        return self.lam * float(np.sum(x * x / (1 + x * x)))

    def _values(self, x, idx):
        margins = self.y[idx] * (self.A[idx] @ x)
        return np.logaddexp(0.0, -margins) + self._reg_value(x)

    def _grads(self, x, idx):
        a = self.A[idx]
        y = self.y[idx]
        s = special.expit(-y * (a @ x))
        reg = self.lam * 2 * x / (1 + x * x) ** 2
        return (-y * s)[:, None] * a + reg

    def _hessians(self, x, idx):
        a = self.A[idx]
        s = special.expit(self.y[idx] * (a @ x))
        w = s * (1 - s)
        reg = np.diag(self.lam * (2 - 6 * x * x) / (1 + x * x) ** 3)
        return w[:, None, None] * (a[:, :, None] * a[:, None, :]) + reg


PROBLEM_KINDS = ("trig", "robust", "logistic")


def _unit_rows(rng, N, d):
    A = rng.standard_normal((N, d))
    norms = _row_norms(A)
    norms[norms == 0] = 1.0
    return A / norms[:, None]


def generate(kind: str, N: int, d: int, seed: int = 0, **params) -> ProblemInstance:
    """Seeded random instance with unit-norm Gaussian rows.

    trig: offsets uniform on [-offset, offset] (``offset``, default 0.5).
    robust: targets a_i.w + 0.1 noise with a fraction ``outliers`` (default
    0.1) replaced by +-5.
    logistic: labels sign(a_i.w) with a fraction ``flip`` (default 0.1) flipped;
    regulariser weight ``lam`` (default 0.1).
    """
    if N < 1 or d < 1:
        raise ValueError("need N, d >= 1")
    rng = np.random.default_rng(seed)
    A = _unit_rows(rng, N, d)
    if kind == "trig":
        offset = params.get("offset", 0.5)
        return TrigSum(A, rng.uniform(-offset, offset, size=N))
    w = rng.standard_normal(d)
    if kind == "robust":
        b = A @ w + 0.1 * rng.standard_normal(N)
        bad = rng.random(N) < params.get("outliers", 0.1)
        b[bad] = rng.choice((-5.0, 5.0), size=int(bad.sum()))
        return RobustRegression(A, b)
    if kind == "logistic":
        y = np.where(A @ w >= 0, 1.0, -1.0)
        flip = rng.random(N) < params.get("flip", 0.1)
        y[flip] *= -1
        return NonconvexLogistic(A, y, params.get("lam", 0.1))
    raise ValueError(f"unknown problem kind {kind!r}; choose from {PROBLEM_KINDS}")


def load_dataset(path, lam: float = 0.1) -> NonconvexLogistic:
    """Read ``label f_1 ... f_d`` rows (whitespace separated) into a logistic instance.

    Blank lines and lines starting with ``#`` are skipped. If any row is
    longer than 1 all rows are divided by the largest row norm.
    """
    labels, rows = [], []
    d = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.split()
            try:
                vals = [float(p) for p in parts]
            except ValueError as exc:
                raise DatasetFormatError(f"cannot parse number ({exc})", lineno) from None
            if len(vals) < 2:
                raise DatasetFormatError("need a label and at least one feature", lineno)
            if vals[0] not in (1.0, -1.0):
                raise DatasetFormatError(f"label must be 1 or -1, got {parts[0]}", lineno)
            if not all(math.isfinite(v) for v in vals):
                raise DatasetFormatError("non-finite value", lineno)
            if d is None:
                d = len(vals) - 1
            elif len(vals) - 1 != d:
                raise DatasetFormatError(f"expected {d} features, got {len(vals) - 1}", lineno)
            labels.append(vals[0])
            rows.append(vals[1:])
    if not rows:
        raise DatasetFormatError(f"no data rows in {path}")
    A = np.array(rows)
    biggest = float(np.max(_row_norms(A)))
    if biggest > 1.0:
        A = A / biggest
    return NonconvexLogistic(A, np.array(labels), lam)


def save_dataset(problem: NonconvexLogistic, path) -> None:
    """Write a logistic instance in the format read by :func:`load_dataset`."""
    lines = []
    for label, row in zip(problem.y, problem.A):
        lines.append(" ".join([str(int(label))] + [repr(float(v)) for v in row]))
    Path(path).write_text("\n".join(lines) + "\n")
