"""Index samplers and moment formulas for averages of sampled matrices."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import SVRCError

PURPOSE_GRADIENT = 0
PURPOSE_HESSIAN = 1
PURPOSE_OUTPUT = 2


class BatchTooLarge(SVRCError, ValueError):
    pass


class CenteringError(SVRCError, ValueError):
    pass


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for one (stage, step, purpose) tuple of a run.

    Streams are derived from the run seed by key, so drawing from one never
    shifts another.
    """
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


@dataclass
class IndexSampler:
    mode: str
    rng: np.random.Generator

    def __post_init__(self):
        if self.mode not in ("with_replacement", "without_replacement"):
            raise ValueError(f"unknown sampling mode {self.mode!r}")

    def draw(self, N: int, n: int) -> np.ndarray:
        """Sorted 0-based index batch of size n from {0..N-1}."""
        if n < 0:
            raise ValueError("batch size must be nonnegative")
        if n == 0:
            return np.empty(0, dtype=np.int64)
        if self.mode == "with_replacement":
            idx = self.rng.integers(0, N, size=n)
        else:
            if n > N:
                raise BatchTooLarge(f"cannot draw {n} distinct indices from {N}")
            idx = self.rng.choice(N, size=n, replace=False)
        return np.sort(idx.astype(np.int64))


def draw(sampler: IndexSampler, N: int, n: int) -> np.ndarray:
    return sampler.draw(N, n)


@dataclass
class MomentReport:
    """Exact moments of ||mean of n draws||_F for a finite population.

    ``second_moment``/``fourth_moment`` come from enumerating every n-subset
    (NaN when that is too many); ``formula_*`` from the closed forms.
    """

    second_moment: float
    fourth_moment: float
    formula_second: float
    formula_fourth: float
    r1: float
    r2: float
    r3: float
    e_sq: float
    e_quartic: float
    e_inner_sq: float
    e_sq_sq: float


def _falling_ratio(n: int, N: int, start: int, count: int) -> float:
    """prod_{j} (n - j) / (N - j) for j = start .. start+count-1.

    A zero numerator means the corresponding index tuples do not exist and
    the term is dropped, which keeps the formulas exact when N < 4.
    """
    num = den = 1.0
    for j in range(start, start + count):
        num *= n - j
        den *= N - j
    if num == 0:
        return 0.0
    return num / den


def _population_terms(X: np.ndarray):
    N = X.shape[0]
    flat = X.reshape(N, -1)
    sq = np.einsum("ij,ij->i", flat, flat)
    gram = flat @ flat.T
    e_sq = float(sq.mean())
    e_quartic = float((sq ** 2).mean())
    if N > 1:
        off = ~np.eye(N, dtype=bool)
        e_inner_sq = float((gram[off] ** 2).mean())
        e_sq_sq = float(np.outer(sq, sq)[off].mean())
    else:
        e_inner_sq = e_sq_sq = 0.0
    return flat, sq, gram, e_sq, e_quartic, e_inner_sq, e_sq_sq


def without_replacement_coefficients(n: int, N: int) -> tuple[float, float, float]:
    r1 = n * (1 - 4 * _falling_ratio(n, N, 1, 1) + 6 * _falling_ratio(n, N, 1, 2)
              - 3 * _falling_ratio(n, N, 1, 3))
    if n < 2:
        return r1, 0.0, 0.0
    r2 = n * (n - 1) * (2 - 4 * _falling_ratio(n, N, 2, 1) + 2 * _falling_ratio(n, N, 2, 2))
    r3 = n * (n - 1) * (1 - 2 * _falling_ratio(n, N, 2, 1) + _falling_ratio(n, N, 2, 2))
    return r1, r2, r3


def without_replacement_moments(X, n: int, enumerate_limit: int = 200_000) -> MomentReport:
    """Second and fourth moments of the mean of n draws without replacement.

    X holds N matrices (or vectors/scalars) with zero population mean. The
    elementary expectations E||Z1||^2, E||Z1||^4, E<Z1,Z2>^2 and
    E||Z1||^2||Z2||^2 are exact averages over the population and its ordered
    pairs of distinct members.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    N = X.shape[0]
    if not 1 <= n <= N:
        raise BatchTooLarge(f"need 1 <= n <= N, got n={n}, N={N}")
    flat, sq, gram, e_sq, e_quartic, e_inner_sq, e_sq_sq = _population_terms(X)
    mean = flat.mean(axis=0)
    if np.linalg.norm(mean) > 1e-12 * max(1.0, math.sqrt(e_sq)):
        raise CenteringError(f"population mean has norm {np.linalg.norm(mean):.3e}")

    second = (1.0 / n) * (1 - _falling_ratio(n, N, 1, 1)) * e_sq
    r1, r2, r3 = without_replacement_coefficients(n, N)
    fourth = (r1 * e_quartic + r2 * e_inner_sq + r3 * e_sq_sq) / n ** 4

    enum2 = enum4 = math.nan
    if math.comb(N, n) <= enumerate_limit:
        s2 = s4 = 0.0
        count = 0
        for subset in itertools.combinations(range(N), n):
            m = flat[list(subset)].sum(axis=0) / n
            q = float(m @ m)
            s2 += q
            s4 += q * q
            count += 1
        enum2, enum4 = s2 / count, s4 / count
    return MomentReport(enum2, enum4, second, fourth, r1, r2, r3,
                        e_sq, e_quartic, e_inner_sq, e_sq_sq)


def with_replacement_moments(X, n: int) -> tuple[float, float]:
    """Exact (second, fourth) moments of the mean of n i.i.d. uniform draws from X."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    flat = X.reshape(X.shape[0], -1)
    sq = np.einsum("ij,ij->i", flat, flat)
    if np.linalg.norm(flat.mean(axis=0)) > 1e-12 * max(1.0, math.sqrt(float(sq.mean()))):
        raise CenteringError("population mean must be zero")
    gram = flat @ flat.T
    e_sq = float(sq.mean())
    e_quartic = float((sq ** 2).mean())
    # independent pair: average over all ordered pairs including i == j
    e_inner_sq = float((gram ** 2).mean())
    second = e_sq / n
    fourth = (n * e_quartic + 2 * n * (n - 1) * e_inner_sq + n * (n - 1) * e_sq ** 2) / n ** 4
    return second, fourth


@dataclass
class MomentEstimate:
    value: float
    stderr: float
    trials: int


def empirical_moment(sample_fn: Callable[[np.random.Generator, int], np.ndarray], p: int,
                     trials: int, rng: np.random.Generator | int = 0,
                     chunk: int = 20_000) -> MomentEstimate:
    """Monte-Carlo estimate of E||M||_F^p with its standard error.

    ``sample_fn(rng, size)`` returns ``size`` independent realisations of the
    random mean M, stacked along the first axis.
    """
    if p not in (2, 4):
        raise ValueError("p must be 2 or 4")
    if trials < 10_000:
        raise ValueError("need at least 10^4 trials")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    vals = []
    done = 0
    while done < trials:
        size = min(chunk, trials - done)
        draws = np.asarray(sample_fn(rng, size), dtype=float).reshape(size, -1)
        vals.append(np.einsum("ij,ij->i", draws, draws) ** (p // 2))
        done += size
    v = np.concatenate(vals)
    return MomentEstimate(float(v.mean()), float(v.std(ddof=1) / math.sqrt(trials)), trials)


def iid_mean_sampler(draw_one: Callable[[np.random.Generator, tuple], np.ndarray], n: int):
    """Wrap a per-draw sampler into ``sample_fn`` for the mean of n i.i.d. draws.

    ``draw_one(rng, shape)`` must return an array of shape ``shape + event_shape``.
    """
    def sample_fn(rng, size):
        return draw_one(rng, (size, n)).mean(axis=1)
    return sample_fn
