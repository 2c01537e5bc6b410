import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from svrc.cubic import CubicModel, certify, lambda_min, solve_cubic


def random_model(rng, d, cond=1e3, indefinite=True, sigma=None):
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    mags = np.logspace(0, math.log10(cond), d) / cond
    signs = rng.choice([-1.0, 1.0], size=d) if indefinite else np.ones(d)
    H = (Q * (signs * mags)) @ Q.T
    H = 0.5 * (H + H.T)
    return CubicModel(rng.standard_normal(d), H, sigma if sigma else float(rng.uniform(0.1, 10)))


def hard_case_model(rng, d):
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    lam = np.sort(rng.uniform(0.5, 3.0, size=d))
    lam[0] = -1.0
    gp = rng.standard_normal(d) * 0.05
    gp[0] = 0.0
    H = (Q * lam) @ Q.T
    return CubicModel(Q @ gp, 0.5 * (H + H.T), 2.0)


def test_zero_gradient_psd():
    res = solve_cubic(CubicModel(np.zeros(3), np.diag([1.0, 2.0, 0.0]), 1.0))
    assert np.all(res.xi == 0)


def test_one_dimensional_closed_form():
    res = solve_cubic(CubicModel([1.0], [[0.0]], 6.0))
    assert res.xi[0] == pytest.approx(-1 / math.sqrt(3), rel=1e-12)
    assert res.certified


def test_hard_case_example():
    model = CubicModel([0.0], [[-1.0]], 2.0)
    res = solve_cubic(model)
    assert res.hard_case
    assert res.r == pytest.approx(1.0, rel=1e-12)
    assert model.value(res.xi) == pytest.approx(-1 / 6, rel=1e-12)
    grid = np.linspace(-3, 3, 60001)
    grid_min = min(model.value(np.array([z])) for z in grid[::10])
    assert model.value(res.xi) <= grid_min + 1e-12


def test_hard_case_sign_rule():
    # g orthogonal to the bottom eigenvector; exact tie so the + sign is taken
    res = solve_cubic(CubicModel([0.0, 0.0], np.diag([-2.0, 1.0]), 1.0))
    assert res.hard_case and res.xi[0] > 0


def test_random_probe_global_minimality():
    rng = np.random.default_rng(0)
    for _ in range(10):
        model = random_model(rng, 5)
        res = solve_cubic(model)
        best = model.value(res.xi)
        probes = rng.standard_normal((10_000, 5)) * rng.uniform(0.01, 3 * max(res.r, 1), size=(10_000, 1))
        vals = (probes @ model.g + 0.5 * np.einsum("ij,jk,ik->i", probes, model.H, probes)
                + model.sigma / 6 * np.linalg.norm(probes, axis=1) ** 3)
        assert best <= vals.min() + 1e-12
        assert best <= model.value(-res.xi) + 1e-12


def test_hard_case_minimality_against_probes():
    rng = np.random.default_rng(1)
    model = hard_case_model(rng, 4)
    res = solve_cubic(model)
    assert res.hard_case and res.certified
    probes = rng.standard_normal((10_000, 4)) * 1.5
    vals = [model.value(p) for p in probes]
    assert model.value(res.xi) <= min(vals) + 1e-12


def test_certify_examples():
    bad = certify(CubicModel(np.zeros(2), np.eye(2), 1.0), np.array([1.0, 0.0]))
    assert not bad.ok
    assert bad.stationarity_residual == pytest.approx(1.5)
    good = certify(CubicModel([1.0], [[0.0]], 6.0), np.array([-1 / math.sqrt(3)]))
    assert good.ok
    model = random_model(np.random.default_rng(3), 6)
    assert certify(model, solve_cubic(model).xi).ok


def char_poly_smallest_root(H, tol=1e-10):
    """Independent oracle: bisection on det(H - lam I) below the Gershgorin lower bound."""
    radius = np.sum(np.abs(H), axis=1) - np.abs(np.diag(H))
    lo = float(np.min(np.diag(H) - radius)) - 1.0
    # Sylvester: the number of eigenvalues below lam equals the number of negative
    # pivots of H - lam I (LDL^T inertia), so count and bisect on it.
    def count_below(lam):
        A = H - lam * np.eye(len(H))
        n = len(A)
        count = 0
        A = A.copy()
        for i in range(n):
            piv = A[i, i]
            if piv == 0:
                piv = 1e-300
            if piv < 0:
                count += 1
            A[i + 1:, i + 1:] -= np.outer(A[i + 1:, i], A[i, i + 1:]) / piv
        return count

    hi = float(np.max(np.diag(H) + radius)) + 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if count_below(mid) >= 1:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def test_lambda_min_examples():
    assert lambda_min(np.eye(3)) == pytest.approx(1.0)
    assert lambda_min(np.diag([3.0, -2.0, 5.0])) == pytest.approx(-2.0)
    rng = np.random.default_rng(4)
    M = rng.standard_normal((6, 6))
    H = 0.5 * (M + M.T)
    assert lambda_min(H) == pytest.approx(char_poly_smallest_root(H), abs=1e-9)


def test_invalid_model_rejected():
    with pytest.raises(ValueError):
        CubicModel([1.0, 2.0], [[1.0, 2.0], [0.0, 1.0]], 1.0)
    with pytest.raises(ValueError):
        CubicModel([1.0], [[1.0]], 0.0)
    with pytest.raises(ValueError):
        CubicModel([np.nan], [[1.0]], 1.0)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), c=st.floats(0.01, 100.0), d=st.integers(1, 8))
def test_scale_covariance(seed, c, d):
    model = random_model(np.random.default_rng(seed), d)
    a = solve_cubic(model).xi
    b = solve_cubic(CubicModel(c * model.g, c * model.H, c * model.sigma)).xi
    np.testing.assert_allclose(a, b, rtol=1e-7, atol=1e-9 * (1 + np.linalg.norm(a)))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), s1=st.floats(0.01, 50.0), s2=st.floats(0.01, 50.0))
def test_step_norm_monotone_in_sigma(seed, s1, s2):
    rng = np.random.default_rng(seed)
    model = random_model(rng, 5)
    lo, hi = sorted((s1, s2))
    r_lo = solve_cubic(CubicModel(model.g, model.H, lo)).r
    r_hi = solve_cubic(CubicModel(model.g, model.H, hi)).r
    assert r_lo >= r_hi * (1 - 1e-10)
