import dataclasses
import math
import warnings

import numpy as np
import pytest

from svrc.algorithms import (InvalidSchedule, RunAborted, cube_split_bound, lyapunov_schedule, run,
                             run_adaptive_svrc, run_corrected_svrc, run_full_cr, run_full_grad_svrc,
                             select_output)
from svrc.core import ComponentProblem, RunConfig
from svrc.cubic import CubicModel, lambda_min, solve_cubic
from svrc.problems import TrigSum, generate


def quiet(fn, *args, **kwargs):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return fn(*args, **kwargs)


def trajectory(result):
    return np.array(result.points)


# -- Lyapunov schedule -----------------------------------------------------

def test_single_step_schedule():
    s = lyapunov_schedule("full_grad", 1, 16, None, rho=2.0, sigma=10.0, theta1=1.0, theta2=1.0)
    assert s.c[1] == 0.0
    assert s.c[0] == pytest.approx(3 * 2.0 / 16 ** 1.5)
    assert s.gamma == pytest.approx(10 / 4 - 1.0)


def test_recursion_is_exact():
    s = lyapunov_schedule("corrected", 4, 50, 2500, rho=1.0, sigma=8.0, theta1=1.2, theta2=1.5)
    growth = 1 + 2 / 1.2 ** 3 + 1.5 ** -6
    add = 3 / 50 ** 1.5 + math.sqrt(2) / (3 * 2500 ** 0.75)
    for t in range(4):
        assert s.c[t] == pytest.approx(s.c[t + 1] * growth + add, rel=1e-15)
    weight = 1 + 1.2 ** 6 + 2 * 1.5 ** 3
    assert s.gamma == pytest.approx(min(8 / 4 - 5 / 6 - s.c[t + 1] * weight for t in range(4)))


def test_full_gradient_parameter_regime():
    N, rho, alpha = 729, 1.0, 8.0
    s = lyapunov_schedule("full_grad", round(N ** (1 / 3) / 3), alpha * N ** (2 / 3), None, rho,
                          3 * rho, N ** (1 / 9), N ** (1 / 18))
    assert s.c[0] <= math.e * rho / (alpha ** 1.5 * N ** (2 / 3))
    assert s.gamma >= (1 - 6 * math.e * alpha ** -1.5) * rho / 3


def test_corrected_parameter_regime():
    N, alpha = 3125, 12.0
    B = alpha * N ** 0.4
    m = math.ceil(N ** 0.2 / 3)
    assert m == 2
    s = lyapunov_schedule("corrected", m, B, B * B, 1.0, 4.0, N ** (1 / 15), N ** (1 / 30))
    assert s.gamma > 0


def test_corrected_regime_fails_with_five_inner_steps():
    N, B = 3125, 12 * 3125 ** 0.4
    with pytest.raises(InvalidSchedule):
        lyapunov_schedule("corrected", 5, B, B * B, 1.0, 4.0, N ** (1 / 15), N ** (1 / 30))


def test_cube_split_bound_grid():
    rng = np.random.default_rng(0)
    a, b, t1, t2 = rng.uniform(1e-6, 10, size=(4, 10_000))
    assert np.all((a + b) ** 3 <= cube_split_bound(a, b, t1, t2) * (1 + 1e-12))


# -- output selection ------------------------------------------------------

def test_argmin_tie_break_and_scale_invariance():
    scores = np.array([3.0, 1.0, 2.0, 1.0])
    assert select_output(scores, "argmin") == 1
    for c in (1e-6, 0.5, 7.0, 1e8):
        assert select_output(c * scores, "argmin") == 1


def test_uniform_option_reproducible():
    cfg = RunConfig(sigma=18.0, epsilon=0.2, seed=5, output_option="uniform_random")
    p = generate("trig", 40, 3)
    a, b = quiet(run, p, cfg), quiet(run, p, cfg)
    assert a.selected == b.selected
    np.testing.assert_array_equal(a.x_out, b.x_out)


# -- relations between methods ---------------------------------------------

def test_single_component_adaptive_matches_full_cr():
    p = TrigSum(np.array([[0.8, -0.6]]), np.array([0.3]))
    cfg = RunConfig(sigma=18.0, epsilon=0.05, m=3, K=5, x0=np.array([0.4, 0.1]))
    a = quiet(run_adaptive_svrc, p, cfg)
    b = quiet(run_full_cr, p, cfg)
    np.testing.assert_array_equal(trajectory(a), trajectory(b))
    assert a.selected == b.selected


def test_full_batch_variants_match_full_cr():
    p = generate("robust", 30, 3, seed=1)
    base = RunConfig(sigma=20.0, epsilon=0.1, m=3, K=4, x0=np.array([1.0, -1.0, 0.5]))
    cr = quiet(run_full_cr, p, base)
    fg = quiet(run_full_grad_svrc, p, dataclasses.replace(base, B=30))
    co = quiet(run_corrected_svrc, p, dataclasses.replace(base, B=30, S=30))
    np.testing.assert_array_equal(trajectory(fg), trajectory(cr))
    np.testing.assert_array_equal(trajectory(co), trajectory(cr))


def test_first_score_of_fixed_batch_variant_is_step_cube():
    p = generate("trig", 100, 3)
    res = quiet(run_full_grad_svrc, p, RunConfig(sigma=3.0, epsilon=0.2, m=3, K=2, B=20))
    assert res.history[0].drift == 0.0
    assert res.scores[0] == res.history[0].xi_norm ** 3


def test_one_dimensional_cosine_first_step():
    p = TrigSum(np.ones((1, 1)))
    x0 = math.pi / 4
    res = run_full_cr(p, RunConfig(sigma=2.0, epsilon=0.1, m=1, K=1, x0=np.array([x0])))
    expected = solve_cubic(CubicModel([-math.sin(x0)], [[-math.cos(x0)]], 2.0)).xi
    np.testing.assert_allclose(res.points[0] - x0, expected, rtol=1e-14)
    assert res.history[0].F_value < math.cos(x0)


# -- deterministic behaviour -----------------------------------------------

@pytest.mark.parametrize("kind", ["trig", "robust", "logistic"])
def test_exact_oracle_descent(kind):
    p = generate(kind, 40, 4, seed=2)
    sigma = 13 * p.rho + 4 * p.L + 1
    x0 = np.full(4, 0.7)
    for algo_cfg in (dict(algorithm="full_cr"), dict(algorithm="adaptive_svrc", exact_oracles=True)):
        res = run(p, RunConfig(sigma=sigma, epsilon=0.1, m=3, K=10, x0=x0, **algo_cfg))
        F_prev = p.value(x0)
        for rec in res.history:
            assert rec.F_value <= F_prev - (sigma / 4 - p.rho / 6) * rec.xi_norm ** 3 + 1e-10
            F_prev = rec.F_value


def test_full_cr_convex_monotone():
    p = generate("logistic", 50, 3, seed=0, lam=0.0)
    res = run_full_cr(p, RunConfig(sigma=2.0, epsilon=0.1, m=5, K=4, x0=np.ones(3)))
    F = [p.value(np.ones(3))] + [r.F_value for r in res.history]
    assert all(b <= a for a, b in zip(F, F[1:]))


def test_full_cr_reaches_small_gradient_with_counted_hessians():
    p = generate("trig", 64, 5, seed=3)
    res = quiet(run_full_cr, p, RunConfig(sigma=13 * p.rho + 4 * p.L + 1, epsilon=1e-4, m=1, K=200,
                                          early_stop=True))
    assert res.history[-1].exact_grad_norm <= 1e-3
    assert res.ledger.hessian_samples == 64 * res.iterations
    assert res.ledger.gradient_samples == 64 * res.iterations


@pytest.mark.parametrize("mode", ["with_replacement", "without_replacement"])
def test_counter_conservation(mode):
    p = generate("trig", 300, 4, seed=1)
    cfg = RunConfig(sigma=18.0, epsilon=0.05, sampling_mode=mode, count_pairs_once=True,
                    x0=np.full(4, 1.0))
    res = run_adaptive_svrc(p, cfg)
    K = res.config.K
    assert res.ledger.hessian_samples == K * 300 + sum(r.batch_h for r in res.history)
    assert res.ledger.gradient_samples == K * 300 + sum(r.batch_g for r in res.history)
    cum = [r.cum_bh for r in res.history]
    assert all(b >= a for a, b in zip(cum, cum[1:]))
    assert res.ledger.subproblem_solves == res.iterations


def test_pair_charging_doubles_sampled_indices():
    p = generate("trig", 300, 4, seed=1)
    cfg = RunConfig(sigma=18.0, epsilon=0.05, x0=np.full(4, 1.0))
    res = run_adaptive_svrc(p, cfg)
    sampled = sum(r.batch_h for r in res.history if r.batch_h < 300)
    exact = sum(r.batch_h for r in res.history if r.batch_h == 300)
    assert res.ledger.hessian_samples == res.config.K * 300 + 2 * sampled + exact


def test_seed_determinism():
    p = generate("robust", 200, 4, seed=0)
    cfg = RunConfig(sigma=40.0, epsilon=0.05, seed=42, x0=np.ones(4))
    a, b = run(p, cfg), run(p, cfg)
    strip = lambda res: [dataclasses.replace(r, wall_time_ns=0) for r in res.history]
    assert strip(a) == strip(b)
    assert a.selected == b.selected
    np.testing.assert_array_equal(a.x_out, b.x_out)
    c = run(p, dataclasses.replace(cfg, seed=43))
    assert strip(a) != strip(c)


def test_x_out_is_recorded_point():
    p = generate("trig", 100, 3)
    res = quiet(run, p, RunConfig(sigma=18.0, epsilon=0.1))
    j = next(i for i, r in enumerate(res.history) if (r.k, r.t) == res.selected)
    np.testing.assert_array_equal(res.x_out, res.points[j])
    assert res.grad_norm == pytest.approx(res.history[j].exact_grad_norm)


def test_early_stop():
    p = generate("trig", 100, 3)
    cfg = RunConfig(sigma=18.0, epsilon=0.1, early_stop=True, x0=np.full(3, 0.5))
    res = run(p, cfg)
    full = run(p, dataclasses.replace(cfg, early_stop=False))
    assert res.iterations < full.iterations
    last = res.history[-1]
    assert last.exact_grad_norm <= 0.1 and last.lambda_min >= -math.sqrt(0.1)


def test_full_diag_records_lambda_min():
    p = generate("trig", 50, 3)
    res = run(p, RunConfig(sigma=18.0, epsilon=0.2, diag="full"))
    assert all(not math.isnan(r.lambda_min) for r in res.history)
    res = run(p, RunConfig(sigma=18.0, epsilon=0.2))
    assert all(math.isnan(r.lambda_min) for r in res.history)


def test_non_finite_aborts_with_history():
    def grad(x):
        return np.array([-1.0]) if x[0] < 2.5 else np.array([np.nan])
    p = ComponentProblem([lambda x: -x[0]], [grad], [lambda x: np.zeros((1, 1))], d=1, L=0, rho=0)
    with pytest.raises(RunAborted) as err:
        run_full_cr(p, RunConfig(sigma=2.0, epsilon=0.1, m=5, K=5))
    assert len(err.value.history) >= 1
    assert err.value.ledger.gradient_samples >= 1


def test_invalid_schedule_falls_back_with_warning():
    p = generate("trig", 3125, 3)
    with pytest.warns(UserWarning, match="gamma"):
        res = run_corrected_svrc(p, RunConfig(sigma=4.0, epsilon=0.3, m=5, K=1))
    assert res.gamma == p.rho


# -- end-to-end examples ---------------------------------------------------

def test_adaptive_small_trig_end_to_end():
    eps = 0.01
    p = generate("trig", 64, 5, seed=0)
    sigma = 13 * p.rho + 4 * p.L + 1
    m = math.ceil(64 ** (1 / 3))
    K = math.ceil(eps ** -1.5 / m)
    good = 0
    for seed in range(10):
        res = run(p, RunConfig(sigma=sigma, epsilon=eps, m=m, K=K, seed=seed, x0=np.full(5, 0.3)))
        good += res.grad_norm <= eps and res.lambda_min >= -3 * math.sqrt(eps)
    assert good >= 9


def test_corrected_trig_end_to_end():
    eps = 0.05
    p = generate("trig", 3125, 5, seed=0)
    good = 0
    for seed in range(10):
        cfg = RunConfig(sigma=4 * p.rho, epsilon=eps, algorithm="corrected_svrc", m=5,
                        K=math.ceil(eps ** -1.5 / 5), seed=seed, x0=np.full(5, 0.3))
        res = quiet(run, p, cfg)
        good += res.grad_norm <= eps
    assert good >= 8
