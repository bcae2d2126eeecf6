"""Data pipeline tests: stream reproducibility, samplers, simulators, MC reference."""

import math

import numpy as np
import pytest

from kolnet.data import (
    DomainError,
    LambdaBatch,
    NoExactSamplerError,
    RngStream,
    euler_maruyama,
    flatten_batch,
    flatten_input,
    input_bounds,
    make_targets,
    mc_reference,
    sample_lambda,
    simulate_exact,
    standardize_slopes,
    write_samples_csv,
)
from kolnet.problems import build_problem, gamma_bounds, initial_condition

BS = build_problem("black_scholes")
HP = build_problem("heat_paraboloid")
HG = build_problem("heat_gaussian")
BASKET = build_problem("basket_put")


def test_same_key_same_stream():
    a = RngStream(42, 3).standard_normal(1000)
    b = RngStream(42, 3).standard_normal(1000)
    assert np.array_equal(a, b)


def test_distinct_streams_differ():
    a = RngStream(42, 0).random(100)
    b = RngStream(42, 1).random(100)
    c = RngStream(43, 0).random(100)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_box_muller_moments():
    z = RngStream(1, 0).standard_normal(10 ** 6)
    assert abs(z.mean()) < 3.5 / math.sqrt(len(z))
    assert abs(z.var() - 1.0) < 0.01
    # both halves of each Box-Muller pair are used
    assert RngStream(1, 0).standard_normal(3).shape == (3,)


def test_sample_lambda_box_membership():
    batch = sample_lambda(BS, RngStream(2, 1), 10 ** 5)
    assert batch.gamma[:, 0].min() >= 0.1 and batch.gamma[:, 0].max() <= 0.6
    assert batch.gamma[:, 1].min() >= 10.0 and batch.gamma[:, 1].max() <= 12.0
    assert batch.x.min() >= 9.0 and batch.x.max() <= 10.0
    assert batch.t.min() >= 0.0 and batch.t.max() <= 1.0


def test_sample_lambda_deterministic():
    a = sample_lambda(BS, RngStream(3, 1), 1000)
    b = sample_lambda(BS, RngStream(3, 1), 1000)
    assert np.array_equal(a.flat, b.flat)
    assert np.array_equal(a.t, b.t)


def test_sample_lambda_uniform_time_mean():
    batch = sample_lambda(BS, RngStream(4, 1), 10 ** 6)
    se = 1.0 / math.sqrt(12 * len(batch))
    assert abs(batch.t.mean() - 0.5) <= 3 * se


def test_flatten_standardization():
    lo, hi = input_bounds(BS)
    # lower bound maps to -sqrt(3), midpoint to 0
    flat = flatten_input(BS, np.array([0.1, 11.0]), np.array([9.5]), 0.5)
    assert flat[0] == pytest.approx(-math.sqrt(3), rel=1e-12)
    assert flat[1] == pytest.approx(0.0, abs=1e-12)
    assert flat.shape == (4,)
    slopes = standardize_slopes(BS)
    assert np.allclose(slopes, math.sqrt(12) / (hi - lo))


def test_flatten_rejects_outside_box():
    with pytest.raises(DomainError):
        flatten_input(BS, np.array([0.7, 11.0]), np.array([9.5]), 0.5)
    with pytest.raises(DomainError):
        flatten_input(BS, np.array([0.3, 11.0]), np.array([8.0]), 0.5)


def test_flattened_samples_have_unit_moments():
    batch = sample_lambda(HP, RngStream(5, 1), 200_000)
    means = batch.flat.mean(axis=0)
    stds = batch.flat.std(axis=0)
    assert np.abs(means).max() < 0.02
    assert np.abs(stds - 1.0).max() < 0.02


def test_simulate_exact_t0_returns_x():
    batch = sample_lambda(BS, RngStream(6, 1), 100)
    batch.t[:] = 0.0
    s = simulate_exact(BS, batch, RngStream(6, 2))
    assert np.array_equal(s, batch.x)


def test_simulate_exact_zero_scale_gaussian():
    batch = sample_lambda(HG, RngStream(7, 1), 50)
    batch.gamma[:] = 0.0
    s = simulate_exact(HG, batch, RngStream(7, 2))
    assert np.array_equal(s, batch.x)


def test_gbm_martingale():
    n = 10 ** 6
    batch = LambdaBatch(gamma=np.broadcast_to([0.35, 11.0], (n, 2)).copy(),
                        x=np.full((n, 1), 9.5), t=np.ones(n), flat=None)
    s = simulate_exact(BS, batch, RngStream(8, 2))
    se = s.std(ddof=1) / math.sqrt(n)
    assert abs(s.mean() - 9.5) <= 3 * se


def test_basket_has_no_exact_sampler():
    batch = sample_lambda(BASKET, RngStream(9, 1), 4)
    with pytest.raises(NoExactSamplerError):
        simulate_exact(BASKET, batch, RngStream(9, 2))


def test_euler_maruyama_zero_coefficients():
    batch = sample_lambda(HP, RngStream(10, 1), 64)
    batch.gamma[:] = 0.0  # sigma = 0, mu = 0: the scheme degenerates to X
    for steps in (1, 7):
        s = euler_maruyama(HP, batch, steps, RngStream(10, 2))
        assert np.array_equal(s, batch.x)


def test_euler_maruyama_additive_matches_exact_in_distribution():
    import dataclasses

    n = 200_000
    gam = np.full((n, 1), 0.08)
    batch = LambdaBatch(gamma=gam, x=np.zeros((n, 2)), t=np.ones(n), flat=None)
    # scalar-diffusion heat problem shrunk to d = 2 keeps this cheap
    spec = dataclasses.replace(HG, d=2)
    em = euler_maruyama(spec, batch, 5, RngStream(11, 2))
    exact = simulate_exact(spec, batch, RngStream(12, 2))
    # additive scheme is exact: terminal laws agree (mean and variance)
    assert abs(em.mean() - exact.mean()) < 4 * 0.08 / math.sqrt(n)
    assert abs(em.var() - exact.var()) < 4 * 0.08 ** 2 / math.sqrt(n)


def test_euler_maruyama_rejects_zero_steps():
    batch = sample_lambda(BS, RngStream(13, 1), 4)
    with pytest.raises(ValueError):
        euler_maruyama(BS, batch, 0, RngStream(13, 2))


def test_targets_ranges():
    batch = sample_lambda(HG, RngStream(14, 1), 5000)
    s = simulate_exact(HG, batch, RngStream(14, 2))
    y = make_targets(HG, batch, s).y
    assert np.all(y > 0) and np.all(y <= 1.0)

    bs_batch = sample_lambda(BS, RngStream(15, 1), 5000)
    s = simulate_exact(BS, bs_batch, RngStream(15, 2))
    y = make_targets(BS, bs_batch, s).y
    assert np.all(y >= 0) and np.all(y <= bs_batch.gamma[:, 1])


def test_targets_at_t0_equal_payoff():
    batch = sample_lambda(BS, RngStream(16, 1), 200)
    batch.t[:] = 0.0
    s = simulate_exact(BS, batch, RngStream(16, 2))
    y = make_targets(BS, batch, s).y
    want = np.array([initial_condition(BS, batch.gamma[i], batch.x[i])
                     for i in range(200)])
    assert np.array_equal(y, want)


def test_mc_reference_paraboloid_value():
    gam = (0.5 * np.eye(10)).reshape(-1)
    mean, se = mc_reference(HP, gam, np.ones(10), 1.0, 10 ** 5, 0, RngStream(17, 2))
    # |x|^2 + t Trace(g g*) = 10 + 2.5
    assert abs(mean - 12.5) <= 3 * se
    assert se < 0.05


def test_mc_reference_deterministic_time_zero():
    gam = np.zeros(100)
    mean, se = mc_reference(HP, gam, np.ones(10), 0.0, 1000, 0, RngStream(18, 2))
    assert mean == 10.0 and se == 0.0


def test_mc_reference_needs_two_samples():
    with pytest.raises(ValueError):
        mc_reference(HP, np.zeros(100), np.ones(10), 1.0, 1, 0, RngStream(19, 2))


def test_mc_reference_error_scaling():
    gam = np.full(100, 0.5)
    _, se1 = mc_reference(HP, gam, np.ones(10), 1.0, 4000, 0, RngStream(20, 2))
    _, se2 = mc_reference(HP, gam, np.ones(10), 1.0, 16000, 0, RngStream(21, 2))
    assert abs(se1 / se2 - 2.0) < 0.4  # quadrupling m halves the standard error


def test_basket_reference_full_protocol():
    """One pointwise reference at the published budget: 2^20 paths, 25 steps."""
    rng = RngStream(22, 2)
    point = sample_lambda(BASKET, rng, 1)
    mean, se = mc_reference(BASKET, point.gamma[0], point.x[0], float(point.t[0]),
                            1 << 20, 25, rng)
    assert math.isfinite(mean) and 0.0 <= mean <= 12.0
    assert se < 0.01  # 2^20 samples pin the value down


def test_stream_counter_monotone_and_disjoint():
    rng = RngStream(23, 1)
    marks = [rng.draws]
    for _ in range(5):
        batch = sample_lambda(BS, rng, 256)
        simulate_exact(BS, batch, rng)
        marks.append(rng.draws)
    intervals = list(zip(marks, marks[1:]))
    assert all(b > a for a, b in intervals)
    assert all(prev_end <= start for (_, prev_end), (start, _)
               in zip(intervals, intervals[1:]))


def test_samples_csv_dump(tmp_path):
    batch = sample_lambda(BS, RngStream(24, 1), 8)
    s = simulate_exact(BS, batch, RngStream(24, 2))
    y = make_targets(BS, batch, s).y
    path = tmp_path / "dump.csv"
    write_samples_csv(path, BS, batch, y)
    lines = path.read_text().splitlines()
    assert lines[0] == "gamma_0,gamma_1,x_0,t,y"
    assert len(lines) == 9
    row = np.array([float(v) for v in lines[1].split(",")])
    assert row[0] == batch.gamma[0, 0] and row[-1] == y[0]
