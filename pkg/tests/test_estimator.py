import json
import math
import warnings

import numpy as np
import pytest
from scipy import integrate, stats as sps

from regenmc.brownian import PathConfig, PathCursor
from regenmc.estimator import (
    RESULT_KEYS, CycleIntegralAccumulator, EstimatorConfig, IntegrabilityRefused,
    IntegrabilityWarning, TooFewCycles, accumulate_path, cycle_integral, cycle_occupation,
    estimate, kr_estimate, line_integral, ratio_estimate, result_from, sample_limit_Q,
    sample_renewal_limit, sample_stable_half, t_quarter_limit_check, z_alpha,
)
from regenmc.integrand import parse
from regenmc.regeneration import next_cycle, run_path
from regenmc.stats import ks_one_sample

GAUSS = parse("exp(-x^2)")
SQRT_PI = math.sqrt(math.pi)


def test_z_alpha():
    assert z_alpha(0.05) == pytest.approx(1.959963984540054, abs=1e-12)
    assert 2 * sps.norm.sf(z_alpha(0.01)) == pytest.approx(0.01, rel=1e-10)
    with pytest.raises(ValueError):
        z_alpha(0)


def test_line_integral():
    assert line_integral(GAUSS) == pytest.approx(SQRT_PI, abs=1e-10)
    assert line_integral(parse("exp(-abs(x))")) == pytest.approx(2.0, abs=1e-10)


def test_three_cycle_fixture():
    acc = CycleIntegralAccumulator()
    for xi in (1.0, 2.0, 3.0):
        acc.add(xi)
    cfg = EstimatorConfig(seed=1)
    r = result_from(acc, 10.0, cfg)
    assert r.lambda_star == 2.0
    assert r.sigma_hat == pytest.approx(math.sqrt(14 / 3 - 4))
    half = 1.959963984540054 * r.sigma_hat / math.sqrt(3)
    assert (r.ci_low, r.ci_high) == pytest.approx((2 - half, 2 + half))
    assert acc.xi_sq_sum >= acc.xi_sum**2 / acc.n


def test_accumulator_merge():
    a, b = CycleIntegralAccumulator(), CycleIntegralAccumulator()
    a.add(1.0)
    b.add(2.0)
    b.add(4.0)
    m = a.merge(b)
    assert (m.n, m.xi_sum, m.xi_sq_sum, m.xis) == (3, 7.0, 21.0, [1.0, 2.0, 4.0])


def test_zero_integrand_is_degenerate():
    r = estimate(parse("0"), 1e3, EstimatorConfig(seed=1))
    assert (r.lambda_star, r.sigma_hat, r.ci_low, r.ci_high) == (0, 0, 0, 0)
    assert ratio_estimate(parse("0"), 1e3, EstimatorConfig(seed=1)) == 0
    assert kr_estimate(parse("0"), 1e3, EstimatorConfig(seed=1)) == 0


def test_too_few_cycles():
    with pytest.raises(TooFewCycles):
        estimate(GAUSS, 0.5, EstimatorConfig(seed=1))


def test_refuses_non_integrable():
    with pytest.raises(IntegrabilityRefused):
        estimate(parse("1/(1+abs(x))"), 100, EstimatorConfig(seed=1))


def test_warns_without_sqrt_moment():
    with pytest.warns(IntegrabilityWarning):
        r = estimate(parse("1/(1+abs(x)^1.2)"), 1e3, EstimatorConfig(seed=2, fine_radius=4))
    assert r.n_cycles >= 2


def test_no_warning_for_gaussian():
    with warnings.catch_warnings():
        warnings.simplefilter("error", IntegrabilityWarning)
        estimate(GAUSS, 1e3, EstimatorConfig(seed=3))


def test_result_json_keys_and_ci():
    r = estimate(GAUSS, 1e4, EstimatorConfig(seed=4))
    d = r.to_dict()
    assert tuple(d) == RESULT_KEYS
    json.dumps(d)
    assert r.ci_low <= r.lambda_star <= r.ci_high
    half = z_alpha(0.05) * r.sigma_hat / math.sqrt(r.n_cycles)
    assert r.ci_high - r.lambda_star == pytest.approx(half)


def test_deterministic_for_seed():
    a = estimate(GAUSS, 1e4, EstimatorConfig(seed=15)).to_dict()
    b = estimate(GAUSS, 1e4, EstimatorConfig(seed=15)).to_dict()
    assert a == b


def test_linearity_on_identical_cycles():
    cfg = EstimatorConfig(seed=6, fine_radius=6.0)
    f, g = parse("exp(-x^2)"), parse("exp(-abs(x))")
    h = parse("2*exp(-x^2) - 3*exp(-abs(x))")
    rf, rg, rh = (estimate(e, 2e4, cfg) for e in (f, g, h))
    assert rf.n_cycles == rg.n_cycles == rh.n_cycles
    assert rh.lambda_star == pytest.approx(2 * rf.lambda_star - 3 * rg.lambda_star, rel=1e-9, abs=1e-12)


def test_cycle_integral_examples():
    cur = PathCursor(PathConfig(dt=1e-4, seed=7))
    for _ in range(20):
        c = next_cycle(cur, retain_samples=True)
        assert cycle_integral(c, parse("0")) == 0
        assert abs(cycle_integral(c, parse("1")) - c.duration) <= 1e-4
    with pytest.raises(ValueError):
        cycle_integral(next_cycle(cur), GAUSS)


def test_cycle_integral_of_narrow_bump():
    # mean cycle integral = 2 * integral(f); f concentrated within 1e-2 of 0.5
    f = parse("exp(-1000000*(x-0.5)^2)")
    n = 10_000
    cursor = PathCursor(PathConfig(dt=1e-5, seed=8, zones=((0.49, 0.51),)))
    xi = np.zeros(n)

    def consume(chunk):
        near = np.abs(chunk.b - 0.5) < 0.01
        if near.any():
            xi[:] += np.bincount(chunk.cycle[near], weights=chunk.h[near] * np.exp(-1e6 * (chunk.b[near] - 0.5) ** 2), minlength=n)

    summary = run_path(cursor, consume, n_cycles=n)
    xi = xi[summary.completed_index]
    target = 2 * line_integral(f)
    assert abs(xi.mean() - target) < 3 * xi.std() / math.sqrt(xi.size)


def test_gaussian_estimate_and_partial_cycle_diagnostic():
    r = estimate(GAUSS, 1e6, EstimatorConfig(seed=9))
    assert r.ci_low - 0.05 < SQRT_PI < r.ci_high + 0.05
    assert abs(r.diagnostics["ratio_estimate"] - SQRT_PI) < 0.5
    assert r.diagnostics["with_partial_cycle"] >= 0


def test_exp_abs_estimate():
    r = estimate(parse("exp(-abs(x))"), 1e6, EstimatorConfig(seed=10))
    assert abs(r.lambda_star - 2) < 4 * (r.ci_high - r.lambda_star) / 1.96


def test_raw_normalization_is_twice_the_integral():
    # occupation_constant = 1 reports the raw cycle mean, which estimates 2 * integral
    raw = [estimate(GAUSS, 2e5, EstimatorConfig(seed=s, occupation_constant=1.0)).lambda_star
           for s in range(10)]
    assert np.mean(raw) == pytest.approx(2 * SQRT_PI, rel=0.1)


def test_stream_invariance_in_distribution():
    one = [estimate(GAUSS, 4e4, EstimatorConfig(seed=100 + s)).lambda_star for s in range(20)]
    eight = [estimate(GAUSS, 4e4, EstimatorConfig(seed=200 + s, streams=8)).lambda_star for s in range(20)]
    se = math.hypot(np.std(one, ddof=1), np.std(eight, ddof=1)) / math.sqrt(20)
    assert abs(np.median(one) - np.median(eight)) < 3 * 1.25 * se


@pytest.mark.slow
def test_ratio_and_lambda_star_gap_shrinks():
    medians = []
    for t in (1e4, 1e5, 1e6):
        gaps = []
        for s in range(20):
            acc = accumulate_path(GAUSS, t, EstimatorConfig(seed=300 + s))
            if acc.n == 0:
                gaps.append(math.inf)
                continue
            ratio = acc.running_integral_to_horizon / acc.unit_interval_time
            gaps.append(abs(ratio - acc.xi_sum / acc.n))
        medians.append(np.median(gaps))
    assert medians[0] > medians[1] > medians[2]


def test_kr_estimate_scale():
    vals = [kr_estimate(GAUSS, 1e3, EstimatorConfig(seed=s)) for s in range(40)]
    # limit mean is lambda * E|Z| = lambda * sqrt(2/pi)
    assert np.mean(vals) == pytest.approx(SQRT_PI * math.sqrt(2 / math.pi), rel=0.25)


def test_stable_half_laplace_transform():
    v = sample_stable_half(np.random.default_rng(0), 1_000_000)
    for s in (0.25, 1.0, 4.0):
        w = np.exp(-s * v)
        assert abs(w.mean() - math.exp(-math.sqrt(s))) < 3 * w.std() / 1000


def test_limit_q_symmetric_and_cauchy():
    q = sample_limit_Q(np.random.default_rng(1), 100_000)
    frac = np.mean(q < 0)
    assert abs(frac - 0.5) < 3 * math.sqrt(0.25 / q.size)
    # oracle: invert the characteristic function exp(-|u|/sqrt 2) numerically
    def cdf(x):
        return 0.5 + np.array([
            integrate.quad(lambda u, xv=xv: math.exp(-u / math.sqrt(2)) * math.sin(u * xv) / u, 0, np.inf,
                           limit=400)[0] / math.pi
            for xv in np.atleast_1d(x)
        ])
    grid = np.array([-3.0, -1.0, -0.3, 0.4, 2.0])
    assert np.allclose(cdf(grid), sps.cauchy(scale=1 / math.sqrt(2)).cdf(grid), atol=1e-6)
    assert ks_one_sample(q, sps.cauchy(scale=1 / math.sqrt(2)).cdf).p_value > 0.01


def test_renewal_limit_sampler():
    g = sample_renewal_limit(np.random.default_rng(2), 200_000)
    assert abs(np.median(g)) < 0.02
    # P(|G| sqrt(2/|Z|) <= 1) by direct quadrature over Z
    p = integrate.quad(lambda z: 2 * sps.norm.pdf(z) * (2 * sps.norm.cdf(math.sqrt(z / 2)) - 1), 0, np.inf)[0]
    assert np.mean(np.abs(g) <= 1) == pytest.approx(p, abs=0.005)


def test_t_quarter_rejects_degenerate():
    with pytest.raises(ValueError):
        t_quarter_limit_check(parse("0"), 1e3, 5, EstimatorConfig(seed=1), lam=0.0, sigma=0.0)


def test_occupation_measure():
    occ = cycle_occupation([[0, 1], [-1, 0], [0.25, 0.75]], 10_000, seed=11)
    se = occ.std(axis=0) / math.sqrt(occ.shape[0])
    assert np.all(np.abs(occ.mean(axis=0) - [2.0, 2.0, 1.0]) < 3 * se)
    with pytest.raises(ValueError):
        cycle_occupation([[1, 0]], 10)


def test_accumulate_path_counts():
    acc = accumulate_path(GAUSS, 1e4, EstimatorConfig(seed=12))
    assert acc.n == len(acc.xis)
    assert acc.elapsed == pytest.approx(1e4)
    assert acc.unit_interval_time > 0
