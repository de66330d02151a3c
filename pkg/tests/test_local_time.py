import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats as sps

from regenmc import local_time as lt
from regenmc.brownian import PathConfig, PathCursor
from regenmc.regeneration import Cycle, CycleSamples, next_cycle
from regenmc.stats import ks_one_sample

LEVELS = (-2.0, -0.5, 0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 3.0)


def test_exact_law_examples():
    law = lt.exact_law(2)
    assert (law.regime, law.atom_at_zero, law.scale_a, law.scale_b) == (lt.ABOVE_ONE, 0.5, 4.0, 0.0)
    law = lt.exact_law(0.5)
    assert (law.regime, law.atom_at_zero, law.scale_a, law.scale_b) == (lt.UNIT_INTERVAL, 0.0, 1.0, 1.0)
    law = lt.exact_law(-1)
    assert (law.regime, law.atom_at_zero, law.scale_a, law.scale_b) == (lt.BELOW_ZERO, 0.5, 4.0, 0.0)


def test_regime_boundaries():
    assert lt.exact_law(0).regime == lt.UNIT_INTERVAL
    assert lt.exact_law(1).regime == lt.UNIT_INTERVAL
    assert lt.exact_law(1 + 1e-12).regime == lt.ABOVE_ONE
    assert lt.exact_law(-1e-12).regime == lt.BELOW_ZERO
    assert lt.exact_law(0).scales == (2.0,)
    assert lt.exact_law(1).scales == (2.0,)


def test_hitting_prob_examples():
    assert lt.hitting_prob(2) == 0.5
    assert lt.hitting_prob(0.7) == 1.0
    assert lt.hitting_prob(-3) == 0.25


def test_mean_and_second_moment_examples():
    assert lt.mean(2) == lt.mean(0) == lt.mean(-7.3) == 2
    assert lt.second_moment(2) == 16
    assert lt.second_moment(0.5) == 6
    assert lt.second_moment(-1) == 16
    for x in (0.0, 1.0):
        assert lt.second_moment(x) == 8
        assert lt.second_moment(x - 1e-12) == pytest.approx(8)
        assert lt.second_moment(x + 1e-12) == pytest.approx(8)


def test_analytic_cdf_examples():
    assert lt.analytic_cdf(lt.exact_law(2), 0) == 0.5
    assert lt.analytic_cdf(lt.exact_law(0.5), 1) == pytest.approx(1 - 2 / math.e, abs=1e-12)
    for x in LEVELS:
        law = lt.exact_law(x)
        assert lt.analytic_cdf(law, 1e6) == 1.0
        assert lt.analytic_cdf(law, 0) == law.atom_at_zero
        assert lt.analytic_cdf(law, -1) == 0.0


@pytest.mark.parametrize("x", [0.1, 0.3, 0.5 - 1e-11, 0.9])
def test_continuous_cdf_against_scipy(x):
    law = lt.exact_law(x)
    ell = np.linspace(0, 20, 50)
    if abs(x - 0.5) < 1e-6:
        ref = sps.gamma(2, scale=1.0).cdf(ell)
    else:
        # sum of two exponentials by numeric convolution
        a, b = law.scale_a, law.scale_b
        ref = np.array([
            integrate.quad(lambda u: sps.expon(scale=a).pdf(u) * sps.expon(scale=b).cdf(e - u), 0, e)[0]
            for e in ell
        ])
    assert np.allclose(lt.continuous_cdf(law, ell), ref, atol=1e-6)


@given(st.floats(-50, 50), st.floats(0, 100), st.floats(0, 10))
def test_cdf_non_decreasing(x, ell, d):
    law = lt.exact_law(x)
    assert 0 <= lt.analytic_cdf(law, ell) <= lt.analytic_cdf(law, ell + d) <= 1


def test_mgf_examples():
    for x in LEVELS:
        assert lt.mgf(x, 0) == 1
    assert lt.mgf(0, 0.25) == pytest.approx(2.0)
    assert lt.mgf(2, 0.25) == math.inf
    assert lt.mgf_threshold(2) == 0.25


@pytest.mark.parametrize("x", LEVELS)
def test_mgf_derivatives(x):
    h = 1e-5
    up, mid, down = lt.mgf(x, h), lt.mgf(x, 0.0), lt.mgf(x, -h)
    assert (up - down) / (2 * h) == pytest.approx(lt.mean(x), rel=1e-3)
    assert (up - 2 * mid + down) / h**2 == pytest.approx(lt.second_moment(x), rel=1e-3)
    assert lt.mgf(x, -1e-9) == pytest.approx(1.0)


def test_mgf_against_draws():
    rng = np.random.default_rng(4)
    draws = lt.sample_exact(lt.exact_law(0), rng, 200_000)
    assert np.mean(np.exp(0.25 * draws)) == pytest.approx(2.0, rel=0.03)


@pytest.mark.parametrize("x", LEVELS)
def test_sample_exact_matches_cdf(x):
    law = lt.exact_law(x)
    draws = lt.sample_exact(law, np.random.default_rng(abs(hash(x)) % 2**32), 100_000)
    pos = draws[draws > 0]
    assert ks_one_sample(pos, lambda v: lt.continuous_cdf(law, v)).p_value > 0.01
    frac = np.mean(draws == 0)
    se = math.sqrt(max(law.atom_at_zero * (1 - law.atom_at_zero), 1e-12) / draws.size)
    assert abs(frac - law.atom_at_zero) <= 3 * se + 1e-12


@pytest.mark.parametrize("x,m2", [(2, 16), (0.5, 6), (-1, 16)])
def test_sample_exact_moments(x, m2):
    draws = lt.sample_exact(lt.exact_law(x), np.random.default_rng(7), 100_000)
    se1 = draws.std() / math.sqrt(draws.size)
    se2 = (draws**2).std() / math.sqrt(draws.size)
    assert abs(draws.mean() - 2) < 3 * se1
    assert abs((draws**2).mean() - m2) < 3 * se2


def test_sample_exact_scalar():
    v = lt.sample_exact(lt.exact_law(0.5), np.random.default_rng(0))
    assert isinstance(v, float) and v > 0


def test_process_moments():
    grid = [0.1, 0.3, 0.5, 0.7, 0.9]
    draws = lt.sample_process_unit_interval(grid, np.random.default_rng(1), 100_000)
    assert draws.shape == (100_000, 5)
    se = draws.std(axis=0) / math.sqrt(draws.shape[0])
    assert np.all(np.abs(draws.mean(axis=0) - 2) < 3 * se)
    cov = np.cov(draws, rowvar=False)
    assert np.allclose(cov, lt.process_covariance(grid), atol=0.1)
    assert lt.process_covariance([0.25, 0.75])[0, 1] == pytest.approx(0.5)
    assert lt.process_covariance([0.5])[0, 0] == pytest.approx(2.0)


def test_process_against_independent_gaussians():
    # oracle: H(a) = |W(a)|^2 for planar W, built from direct N(0, a) draws
    rng = np.random.default_rng(2)
    n = 100_000
    a, b = 0.25, 0.75
    wa = rng.normal(0, math.sqrt(a), (n, 2))
    wb = wa + rng.normal(0, math.sqrt(b - a), (n, 2))
    ha, hb = (wa**2).sum(1), (wb**2).sum(1)
    assert np.cov(ha, hb)[0, 1] == pytest.approx(4 * a**2, abs=0.03)
    d = lt.sample_process_unit_interval([a, b], rng, n)
    assert np.cov(d[:, 0], d[:, 1])[0, 1] == pytest.approx(0.5, abs=0.05)


def test_process_grid_errors():
    rng = np.random.default_rng(0)
    with pytest.raises(lt.GridOutOfRange):
        lt.sample_process_unit_interval([0.5, 1.2], rng)
    with pytest.raises(lt.GridOutOfRange):
        lt.sample_process_unit_interval([0.5, 0.4], rng)
    assert lt.sample_process_unit_interval([0.0, 1.0], rng).shape == (2,)


def test_occupation_local_time_examples():
    cur = PathCursor(PathConfig(dt=1e-4, seed=1))
    c = next_cycle(cur, retain_samples=True)
    assert lt.occupation_local_time(c, 50.0).value == 0.0
    assert lt.occupation_local_time(c, 0.5).value > 0
    with pytest.raises(lt.NoSamples):
        lt.occupation_local_time(Cycle(1.0, 0.5), 0.5)
    toy = Cycle(0.3, 0.1, samples=CycleSamples(np.array([0, .1, .2]), np.array([0.0, 0.5, 0.5]), np.full(3, 0.1)))
    assert lt.occupation_local_time(toy, 0.5, 0.01).value == pytest.approx(0.2 / 0.02)
    with pytest.raises(ValueError):
        lt.occupation_local_time(toy, 0.5, 0.0)


def test_path_local_time_mean_at_half():
    vals = lt.path_local_times([0.5], 2000, seed=3)[:, 0]
    assert abs(vals.mean() - 2) < 3 * vals.std() / math.sqrt(vals.size)


def test_path_local_times_shrinking_epsilon():
    means, ses = [], []
    for k, eps in enumerate((4e-3, 2e-3, 1e-3)):
        v = lt.path_local_times([0.5], 2000, epsilon=eps, seed=40 + k)[:, 0]
        means.append(v.mean())
        ses.append(v.std() / math.sqrt(v.size))
    for i in range(3):
        for j in range(i + 1, 3):
            assert abs(means[i] - means[j]) < 2 * math.hypot(ses[i], ses[j]) * 1.5


def test_path_local_times_overlapping_bands():
    # overlapping bands take the per-level branch; values must match the disjoint run
    a = lt.path_local_times([0.5, 0.5005], 50, dt=1e-4, seed=5)
    b = lt.path_local_times([0.5], 50, dt=1e-4, seed=5, kappa=0.2)
    assert a.shape == (50, 2)
    assert np.all(a >= 0) and b.shape == (50, 1)
