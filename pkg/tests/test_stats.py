import numpy as np
import pytest
from scipy import stats as sps

from regenmc import local_time as lt
from regenmc.stats import (
    TooFewSamples, binomial_atom_test, kolmogorov_pvalue, ks_one_sample, ks_two_sample,
    mixed_law_test, moment_test, within_se,
)


def expon_cdf(mean):
    return lambda v: -np.expm1(-np.asarray(v) / mean)


def test_ks_one_sample_null_calibration():
    rejected = 0
    for seed in range(100):
        x = np.random.default_rng(seed).exponential(2.0, 10_000)
        rep = ks_one_sample(x, expon_cdf(2.0))
        assert 0 <= rep.statistic <= 1 and 0 <= rep.p_value <= 1
        rejected += rep.p_value < 0.01
    assert rejected <= 5


def test_ks_one_sample_matches_scipy():
    x = np.random.default_rng(1).normal(size=500)
    rep = ks_one_sample(x, sps.norm.cdf)
    ref = sps.kstest(x, "norm", method="asymp")
    assert rep.statistic == pytest.approx(ref.statistic, abs=1e-12)
    assert rep.p_value == pytest.approx(ref.pvalue, rel=1e-6)


def test_ks_one_sample_constant():
    rep = ks_one_sample(np.full(100, 1.0), expon_cdf(1.0))
    assert rep.statistic >= 0.5
    assert rep.p_value < 1e-10


def test_ks_two_sample_identical():
    a = np.random.default_rng(0).random(100)
    rep = ks_two_sample(a, a)
    assert rep.statistic == 0 and rep.p_value == 1


def test_ks_two_sample_null_calibration():
    rejected = 0
    for seed in range(100):
        rng = np.random.default_rng(1000 + seed)
        rejected += ks_two_sample(rng.exponential(2, 10_000), rng.exponential(2, 10_000)).p_value < 0.01
    assert rejected <= 5


def test_ks_two_sample_separated():
    rng = np.random.default_rng(3)
    rep = ks_two_sample(rng.exponential(2, 10_000), rng.exponential(4, 10_000))
    assert rep.p_value < 1e-10
    # analytic sup distance of the two exponential CDFs: at y = 4 log 2
    assert rep.statistic == pytest.approx(0.25, abs=0.03)


def test_ks_two_sample_matches_scipy():
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=300), rng.normal(0.1, 1, 400)
    ref = sps.ks_2samp(a, b, method="asymp")
    rep = ks_two_sample(a, b)
    assert rep.statistic == pytest.approx(ref.statistic, abs=1e-12)
    assert rep.p_value == pytest.approx(ref.pvalue, rel=0.05)


def test_too_few_samples():
    with pytest.raises(TooFewSamples):
        ks_one_sample(np.ones(19), expon_cdf(1))
    with pytest.raises(TooFewSamples):
        ks_two_sample(np.ones(19), np.ones(100))
    with pytest.raises(TooFewSamples):
        moment_test(np.ones(99), 1)
    with pytest.raises(TooFewSamples):
        binomial_atom_test(1, 99, 0.5)


def test_kolmogorov_pvalue_limits():
    assert kolmogorov_pvalue(100, 0.0) == 1.0
    assert kolmogorov_pvalue(100, 1.0) < 1e-50


@pytest.mark.parametrize("order,expected", [(1, 2.0), (2, 16.0)])
def test_moment_test_exact_draws(order, expected):
    law = lt.exact_law(2)
    passed = 0
    for seed in range(1000):
        draws = lt.sample_exact(law, np.random.default_rng(seed), 10_000)
        passed += moment_test(draws, expected, order).statistic < 3
    assert passed >= 990


def test_moment_test_constant():
    rep = moment_test(np.full(200, 3.0), 3.0)
    assert rep.statistic == 0 and rep.accepted
    assert not moment_test(np.full(200, 3.0), 4.0).accepted


def test_moment_test_against_normal_tail():
    x = np.random.default_rng(5).normal(0.1, 1, 1000)
    rep = moment_test(x, 0.0)
    z = x.mean() / (x.std(ddof=1) / np.sqrt(x.size))
    assert rep.metadata["z"] == pytest.approx(z)
    assert rep.p_value == pytest.approx(2 * sps.norm.sf(abs(z)))


def test_binomial_examples():
    assert binomial_atom_test(500, 1000, 0.5).p_value == pytest.approx(1.0)
    assert binomial_atom_test(900, 1000, 0.5).p_value < 1e-100
    assert binomial_atom_test(0, 1000, 0.0).p_value == 1.0
    assert binomial_atom_test(1, 1000, 0.0).p_value == 0.0
    assert binomial_atom_test(1000, 1000, 1.0).accepted


def test_mixed_law_test():
    law = lt.exact_law(2)
    draws = lt.sample_exact(law, np.random.default_rng(8), 5000)
    binom, ks = mixed_law_test(draws, law.atom_at_zero, lambda v: lt.continuous_cdf(law, v))
    assert binom.accepted and ks.accepted


def test_report_row():
    row = ks_two_sample(np.arange(30.0), np.arange(30.0), seed=7).as_row()
    assert row["seed"] == 7 and row["accepted"] == 1
    assert set(row) >= {"test", "n", "statistic", "p_value"}


def test_within_se():
    assert within_se(1.0, 1.2, 0.1)
    assert not within_se(1.0, 1.5, 0.1)
