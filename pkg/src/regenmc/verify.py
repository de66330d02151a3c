"""Verification batteries comparing simulation output with the closed-form laws.

Each function returns plain rows (dicts) ready for CSV output, plus an
overall accept flag. "Within 3 SE" checks are expressed as two-sided
z-tests at level 0.0027.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats as sps

from regenmc import local_time as lt
from regenmc.brownian import DEFAULT_DT, PathConfig, derive_seed
from regenmc.estimator import (
    EstimatorConfig, line_integral, kr_estimate, replicate_lambda_star, sample_kr_limit,
    sample_local_time_limit, t_quarter_limit_check, calibrate_sigma,
)
from regenmc.integrand import Expr
from regenmc.regeneration import estimate_tail_exponent, sample_durations
from regenmc.stats import (
    GofReport, TooFewSamples, binomial_atom_test, ks_one_sample, ks_two_sample, moment_test,
)

THREE_SE = 2.0 * sps.norm.sf(3.0)
LAW_LEVELS = (-2.0, -0.5, 0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 3.0)
TAIL_SLOPE_BAND = (-0.56, -0.44)

LOCAL_TIME_COLUMNS = (
    "x", "n", "ks_stat", "ks_p", "zero_frac", "atom_expected",
    "mean_hat", "mean_expected", "m2_hat", "m2_expected",
)


@dataclass
class Battery:
    rows: list[dict]
    accepted: bool
    reports: list[GofReport]


def z_row(name: str, estimate: float, expected: float, se: float, n: int = 0, **extra) -> GofReport:
    """Accepts when ``estimate`` lies within 3 ``se`` of ``expected``."""
    z = (estimate - expected) / se if se > 0 else (0.0 if estimate == expected else math.inf)
    p = math.erfc(abs(z) / math.sqrt(2.0))
    meta = {"estimate": estimate, "expected": expected, "se": se, "z": z}
    meta.update(extra)
    return GofReport(name, n, abs(z), p, THREE_SE, meta)


def level_reports(samples: np.ndarray, x: float, accept_at: float = 0.01) -> tuple[GofReport, Optional[GofReport], dict]:
    """Binomial test of the zero atom and KS of the positive part at level ``x``."""
    law = lt.exact_law(x)
    v = np.asarray(samples, dtype=float)
    zeros = int(np.sum(v == 0))
    binom = binomial_atom_test(zeros, v.size, law.atom_at_zero, accept_at, x=x)
    pos = v[v > 0]
    try:
        ks = ks_one_sample(pos, lambda e: lt.continuous_cdf(law, e), accept_at, x=x)
    except TooFewSamples:
        ks = None
    row = {
        "x": x,
        "n": v.size,
        "ks_stat": ks.statistic if ks else math.nan,
        "ks_p": ks.p_value if ks else math.nan,
        "zero_frac": zeros / v.size,
        "atom_expected": law.atom_at_zero,
        "mean_hat": float(v.mean()),
        "mean_expected": lt.mean(x),
        "m2_hat": float(np.mean(v * v)),
        "m2_expected": lt.second_moment(x),
    }
    return binom, ks, row


def local_time_law(
    levels: Sequence[float] = LAW_LEVELS,
    n: int = 2000,
    *,
    seed: int = 0,
    dt: float = lt.VERIFY_DT,
    epsilon: float = lt.DEFAULT_EPSILON,
    accept_at: float = 0.01,
    samples: Optional[np.ndarray] = None,
) -> Battery:
    """Path-based local times at each level against the exact law."""
    if samples is None:
        samples = lt.path_local_times(levels, n, epsilon=epsilon, dt=dt, seed=seed)
    rows, reports, ok = [], [], []
    for k, x in enumerate(levels):
        binom, ks, row = level_reports(samples[:, k], x, accept_at)
        level_ok = binom.accepted and ks is not None and ks.accepted
        rows.append(row)
        reports.extend(r for r in (binom, ks) if r is not None)
        ok.append(level_ok)
    return Battery(rows, all(ok), reports)


def moments(
    levels: Sequence[float],
    n: int,
    *,
    seed: int = 0,
    source: str = "exact",
    dt: float = lt.VERIFY_DT,
    epsilon: float = lt.DEFAULT_EPSILON,
) -> Battery:
    """Mean and second-moment z-tests (within 3 SE) at each level."""
    if source == "path":
        samples = lt.path_local_times(levels, n, epsilon=epsilon, dt=dt, seed=seed)
    elif source == "exact":
        samples = np.column_stack([
            lt.sample_exact(lt.exact_law(x), np.random.default_rng(derive_seed(seed, k)), n)
            for k, x in enumerate(levels)
        ])
    else:
        raise ValueError(f"unknown source {source!r}")
    reports = []
    for k, x in enumerate(levels):
        for order, expected in ((1, lt.mean(x)), (2, lt.second_moment(x))):
            reports.append(moment_test(samples[:, k], expected, order, THREE_SE, x=x, source=source))
    rows = [r.as_row() for r in reports]
    return Battery(rows, all(r.accepted for r in reports), reports)


def tail(
    durations: Optional[np.ndarray] = None,
    *,
    cycles: int = 100_000,
    seed: int = 0,
    dt: float = DEFAULT_DT,
    streams: int = 1,
) -> tuple[Battery, np.ndarray]:
    """Log-log survival slope of cycle durations over the upper decile."""
    if durations is None:
        durations, _ = sample_durations(cycles, PathConfig(dt=dt, seed=seed), streams=streams)
    slope, intercept = estimate_tail_exponent(durations)
    lo, hi = TAIL_SLOPE_BAND
    ok = lo <= slope <= hi
    rep = GofReport("tail_slope", int(durations.size), abs(slope + 0.5), 1.0 if ok else 0.0, 0.5,
                    {"slope": slope, "intercept": intercept, "band_low": lo, "band_high": hi})
    return Battery([rep.as_row()], ok, [rep]), durations


def ray_knight(grid: Sequence[float], n: int, *, seed: int = 0) -> Battery:
    """Mean and covariance of the unit-interval local time process, each within 3 SE."""
    g = np.asarray(grid, dtype=float)
    draws = lt.sample_process_unit_interval(g, np.random.default_rng(seed), n)
    m = draws.mean(axis=0)
    centered = draws - m
    cov_expected = lt.process_covariance(g)
    reports = []
    for i, x in enumerate(g):
        se = draws[:, i].std(ddof=1) / math.sqrt(n)
        reports.append(z_row("process_mean", float(m[i]), 2.0, float(se), n, x=x, y=x))
    for i in range(g.size):
        for j in range(i, g.size):
            prod = centered[:, i] * centered[:, j]
            est = float(prod.sum() / (n - 1))
            se = float(prod.std(ddof=1) / math.sqrt(n))
            reports.append(z_row("process_cov", est, float(cov_expected[i, j]), se, n, x=g[i], y=g[j]))
    return Battery([r.as_row() for r in reports], all(r.accepted for r in reports), reports)


def clt(f: Expr, horizon_t: float, replications: int, config: EstimatorConfig,
        accept_at: float = 0.01) -> Battery:
    """Normal limit of ``sqrt(N) (lambda* - lambda) / sigma`` and CI coverage."""
    lam = line_integral(f)
    res = replicate_lambda_star(f, horizon_t, replications, config, with_sigma=True)
    zs, cover = [], []
    z_a = -sps.norm.ppf(config.alpha / 2)
    no_interval = 0
    for lam_hat, acc in res:
        if acc.n < 2:
            # no interval can be formed; counted as a miss
            no_interval += 1
            cover.append(False)
            continue
        s = math.sqrt(max(acc.xi_sq_sum / acc.n - lam_hat**2, 0.0))
        if s > 0:
            zs.append((lam_hat - lam) * math.sqrt(acc.n) / s)
        cover.append(abs(lam_hat - lam) <= z_a * s / math.sqrt(acc.n))
    ks = ks_one_sample(zs, sps.norm.cdf, accept_at, t=horizon_t, lam=lam)
    ks.test_name = "clt_normal"
    k = len(cover)
    rate = float(np.mean(cover))
    nominal = 1 - config.alpha
    se = math.sqrt(nominal * (1 - nominal) / k)
    cov_rep = z_row("ci_coverage", rate, nominal, se, k, t=horizon_t, no_interval=no_interval)
    reports = [ks, cov_rep]
    return Battery([r.as_row() for r in reports], all(r.accepted for r in reports), reports)


def t_quarter(f: Expr, t: float, replications: int, config: EstimatorConfig,
              reference: str = "stated", accept_at: float = 0.01) -> Battery:
    rep = t_quarter_limit_check(f, t, replications, config, reference=reference, accept_at=accept_at)
    rep.metadata.pop("values", None)
    return Battery([rep.as_row()], rep.accepted, [rep])


def kr_limit(f: Expr, t: float, replications: int, config: EstimatorConfig,
             reference: str = "stated", reference_size: int = 100_000,
             accept_at: float = 0.01) -> Battery:
    """Two-sample KS of ``t**-1/2 * integral of f(B)`` against the chosen limit law.

    ``reference="stated"``: ``lam sqrt(|Z|) sqrt(2/pi)``; ``"local-time"``: ``lam |Z|``.
    """
    lam = line_integral(f)
    base = config.resolved_seed()
    vals = np.array([
        kr_estimate(f, t, EstimatorConfig(dt=config.dt, seed=derive_seed(base, r), kappa=config.kappa,
                                          fine_radius=config.fine_radius))
        for r in range(replications)
    ])
    rng = np.random.default_rng(derive_seed(base, 2**31))
    sampler = {"stated": sample_kr_limit, "local-time": sample_local_time_limit}[reference]
    ref = sampler(lam, rng, reference_size)
    rep = ks_two_sample(vals, ref, accept_at, t=t, lam=lam, reference=reference)
    rep.test_name = "kr_limit"
    row = rep.as_row()
    rep.metadata["values"] = vals
    return Battery([row], rep.accepted, [rep])
