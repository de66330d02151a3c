"""Goodness-of-fit and moment tests used by the verification commands."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import special, stats as sps


class TooFewSamples(ValueError):
    pass


@dataclass
class GofReport:
    test_name: str
    n: int
    statistic: float
    p_value: float
    accept_at: float = 0.01
    metadata: dict = field(default_factory=dict)

    @property
    def accepted(self) -> bool:
        return self.p_value >= self.accept_at

    def as_row(self) -> dict:
        row = {
            "test": self.test_name,
            "n": self.n,
            "statistic": self.statistic,
            "p_value": self.p_value,
            "accept_at": self.accept_at,
            "accepted": int(self.accepted),
        }
        row.update(self.metadata)
        return row


def _require(n: int, floor: int) -> None:
    if n < floor:
        raise TooFewSamples(f"need at least {floor} samples, got {n}")


def kolmogorov_pvalue(n_eff: float, d: float) -> float:
    """Asymptotic Kolmogorov tail probability ``P(sqrt(n) D > sqrt(n) d)``."""
    return float(np.clip(special.kolmogorov(math.sqrt(n_eff) * d), 0.0, 1.0))


def ks_one_sample(samples: Sequence[float], cdf: Callable, accept_at: float = 0.01, **metadata) -> GofReport:
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    _require(n, 20)
    f = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    d = float(max(np.max(i / n - f), np.max(f - (i - 1) / n)))
    return GofReport("ks_one_sample", n, d, kolmogorov_pvalue(n, d), accept_at, dict(metadata))


def ks_two_sample(a: Sequence[float], b: Sequence[float], accept_at: float = 0.01, **metadata) -> GofReport:
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    _require(min(a.size, b.size), 20)
    pts = np.concatenate((a, b))
    fa = np.searchsorted(a, pts, side="right") / a.size
    fb = np.searchsorted(b, pts, side="right") / b.size
    d = float(np.max(np.abs(fa - fb)))
    n_eff = a.size * b.size / (a.size + b.size)
    return GofReport("ks_two_sample", int(a.size + b.size), d, kolmogorov_pvalue(n_eff, d),
                     accept_at, dict(metadata))


def moment_test(samples: Sequence[float], expected: float, order: int = 1,
                accept_at: float = 0.01, **metadata) -> GofReport:
    """z-test of the empirical raw moment of the given order against ``expected``.

    The report's statistic is ``|z|``; the signed value and the estimate go
    into the metadata.
    """
    if order < 1:
        raise ValueError("order must be a positive integer")
    x = np.asarray(samples, dtype=float) ** order
    n = x.size
    _require(n, 100)
    m = float(x.mean())
    se = float(x.std(ddof=1) / math.sqrt(n))
    if se == 0.0:
        z = 0.0 if m == expected else math.copysign(math.inf, m - expected)
    else:
        z = (m - expected) / se
    p = math.erfc(abs(z) / math.sqrt(2.0))
    meta = {"order": order, "estimate": m, "expected": expected, "se": se, "z": z}
    meta.update(metadata)
    return GofReport("moment_test", n, abs(z), p, accept_at, meta)


def binomial_atom_test(n_zero: int, n_total: int, p0: float, accept_at: float = 0.01, **metadata) -> GofReport:
    """Exact two-sided binomial test of ``n_zero`` successes out of ``n_total`` under ``p0``."""
    _require(n_total, 100)
    if not 0 <= n_zero <= n_total:
        raise ValueError("n_zero must lie in [0, n_total]")
    if p0 <= 0.0 or p0 >= 1.0:
        p = 1.0 if n_zero == (0 if p0 <= 0 else n_total) else 0.0
    else:
        p = float(sps.binomtest(int(n_zero), int(n_total), p0).pvalue)
    meta = {"n_zero": n_zero, "fraction": n_zero / n_total, "p0": p0}
    meta.update(metadata)
    return GofReport("binomial_atom_test", n_total, abs(n_zero / n_total - p0), min(p, 1.0), accept_at, meta)


def mixed_law_test(samples: Sequence[float], atom: float, continuous_cdf: Callable,
                   accept_at: float = 0.01, **metadata) -> tuple[GofReport, GofReport]:
    """Binomial test on the zero atom plus KS on the positive part."""
    x = np.asarray(samples, dtype=float)
    zeros = int(np.sum(x == 0))
    binom = binomial_atom_test(zeros, x.size, atom, accept_at, **metadata)
    ks = ks_one_sample(x[x > 0], continuous_cdf, accept_at, **metadata)
    return binom, ks


def within_se(estimate: float, expected: float, se: float, k: float = 3.0) -> bool:
    return abs(estimate - expected) <= k * se
