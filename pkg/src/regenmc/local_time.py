"""Local time of Brownian motion at the regeneration time T.

Three routes to the law of ``L(T, x)``:

* path-based occupation densities from simulated cycles,
* the closed-form law (an atom at 0 plus one or two exponential parts),
* the process law on ``[0, 1]`` as a sum of two squared Bessel(2) processes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from regenmc.brownian import PathConfig, PathCursor
from regenmc.regeneration import Chunk, Cycle, run_path, DEFAULT_MAX_STEPS

ABOVE_ONE = "above_one"
UNIT_INTERVAL = "unit_interval"
BELOW_ZERO = "below_zero"

DEFAULT_EPSILON = 1e-3
VERIFY_DT = 1e-5

_EQUAL_SCALES = 1e-9


class NoSamples(ValueError):
    pass


class GridOutOfRange(ValueError):
    pass


@dataclass(frozen=True)
class LocalTimeLaw:
    """Law of ``L(T, x)``: ``atom_at_zero`` mass at 0, else a sum of exponentials.

    ``scale_a`` and ``scale_b`` are the means of the independent exponential
    parts (a scale of 0 means the part is absent).
    """

    x: float
    regime: str
    atom_at_zero: float
    scale_a: float
    scale_b: float = 0.0

    @property
    def scales(self) -> tuple[float, ...]:
        return tuple(s for s in (self.scale_a, self.scale_b) if s > 0)


@dataclass(frozen=True)
class OccupationEstimate:
    x: float
    epsilon: float
    value: float


def hitting_prob(x: float) -> float:
    """Probability that level ``x`` is visited before T."""
    if x > 1:
        return 1.0 / x
    if x >= 0:
        return 1.0
    return 1.0 / (1.0 - x)


def exact_law(x: float) -> LocalTimeLaw:
    x = float(x)
    if x > 1:
        return LocalTimeLaw(x, ABOVE_ONE, 1.0 - 1.0 / x, 2.0 * x)
    if x >= 0:
        return LocalTimeLaw(x, UNIT_INTERVAL, 0.0, 2.0 * x, 2.0 * (1.0 - x))
    return LocalTimeLaw(x, BELOW_ZERO, 1.0 - 1.0 / (1.0 - x), 2.0 * (1.0 - x))


def sample_exact(law: LocalTimeLaw, rng: np.random.Generator, size=None):
    """Draw from ``law``; returns a float, or an array when ``size`` is given."""
    n = 1 if size is None else int(np.prod(size))
    out = np.zeros(n)
    for s in law.scales:
        out += rng.exponential(s, n)
    if law.atom_at_zero > 0:
        out[rng.random(n) < law.atom_at_zero] = 0.0
    if size is None:
        return float(out[0])
    return out.reshape(size)


def continuous_cdf(law: LocalTimeLaw, ell):
    """CDF of the non-atomic part of ``law`` (the law conditioned on being positive)."""
    ell = np.maximum(np.asarray(ell, dtype=float), 0.0)
    scales = law.scales
    if len(scales) == 1:
        return -np.expm1(-ell / scales[0])
    sa, sb = scales
    if abs(sa - sb) < _EQUAL_SCALES:
        s = 0.5 * (sa + sb)
        return 1.0 - np.exp(-ell / s) * (1.0 + ell / s)
    with np.errstate(over="ignore"):
        return 1.0 - (sa * np.exp(-ell / sa) - sb * np.exp(-ell / sb)) / (sa - sb)


def analytic_cdf(law: LocalTimeLaw, ell):
    """``P(L(T, x) <= ell)``; accepts scalars or arrays."""
    ell_arr = np.asarray(ell, dtype=float)
    cdf = law.atom_at_zero + (1.0 - law.atom_at_zero) * continuous_cdf(law, ell_arr)
    cdf = np.where(ell_arr < 0, 0.0, np.clip(cdf, 0.0, 1.0))
    return float(cdf) if cdf.ndim == 0 else cdf


def mean(x: float) -> float:
    return 2.0


def second_moment(x: float) -> float:
    if x > 1:
        return 8.0 * x
    if x >= 0:
        return 8.0 * (x * x - x + 1.0)
    return 8.0 * (1.0 - x)


def mgf_threshold(x: float) -> float:
    """Supremum of the ``theta`` for which the MGF of ``L(T, x)`` is finite."""
    return 1.0 / max(exact_law(x).scales)


def mgf(x: float, theta: float) -> float:
    """``E exp(theta L(T, x))``; ``math.inf`` when the expectation diverges."""
    law = exact_law(x)
    if theta >= mgf_threshold(x):
        return math.inf
    prod = 1.0
    for s in law.scales:
        prod /= 1.0 - theta * s
    return law.atom_at_zero + (1.0 - law.atom_at_zero) * prod


def occupation_local_time(cycle: Cycle, x: float, epsilon: float = DEFAULT_EPSILON) -> OccupationEstimate:
    """Time the cycle spends within ``epsilon`` of ``x``, divided by ``2 epsilon``."""
    if cycle.samples is None:
        raise NoSamples("cycle was generated without retained samples")
    if not epsilon > 0:
        raise ValueError("epsilon must be > 0")
    s = cycle.samples
    inside = np.abs(s.values - x) < epsilon
    return OccupationEstimate(x, epsilon, float(s.steps[inside].sum() / (2.0 * epsilon)))


def band_zones(levels: Sequence[float], epsilon: float) -> tuple[tuple[float, float], ...]:
    return tuple((x - epsilon, x + epsilon) for x in levels)


def path_local_times(
    levels: Sequence[float],
    n_cycles: int,
    *,
    epsilon: float = DEFAULT_EPSILON,
    dt: float = VERIFY_DT,
    seed: int = 0,
    stream_id: int = 0,
    kappa: float | None = None,
    max_steps: float = DEFAULT_MAX_STEPS,
) -> np.ndarray:
    """Occupation-density local times at ``levels`` for ``n_cycles`` simulated cycles.

    Returns an array of shape ``(n_completed, len(levels))``. The step is held
    at ``dt`` inside every band ``(x - epsilon, x + epsilon)``. A cycle whose
    grid never enters a band has value exactly 0 at that level. Truncated
    cycles are dropped.
    """
    levels = np.asarray(levels, dtype=float)
    kw = {} if kappa is None else {"kappa": kappa}
    cfg = PathConfig(dt=dt, seed=seed, stream_id=stream_id, zones=band_zones(levels, epsilon), **kw)
    cursor = PathCursor(cfg)
    acc = np.zeros((n_cycles, levels.size))

    order = np.argsort(levels)
    edges = np.column_stack((levels[order] - epsilon, levels[order] + epsilon)).ravel()
    disjoint = bool(np.all(np.diff(edges) > 0))

    def consume(chunk: Chunk) -> None:
        if disjoint:
            # one pass: odd slots of the sorted edge list are band interiors
            pos = np.searchsorted(edges, chunk.b, side="right")
            sel = (pos & 1).astype(bool) & (chunk.b != edges[np.maximum(pos - 1, 0)])
            if sel.any():
                key = chunk.cycle[sel] * levels.size + order[pos[sel] // 2]
                acc.ravel()[:] += np.bincount(key, weights=chunk.h[sel], minlength=acc.size)
            return
        for k, x in enumerate(levels):
            inside = np.abs(chunk.b - x) < epsilon
            if inside.any():
                acc[:, k] += np.bincount(chunk.cycle[inside], weights=chunk.h[inside], minlength=n_cycles)

    summary = run_path(cursor, consume, n_cycles=n_cycles, max_steps=max_steps)
    return acc[summary.completed_index] / (2.0 * epsilon)


def sample_process_unit_interval(grid: Sequence[float], rng: np.random.Generator, size=None) -> np.ndarray:
    """Draw ``H1(x) + H2(1 - x)`` on ``grid`` for independent squared Bessel(2) processes.

    Each ``H`` is the sum of squares of two independent Brownian motions,
    sampled exactly at the needed times. Returns shape ``(len(grid),)`` or
    ``(size, len(grid))``.
    """
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or g.size == 0:
        raise GridOutOfRange("grid must be a non-empty 1-d sequence")
    if g.min() < 0 or g.max() > 1:
        raise GridOutOfRange(f"grid points must lie in [0, 1], got [{g.min()}, {g.max()}]")
    if np.any(np.diff(g) <= 0):
        raise GridOutOfRange("grid must be strictly increasing")
    n = 1 if size is None else int(size)
    forward = _squared_bessel2(g, rng, n)
    backward = _squared_bessel2((1.0 - g)[::-1], rng, n)[:, ::-1]
    out = forward + backward
    return out[0] if size is None else out


def _squared_bessel2(times: np.ndarray, rng: np.random.Generator, n: int) -> np.ndarray:
    dt = np.diff(np.concatenate(([0.0], times)))
    paths = np.cumsum(rng.standard_normal((2, n, times.size)) * np.sqrt(dt), axis=2)
    return (paths**2).sum(axis=0)


def process_covariance(grid: Sequence[float]) -> np.ndarray:
    """Covariance ``4 min(x, y)^2 + 4 min(1 - x, 1 - y)^2`` of the unit-interval process."""
    g = np.asarray(grid, dtype=float)
    lo = np.minimum.outer(g, g)
    hi = np.minimum.outer(1 - g, 1 - g)
    return 4.0 * lo**2 + 4.0 * hi**2
