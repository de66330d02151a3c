"""Jitted inner loop for Brownian path simulation with regeneration tracking."""

from __future__ import annotations

import math

import numba as nb
import numpy as np

# state vector layout
T, B, PHASE, CYCLE_START, HIT_ONE_AT, STEPS_IN_CYCLE, CYCLES = range(7)
STATE_SIZE = 7

# stop reasons
FULL, HORIZON, CYCLE_TARGET, TRUNCATED = 0, 1, 2, 3

# below this the bridge crossing Bernoulli draw is skipped
_P_NEGLIGIBLE = 1e-15


@nb.njit(cache=True, nogil=True)
def bridge_prob(b0, b1, level, h):
    if (b0 - level) * (b1 - level) <= 0.0:
        return 1.0
    return math.exp(-2.0 * (level - b0) * (level - b1) / h)


@nb.njit(cache=True, nogil=True)
def _distance_to_zones(b, lo, hi):
    d = np.inf
    for k in range(lo.shape[0]):
        if b < lo[k]:
            dk = lo[k] - b
        elif b > hi[k]:
            dk = b - hi[k]
        else:
            return 0.0
        if dk < d:
            d = dk
    return d


@nb.njit(cache=True, nogil=True)
def advance(
    rng,
    state,
    dt,
    kappa,
    zone_lo,
    zone_hi,
    horizon,
    cycle_target,
    max_steps,
    out_b,
    out_h,
    out_cycle,
    ev_duration,
    ev_hit_one,
):
    """Simulate until the output buffer fills or a stop condition triggers.

    Each recorded step stores its left endpoint, its length and the index of
    the cycle it belongs to. Completed cycles are appended to the event
    arrays. Returns ``(n_steps, n_events, reason)``.
    """
    cap = out_b.shape[0]
    n = 0
    n_ev = 0
    t = state[T]
    b = state[B]
    phase = state[PHASE]
    cycle_start = state[CYCLE_START]
    hit_one_at = state[HIT_ONE_AT]
    steps_in_cycle = state[STEPS_IN_CYCLE]
    cycles = state[CYCLES]
    sqrt_dt = math.sqrt(dt)
    reason = FULL
    while True:
        if n >= cap:
            reason = FULL
            break
        if t >= horizon:
            reason = HORIZON
            break
        if cycles >= cycle_target:
            reason = CYCLE_TARGET
            break
        if steps_in_cycle >= max_steps:
            reason = TRUNCATED
            break
        level = 1.0 if phase == 0.0 else 0.0
        if kappa > 0.0:
            d = abs(b - level)
            dz = _distance_to_zones(b, zone_lo, zone_hi)
            if dz < d:
                d = dz
            h = kappa * d
            h = h * h
            if h < dt:
                h = dt
        else:
            h = dt
        remaining = horizon - t
        if h > remaining:
            h = remaining
        if h == dt:
            b1 = b + sqrt_dt * rng.standard_normal()
        else:
            b1 = b + math.sqrt(h) * rng.standard_normal()
        out_b[n] = b
        out_h[n] = h
        out_cycle[n] = np.int64(cycles)
        n += 1
        t += h
        steps_in_cycle += 1.0
        if (b - level) * (b1 - level) <= 0.0:
            crossed = True
        else:
            p = math.exp(-2.0 * (level - b) * (level - b1) / h)
            crossed = p > _P_NEGLIGIBLE and rng.random() < p
        b = b1
        if crossed:
            if phase == 0.0:
                phase = 1.0
                hit_one_at = t - cycle_start
            else:
                ev_duration[n_ev] = t - cycle_start
                ev_hit_one[n_ev] = hit_one_at
                n_ev += 1
                cycles += 1.0
                b = 0.0
                phase = 0.0
                cycle_start = t
                hit_one_at = 0.0
                steps_in_cycle = 0.0
    state[T] = t
    state[B] = b
    state[PHASE] = phase
    state[CYCLE_START] = cycle_start
    state[HIT_ONE_AT] = hit_one_at
    state[STEPS_IN_CYCLE] = steps_in_cycle
    state[CYCLES] = cycles
    return n, n_ev, reason


@nb.njit(cache=True, nogil=True)
def fixed_steps(rng, n, dt):
    """Return ``n`` raw N(0, dt) increments."""
    out = np.empty(n)
    s = math.sqrt(dt)
    for i in range(n):
        out[i] = s * rng.standard_normal()
    return out
