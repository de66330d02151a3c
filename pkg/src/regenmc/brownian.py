"""Discretized standard Brownian motion with reproducible substreams.

Increments are exact N(0, h) draws. The step length ``h`` is either the
fixed ``dt`` or, when ``kappa > 0``, a state-dependent length
``max(dt, (kappa * d)**2)`` where ``d`` is the distance from the current
value to the nearest point of interest (the level sought by the
regeneration logic, or a refinement zone). Choosing the step from the
current value keeps the grid values an exact sample of Brownian motion;
only path functionals between grid points are approximated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from regenmc import _kernel

DEFAULT_DT = 1e-4
DEFAULT_KAPPA = 0.2


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministically derive a 64-bit seed from ``seed`` and integer keys."""
    ss = np.random.SeedSequence([int(seed), *map(int, keys)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def make_rng(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Counter-based Philox generator for substream ``stream_id`` of ``seed``.

    Substreams come from ``SeedSequence`` spawn keys, so distinct stream ids
    are independent and need no warm-up.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream_id),))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class PathConfig:
    dt: float = DEFAULT_DT
    seed: int = 0
    stream_id: int = 0
    kappa: float = DEFAULT_KAPPA
    # intervals (lo, hi) where the step is held at dt
    zones: tuple[tuple[float, float], ...] = field(default=())

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if self.stream_id < 0:
            raise ValueError("stream_id must be non-negative")
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")
        for lo, hi in self.zones:
            if not lo <= hi:
                raise ValueError(f"bad zone ({lo}, {hi})")


class PathCursor:
    """Incremental state of one discretized Brownian trajectory.

    A cursor owns its generator and must not be shared between threads.
    """

    def __init__(self, config: PathConfig):
        self.config = config
        self.rng = make_rng(config.seed, config.stream_id)
        self.state = np.zeros(_kernel.STATE_SIZE)
        self._zone_lo = np.array([z[0] for z in config.zones], dtype=float)
        self._zone_hi = np.array([z[1] for z in config.zones], dtype=float)

    @property
    def t(self) -> float:
        return float(self.state[_kernel.T])

    @property
    def b(self) -> float:
        return float(self.state[_kernel.B])

    @property
    def cycles_completed(self) -> int:
        return int(self.state[_kernel.CYCLES])

    def step(self) -> tuple[float, float]:
        """Advance by exactly ``dt`` and return the new ``(t, b)``.

        This is the raw fixed-step primitive; it does not track regeneration.
        """
        dt = self.config.dt
        self.state[_kernel.B] += math.sqrt(dt) * self.rng.standard_normal()
        self.state[_kernel.T] += dt
        return self.t, self.b

    def increments(self, n: int) -> np.ndarray:
        """Draw ``n`` fixed-step increments, advancing the cursor."""
        inc = _kernel.fixed_steps(self.rng, int(n), self.config.dt)
        self.state[_kernel.B] += inc.sum()
        self.state[_kernel.T] += n * self.config.dt
        return inc

    def restart(self) -> None:
        """Discard any partial cycle and restart the path at 0 at the current time."""
        s = self.state
        s[_kernel.B] = 0.0
        s[_kernel.PHASE] = 0.0
        s[_kernel.CYCLE_START] = s[_kernel.T]
        s[_kernel.HIT_ONE_AT] = 0.0
        s[_kernel.STEPS_IN_CYCLE] = 0.0

    def advance(self, out_b, out_h, out_cycle, ev_duration, ev_hit_one,
                *, horizon=math.inf, cycle_target=math.inf, max_steps=math.inf):
        cfg = self.config
        return _kernel.advance(
            self.rng, self.state, cfg.dt, cfg.kappa, self._zone_lo, self._zone_hi,
            float(horizon), float(cycle_target), float(max_steps),
            out_b, out_h, out_cycle, ev_duration, ev_hit_one,
        )


def bridge_crossing_prob(b0: float, b1: float, level: float, dt: float) -> float:
    """Probability that a Brownian bridge from ``b0`` to ``b1`` over ``dt`` touches ``level``."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    if (b0 - level) * (b1 - level) <= 0.0:
        return 1.0
    return math.exp(-2.0 * (level - b0) * (level - b1) / dt)
