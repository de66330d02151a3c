"""Regeneration cycles of Brownian motion: first return to 0 after hitting 1.

The path is produced in chunks by the jitted kernel. Consumers receive each
chunk (step left endpoints, step lengths, cycle index of every step) and
reduce it however they need, so nothing has to be stored for long runs.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from regenmc import _kernel
from regenmc.brownian import PathConfig, PathCursor

DEFAULT_MAX_STEPS = 10**9
CHUNK = 1 << 18


class Truncated(Exception):
    """A cycle exceeded its step budget before regenerating."""

    def __init__(self, steps: int, elapsed: float, partial: Optional["CycleSamples"] = None):
        super().__init__(f"cycle not complete after {steps} steps ({elapsed:.6g} time units)")
        self.steps = steps
        self.elapsed = elapsed
        self.partial = partial


class InsufficientTail(ValueError):
    pass


@dataclass
class CycleSamples:
    """Grid of one cycle: times relative to cycle start, values, and step lengths."""

    times: np.ndarray
    values: np.ndarray
    steps: np.ndarray


@dataclass
class Cycle:
    duration: float
    hit_one_at: float
    xi: Optional[float] = None
    samples: Optional[CycleSamples] = None


@dataclass
class Chunk:
    b: np.ndarray
    h: np.ndarray
    cycle: np.ndarray
    # completed cycles in this chunk: index, duration, time of first hit of 1
    done_index: np.ndarray
    done_duration: np.ndarray
    done_hit_one: np.ndarray


@dataclass
class RunSummary:
    t_end: float
    attempts: int
    durations: np.ndarray
    hit_one: np.ndarray
    completed_index: np.ndarray
    truncated_index: list[int] = field(default_factory=list)
    censored_durations: list[float] = field(default_factory=list)

    @property
    def n_completed(self) -> int:
        return int(self.durations.size)


def run_path(
    cursor: PathCursor,
    consumer: Optional[Callable[[Chunk], None]] = None,
    *,
    horizon: float = math.inf,
    n_cycles: Optional[int] = None,
    max_steps: float = DEFAULT_MAX_STEPS,
    chunk_size: int = CHUNK,
) -> RunSummary:
    """Drive ``cursor`` until ``horizon`` time or ``n_cycles`` cycle attempts.

    Truncated cycles are censored: the cursor restarts at 0 and the attempt
    index is recorded in ``truncated_index`` so consumers can drop it.
    """
    if n_cycles is None and not math.isfinite(horizon):
        raise ValueError("need a finite horizon or a cycle count")
    out_b = np.empty(chunk_size)
    out_h = np.empty(chunk_size)
    out_c = np.empty(chunk_size, dtype=np.int64)
    ev_d = np.empty(chunk_size)
    ev_h1 = np.empty(chunk_size)
    target = math.inf if n_cycles is None else cursor.cycles_completed + n_cycles
    start_attempts = cursor.cycles_completed
    durations: list[np.ndarray] = []
    hit_one: list[np.ndarray] = []
    indices: list[np.ndarray] = []
    summary = RunSummary(0.0, 0, np.empty(0), np.empty(0), np.empty(0, dtype=np.int64))
    while True:
        first = cursor.cycles_completed
        n, n_ev, reason = cursor.advance(
            out_b, out_h, out_c, ev_d, ev_h1,
            horizon=horizon, cycle_target=target, max_steps=max_steps,
        )
        idx = np.arange(first, first + n_ev, dtype=np.int64)
        if n_ev:
            durations.append(ev_d[:n_ev].copy())
            hit_one.append(ev_h1[:n_ev].copy())
            indices.append(idx)
        if consumer is not None and (n or n_ev):
            consumer(Chunk(out_b[:n], out_h[:n], out_c[:n], idx, ev_d[:n_ev], ev_h1[:n_ev]))
        if reason == _kernel.TRUNCATED:
            summary.truncated_index.append(cursor.cycles_completed)
            summary.censored_durations.append(cursor.t - float(cursor.state[_kernel.CYCLE_START]))
            cursor.restart()
            cursor.state[_kernel.CYCLES] += 1
            continue
        if reason != _kernel.FULL:
            break
    summary.t_end = cursor.t
    summary.attempts = cursor.cycles_completed - start_attempts
    if durations:
        summary.durations = np.concatenate(durations)
        summary.hit_one = np.concatenate(hit_one)
        summary.completed_index = np.concatenate(indices)
    return summary


def next_cycle(
    cursor: PathCursor, retain_samples: bool = False, max_steps: int = DEFAULT_MAX_STEPS
) -> Cycle:
    """Simulate one cycle starting from the cursor's current regeneration state.

    Raises :class:`Truncated` when ``max_steps`` elapse first; the cursor is
    then left mid-cycle, so calling again with a larger budget resumes the
    same cycle and ``cursor.restart()`` discards it.
    """
    parts: list[tuple[np.ndarray, np.ndarray]] = []
    out_b = np.empty(CHUNK)
    out_h = np.empty(CHUNK)
    out_c = np.empty(CHUNK, dtype=np.int64)
    ev_d = np.empty(1)
    ev_h1 = np.empty(1)
    target = cursor.cycles_completed + 1
    while True:
        n, _, reason = cursor.advance(
            out_b, out_h, out_c, ev_d, ev_h1, cycle_target=target, max_steps=max_steps
        )
        if retain_samples:
            parts.append((out_b[:n].copy(), out_h[:n].copy()))
        if reason == _kernel.CYCLE_TARGET:
            break
        if reason == _kernel.TRUNCATED:
            elapsed = cursor.t - float(cursor.state[_kernel.CYCLE_START])
            samples = _assemble(parts) if retain_samples else None
            raise Truncated(int(cursor.state[_kernel.STEPS_IN_CYCLE]), elapsed, samples)
    samples = _assemble(parts) if retain_samples else None
    return Cycle(duration=float(ev_d[0]), hit_one_at=float(ev_h1[0]), samples=samples)


def _assemble(parts: Sequence[tuple[np.ndarray, np.ndarray]]) -> CycleSamples:
    values = np.concatenate([p[0] for p in parts]) if parts else np.empty(0)
    steps = np.concatenate([p[1] for p in parts]) if parts else np.empty(0)
    times = np.concatenate(([0.0], np.cumsum(steps)[:-1])) if steps.size else np.empty(0)
    return CycleSamples(times=times, values=values, steps=steps)


def run_streams(fn: Callable[[int], object], streams: int) -> list:
    """Run ``fn(stream_id)`` for each stream, returning results in stream order.

    The kernel releases the GIL, so threads give real parallelism.
    """
    if streams <= 1:
        return [fn(0)]
    with ThreadPoolExecutor(max_workers=min(streams, os.cpu_count() or 1)) as pool:
        return list(pool.map(fn, range(streams)))


def sample_durations(
    n: int,
    config: PathConfig,
    *,
    streams: int = 1,
    max_steps: float = DEFAULT_MAX_STEPS,
) -> tuple[np.ndarray, np.ndarray]:
    """Simulate ``n`` cycle attempts split over ``streams`` substreams.

    Returns ``(durations, censored)``: completed durations and the elapsed
    time of truncated attempts, each concatenated in stream order.
    """
    shares = [n // streams + (1 if s < n % streams else 0) for s in range(streams)]

    def work(s: int) -> RunSummary:
        cfg = PathConfig(dt=config.dt, seed=config.seed, stream_id=config.stream_id + s,
                         kappa=config.kappa, zones=config.zones)
        return run_path(PathCursor(cfg), n_cycles=shares[s], max_steps=max_steps)

    results = run_streams(work, streams)
    durations = np.concatenate([r.durations for r in results])
    censored = np.array([c for r in results for c in r.censored_durations])
    return durations, censored


@dataclass
class RenewalRecord:
    durations: np.ndarray
    t_horizon: float

    @property
    def n_of_t(self) -> int:
        return renewal_count(self.durations, self.t_horizon)


def renewal_count(durations: Iterable[float], t: float) -> int:
    """Number of renewals ``k`` with ``T_k <= t`` where ``T_k`` are partial sums."""
    d = np.asarray(list(durations) if not isinstance(durations, np.ndarray) else durations, dtype=float)
    if np.any(d <= 0):
        raise ValueError("durations must be positive")
    if t < 0:
        raise ValueError("t must be >= 0")
    return int(np.searchsorted(np.cumsum(d), t, side="right"))


def default_tail_grid(durations: np.ndarray, lo_q: float = 0.9, hi_q: float = 0.999,
                      points: int = 20) -> np.ndarray:
    lo, hi = np.quantile(durations, [lo_q, hi_q])
    return np.geomspace(lo, hi, points)


def estimate_tail_exponent(
    durations: Sequence[float], y_grid: Optional[Sequence[float]] = None
) -> tuple[float, float]:
    """Least-squares fit of log empirical survival against log y.

    Returns ``(slope, intercept)``; a survival ``C / sqrt(y)`` gives slope -1/2.
    """
    d = np.sort(np.asarray(durations, dtype=float))
    if d.size < 1000:
        raise InsufficientTail(f"need at least 1000 durations, got {d.size}")
    y = default_tail_grid(d) if y_grid is None else np.asarray(y_grid, dtype=float)
    exceed = d.size - np.searchsorted(d, y, side="right")
    if exceed.min() < 50:
        raise InsufficientTail(
            f"only {int(exceed.min())} exceedances at y={y[np.argmin(exceed)]:.4g} (need 50)"
        )
    slope, intercept = np.polyfit(np.log(y), np.log(exceed / d.size), 1)
    return float(slope), float(intercept)


def write_durations_csv(path, durations: Iterable[float]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["duration"])
        for v in durations:
            w.writerow([repr(float(v))])


def read_durations_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["duration"]:
        raise ValueError(f"{path}: expected a single 'duration' column")
    return np.array([float(r[0]) for r in rows[1:]])
